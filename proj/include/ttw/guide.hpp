#pragma once

#include <string>
#include <vector>

#include "ttw/diffcore.hpp"
#include "ttw/gridworld.hpp"
#include "ttw/tourist.hpp"

namespace ttw {

struct GuideConfig {
  int embed_dim = 64;
  int max_T = 3;
  bool masc = true;
  Channel channel = Channel::Continuous;
};

namespace guide_param {
inline constexpr const char* kLandmarkEmbed = "guide.landmark_embed";  // [10 x L]
inline constexpr const char* kObsW = "guide.obs.W";                    // [L x L], discrete only
inline constexpr const char* kObsB = "guide.obs.b";                    // [L]
inline constexpr const char* kMascW = "guide.masc.W";                  // [9 x L]
inline constexpr const char* kMascB = "guide.masc.b";                  // [9]
inline constexpr const char* kConv = "guide.conv.W";                   // [3 x 3 x L x L]
inline constexpr const char* kPredGates = "guide.pred_gates";          // [(max_T + 1) x L]
std::string act_W(int t);  // [L x L]
std::string act_b(int t);  // [L]
}  // namespace guide_param

void init_guide(diff::ParamStore& store, const GuideConfig& cfg, Rng& rng);

struct DecodedMessage {
  diff::Var e;
  std::vector<diff::Var> actions;
};

DecodedMessage decode_continuous(diff::Tape& tape, diff::ParamStore& store, const Message& m);
DecodedMessage decode_discrete(diff::Tape& tape, diff::ParamStore& store, const Message& m);

/// U_0: per-cell sum of guide landmark embeddings, [G1 x G2 x L].
diff::Var map_embedding(diff::Tape& tape, diff::ParamStore& store, const GridMap& map);

/// Phi = row-major 3x3 reshape of softmax(W_masc a + b_masc).
diff::Var masc_mask(diff::Tape& tape, diff::ParamStore& store, diff::Var action);
diff::Var masc_step(diff::Var U, diff::Var mask, diff::Var kernel);
diff::Var no_masc_step(diff::Var U, diff::Var kernel);

/// Softmax over cells of e . (sum_t sigmoid(g_t) * U_t).
diff::Var predict_location(diff::Tape& tape, diff::ParamStore& store, diff::Var e,
                           const std::vector<diff::Var>& maps);

struct GuideOutput {
  diff::Var probs;  // [G1 * G2], cell index x * G2 + y
  std::vector<diff::Var> masks;  // one [3 x 3] per action when MASC is on
};

GuideOutput guide_forward(diff::Tape& tape, diff::ParamStore& store, const Message& m,
                          const GridMap& map, bool masc);

}  // namespace ttw
