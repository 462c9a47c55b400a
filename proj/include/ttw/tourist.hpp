#pragma once

#include <string_view>
#include <vector>

#include "ttw/diffcore.hpp"
#include "ttw/gridworld.hpp"

namespace ttw {

enum class Channel { Continuous, Discrete };

std::string_view to_string(Channel c);
Channel parse_channel(std::string_view name);

struct TouristConfig {
  int embed_dim = 64;
  int max_T = 3;
  Channel channel = Channel::Continuous;
};

namespace tourist_param {
inline constexpr const char* kLandmarkEmbed = "tourist.landmark_embed";  // [10 x L]
inline constexpr const char* kActionEmbed = "tourist.action_embed";      // [4 x L]
inline constexpr const char* kObsGates = "tourist.obs_gates";            // [(max_T + 1) x L]
inline constexpr const char* kActGates = "tourist.act_gates";            // [max_T x L]
inline constexpr const char* kBaselineW = "tourist.baseline.W";          // [1 x 2L]
inline constexpr const char* kBaselineB = "tourist.baseline.b";          // [1]
}  // namespace tourist_param

void init_tourist(diff::ParamStore& store, const TouristConfig& cfg, Rng& rng);

/// Tourist-to-guide payload recorded on a tape. For the discrete channel `obs`/`act`
/// are constant bit vectors and `h_obs`/`h_act` hold the Bernoulli logits.
struct Message {
  Channel kind = Channel::Continuous;
  int T = 0;
  diff::Var obs;
  diff::Var act;
  diff::Var log_prob;
  diff::Var h_obs;
  diff::Var h_act;

  /// [obs; act] as plain values.
  std::vector<double> concatenated() const;
};

/// o_t = sum of landmark embeddings of observation t; result [T+1 x L].
diff::Var encode_observations(diff::Var table, const std::vector<Observation>& observations);

Message continuous_message(diff::Tape& tape, diff::ParamStore& store,
                           const std::vector<Observation>& observations,
                           const std::vector<AgnosticAction>& actions);

Message discrete_message(diff::Tape& tape, diff::ParamStore& store,
                         const std::vector<Observation>& observations,
                         const std::vector<AgnosticAction>& actions, Rng& rng);

/// b = W_base [h_obs; h_act] + b_base. The activations enter as constants, so the
/// baseline loss only trains the baseline head.
diff::Var baseline_value(diff::Tape& tape, diff::ParamStore& store, const Message& message);

}  // namespace ttw
