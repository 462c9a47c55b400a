#include "ttw/guide.hpp"

#include <cmath>

namespace ttw {

using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace guide_param {
std::string act_W(int t) { return "guide.act.W." + std::to_string(t); }
std::string act_b(int t) { return "guide.act.b." + std::to_string(t); }
}  // namespace guide_param

namespace {

Tensor uniform_tensor(diff::Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(diff::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

std::vector<Var> decode_actions(Tape& tape, diff::ParamStore& store, const Message& m) {
  std::vector<Var> actions;
  for (int t = 0; t < m.T; ++t) {
    const std::string w = guide_param::act_W(t);
    if (!store.contains(w)) {
      throw std::invalid_argument("guide: T = " + std::to_string(m.T) +
                                  " exceeds the action extractor bank");
    }
    actions.push_back(diff::linear(tape.param(store, w), tape.param(store, guide_param::act_b(t)), m.act));
  }
  return actions;
}

}  // namespace

void init_guide(diff::ParamStore& store, const GuideConfig& cfg, Rng& rng) {
  const int L = cfg.embed_dim;
  if (L <= 0 || cfg.max_T < 0) throw std::invalid_argument("guide: invalid dimensions");
  const double lin = 1.0 / std::sqrt(static_cast<double>(L));
  // Small against the tourist's scale so initial scores, and predictions, are near uniform.
  store.add(guide_param::kLandmarkEmbed, normal_tensor({kNumSymbols, L}, 0.03, rng));
  for (int t = 0; t < cfg.max_T; ++t) {
    store.add(guide_param::act_W(t), uniform_tensor({L, L}, lin, rng));
    store.add(guide_param::act_b(t), uniform_tensor({L}, lin, rng));
  }
  if (cfg.channel == Channel::Discrete) {
    store.add(guide_param::kObsW, uniform_tensor({L, L}, lin, rng));
    store.add(guide_param::kObsB, uniform_tensor({L}, lin, rng));
  }
  if (cfg.masc) {
    // Zero head: every initial mask is uniform.
    store.add(guide_param::kMascW, Tensor({9, L}));
    store.add(guide_param::kMascB, Tensor({9}));
  }
  store.add(guide_param::kConv, uniform_tensor({3, 3, L, L}, 1.0 / std::sqrt(9.0 * L), rng));
  store.add(guide_param::kPredGates, normal_tensor({cfg.max_T + 1, L}, 1.0, rng));
}

DecodedMessage decode_continuous(Tape& tape, diff::ParamStore& store, const Message& m) {
  if (m.kind != Channel::Continuous) throw std::invalid_argument("decode_continuous: discrete message");
  return {m.obs, decode_actions(tape, store, m)};
}

DecodedMessage decode_discrete(Tape& tape, diff::ParamStore& store, const Message& m) {
  if (m.kind != Channel::Discrete) throw std::invalid_argument("decode_discrete: continuous message");
  Var e = diff::linear(tape.param(store, guide_param::kObsW), tape.param(store, guide_param::kObsB), m.obs);
  return {e, decode_actions(tape, store, m)};
}

Var map_embedding(Tape& tape, diff::ParamStore& store, const GridMap& map) {
  Var table = tape.param(store, guide_param::kLandmarkEmbed);
  std::vector<std::vector<int>> bags;
  bags.reserve(static_cast<std::size_t>(map.cells()));
  for (int x = 0; x < map.width(); ++x) {
    for (int y = 0; y < map.height(); ++y) bags.push_back(observe({x, y}, map));
  }
  return diff::reshape(diff::embed_bag(table, bags), {map.width(), map.height(), table.value().dim(1)});
}

Var masc_mask(Tape& tape, diff::ParamStore& store, Var action) {
  Var z = diff::linear(tape.param(store, guide_param::kMascW), tape.param(store, guide_param::kMascB), action);
  return diff::reshape(diff::softmax(z), {3, 3});
}

Var masc_step(Var U, Var mask, Var kernel) { return diff::masked_conv2d_3x3(U, mask, kernel); }

Var no_masc_step(Var U, Var kernel) { return diff::conv2d_3x3(U, kernel); }

Var predict_location(Tape& tape, diff::ParamStore& store, Var e, const std::vector<Var>& maps) {
  Var gates = tape.param(store, guide_param::kPredGates);
  if (static_cast<int>(maps.size()) > gates.value().dim(0)) {
    throw std::invalid_argument("predict_location: more map steps than prediction gates");
  }
  Var gate_logits = diff::sigmoid(diff::rows(gates, 0, static_cast<int>(maps.size())));
  std::vector<Var> gated;
  for (std::size_t t = 0; t < maps.size(); ++t) {
    gated.push_back(diff::scale_cells(maps[t], diff::row(gate_logits, static_cast<int>(t))));
  }
  Var u = gated.size() == 1 ? gated.front() : diff::sum_list(gated);
  return diff::softmax(diff::cell_dot(u, e));
}

GuideOutput guide_forward(Tape& tape, diff::ParamStore& store, const Message& m, const GridMap& map,
                          bool masc) {
  DecodedMessage decoded = m.kind == Channel::Continuous ? decode_continuous(tape, store, m)
                                                         : decode_discrete(tape, store, m);
  Var kernel = tape.param(store, guide_param::kConv);
  GuideOutput out;
  std::vector<Var> maps{map_embedding(tape, store, map)};
  for (int t = 0; t < m.T; ++t) {
    if (masc) {
      Var mask = masc_mask(tape, store, decoded.actions[static_cast<std::size_t>(t)]);
      out.masks.push_back(mask);
      maps.push_back(masc_step(maps.back(), mask, kernel));
    } else {
      maps.push_back(no_masc_step(maps.back(), kernel));
    }
  }
  out.probs = predict_location(tape, store, decoded.e, maps);
  return out;
}

}  // namespace ttw
