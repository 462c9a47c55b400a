#include "ttw/tourist.hpp"

#include <cmath>

namespace ttw {

using diff::Tape;
using diff::Tensor;
using diff::Var;

std::string_view to_string(Channel c) { return c == Channel::Continuous ? "continuous" : "discrete"; }

Channel parse_channel(std::string_view name) {
  if (name == "continuous") return Channel::Continuous;
  if (name == "discrete") return Channel::Discrete;
  throw std::invalid_argument("unknown channel: " + std::string(name));
}

namespace {

Tensor normal_tensor(diff::Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, stddev);
  return t;
}

void check_lengths(const diff::ParamStore& store, const std::vector<Observation>& observations,
                   const std::vector<AgnosticAction>& actions) {
  if (observations.size() != actions.size() + 1) {
    throw std::invalid_argument("tourist: expected |Z| = |A| + 1, got |Z| = " +
                                std::to_string(observations.size()) +
                                ", |A| = " + std::to_string(actions.size()));
  }
  const int max_obs = store.at(tourist_param::kObsGates).value.dim(0);
  if (static_cast<int>(observations.size()) > max_obs) {
    throw std::invalid_argument("tourist: T = " + std::to_string(actions.size()) +
                                " exceeds the gate bank (max T = " + std::to_string(max_obs - 1) + ")");
  }
}

struct Activations {
  Var h_obs;
  Var h_act;
};

// Positionally gated sums over observation and action embeddings.
Activations gated_sums(Tape& tape, diff::ParamStore& store,
                       const std::vector<Observation>& observations,
                       const std::vector<AgnosticAction>& actions) {
  check_lengths(store, observations, actions);
  const int n_obs = static_cast<int>(observations.size());
  const int T = static_cast<int>(actions.size());
  Var landmarks = tape.param(store, tourist_param::kLandmarkEmbed);
  const int L = landmarks.value().dim(1);

  Var O = encode_observations(landmarks, observations);
  Var obs_gates = diff::sigmoid(diff::rows(tape.param(store, tourist_param::kObsGates), 0, n_obs));
  Activations out;
  out.h_obs = diff::sum_rows(diff::hadamard(obs_gates, O));

  if (T == 0) {
    out.h_act = tape.constant(Tensor({L}));
    return out;
  }
  std::vector<std::vector<int>> action_ids;
  for (AgnosticAction a : actions) action_ids.push_back({static_cast<int>(a)});
  Var A = diff::embed_bag(tape.param(store, tourist_param::kActionEmbed), action_ids);
  Var act_gates = diff::sigmoid(diff::rows(tape.param(store, tourist_param::kActGates), 0, T));
  out.h_act = diff::sum_rows(diff::hadamard(act_gates, A));
  return out;
}

}  // namespace

std::vector<double> Message::concatenated() const {
  std::vector<double> out(obs.value().values().begin(), obs.value().values().end());
  out.insert(out.end(), act.value().values().begin(), act.value().values().end());
  return out;
}

void init_tourist(diff::ParamStore& store, const TouristConfig& cfg, Rng& rng) {
  const int L = cfg.embed_dim;
  if (L <= 0 || cfg.max_T < 0) throw std::invalid_argument("tourist: invalid dimensions");
  // Wide enough that initial bit probabilities sit far from 1/2.
  store.add(tourist_param::kLandmarkEmbed, normal_tensor({kNumSymbols, L}, 3.0, rng));
  store.add(tourist_param::kActionEmbed, normal_tensor({kNumAgnosticActions, L}, 3.0, rng));
  store.add(tourist_param::kObsGates, normal_tensor({cfg.max_T + 1, L}, 1.0, rng));
  if (cfg.max_T > 0) store.add(tourist_param::kActGates, normal_tensor({cfg.max_T, L}, 1.0, rng));
  if (cfg.channel == Channel::Discrete) {
    store.add(tourist_param::kBaselineW, Tensor({1, 2 * L}));
    store.add(tourist_param::kBaselineB, Tensor({1}));
  }
}

Var encode_observations(Var table, const std::vector<Observation>& observations) {
  for (const Observation& z : observations) {
    if (z.empty()) throw std::invalid_argument("encode_observations: empty observation (use EmptyCorner)");
  }
  return diff::embed_bag(table, observations);
}

Message continuous_message(Tape& tape, diff::ParamStore& store,
                           const std::vector<Observation>& observations,
                           const std::vector<AgnosticAction>& actions) {
  Activations h = gated_sums(tape, store, observations, actions);
  Message m;
  m.kind = Channel::Continuous;
  m.T = static_cast<int>(actions.size());
  m.obs = h.h_obs;
  m.act = h.h_act;
  return m;
}

Message discrete_message(Tape& tape, diff::ParamStore& store,
                         const std::vector<Observation>& observations,
                         const std::vector<AgnosticAction>& actions, Rng& rng) {
  Activations h = gated_sums(tape, store, observations, actions);
  auto sample = [&](Var logits) {
    Tensor bits(logits.shape());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits.value()[i]));
      bits[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    }
    return bits;
  };
  Tensor obs_bits = sample(h.h_obs);
  Tensor act_bits = sample(h.h_act);

  Message m;
  m.kind = Channel::Discrete;
  m.T = static_cast<int>(actions.size());
  m.h_obs = h.h_obs;
  m.h_act = h.h_act;
  m.log_prob = diff::add(diff::bernoulli_log_prob(h.h_obs, obs_bits),
                         diff::bernoulli_log_prob(h.h_act, act_bits));
  m.obs = tape.constant(std::move(obs_bits));
  m.act = tape.constant(std::move(act_bits));
  return m;
}

Var baseline_value(Tape& tape, diff::ParamStore& store, const Message& message) {
  if (message.kind != Channel::Discrete) {
    throw std::invalid_argument("baseline_value: only the discrete channel has a baseline");
  }
  Var aux = diff::detach(diff::concat(message.h_obs, message.h_act));
  return diff::linear(tape.param(store, tourist_param::kBaselineW),
                      tape.param(store, tourist_param::kBaselineB), aux);
}

}  // namespace ttw
