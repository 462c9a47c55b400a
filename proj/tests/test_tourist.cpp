#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "ttw/tourist.hpp"

using namespace ttw;
using namespace ttw::diff;
using ttw::testing::max_abs_diff;

namespace {

constexpr int kShop = static_cast<int>(LandmarkCategory::Shop);
constexpr int kBank = static_cast<int>(LandmarkCategory::Bank);

ParamStore make_tourist(int L, int max_T, Channel channel, std::uint64_t seed = 1) {
  ParamStore s;
  Rng rng(seed);
  init_tourist(s, {L, max_T, channel}, rng);
  return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Direct evaluation of the gated sums from the parameter values.
std::vector<double> reference_obs(const ParamStore& s, const std::vector<Observation>& Z) {
  const Tensor& E = s.at(tourist_param::kLandmarkEmbed).value;
  const Tensor& G = s.at(tourist_param::kObsGates).value;
  const int L = E.dim(1);
  std::vector<double> out(static_cast<std::size_t>(L), 0.0);
  for (std::size_t t = 0; t < Z.size(); ++t) {
    for (int j = 0; j < L; ++j) {
      double o = 0.0;
      for (int sym : Z[t]) o += E[static_cast<std::size_t>(sym * L + j)];
      out[static_cast<std::size_t>(j)] += sig(G[t * L + j]) * o;
    }
  }
  return out;
}

std::vector<double> reference_act(const ParamStore& s, const std::vector<AgnosticAction>& A) {
  const Tensor& E = s.at(tourist_param::kActionEmbed).value;
  const int L = E.dim(1);
  std::vector<double> out(static_cast<std::size_t>(L), 0.0);
  if (A.empty()) return out;
  const Tensor& G = s.at(tourist_param::kActGates).value;
  for (std::size_t t = 0; t < A.size(); ++t) {
    for (int j = 0; j < L; ++j) {
      out[static_cast<std::size_t>(j)] += sig(G[t * L + j]) * E[static_cast<std::size_t>(static_cast<int>(A[t]) * L + j)];
    }
  }
  return out;
}

void check_close(const Tensor& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("tourist parameter shapes") {
  ParamStore s = make_tourist(8, 3, Channel::Discrete);
  CHECK(s.at(tourist_param::kLandmarkEmbed).value.shape() == Shape{10, 8});
  CHECK(s.at(tourist_param::kActionEmbed).value.shape() == Shape{4, 8});
  CHECK(s.at(tourist_param::kObsGates).value.shape() == Shape{4, 8});
  CHECK(s.at(tourist_param::kActGates).value.shape() == Shape{3, 8});
  CHECK(s.at(tourist_param::kBaselineW).value.shape() == Shape{1, 16});
  CHECK(s.at(tourist_param::kBaselineB).value.shape() == Shape{1});
  ParamStore c = make_tourist(8, 0, Channel::Continuous);
  CHECK_FALSE(c.contains(tourist_param::kActGates));
  CHECK_FALSE(c.contains(tourist_param::kBaselineW));
}

TEST_CASE("encode_observations") {
  ParamStore s = make_tourist(5, 2, Channel::Continuous);
  Tape tape;
  Var table = tape.param(s, tourist_param::kLandmarkEmbed);
  const Tensor& E = s.at(tourist_param::kLandmarkEmbed).value;
  Var o = encode_observations(table, {{kEmptyCorner}, {kShop, kShop}, {kShop, kBank}, {kBank, kShop}});
  for (int j = 0; j < 5; ++j) {
    CHECK(o.value()[j] == E[kEmptyCorner * 5 + j]);
    CHECK(o.value()[5 + j] == 2 * E[kShop * 5 + j]);
    CHECK(o.value()[10 + j] == o.value()[15 + j]);
  }
  CHECK_THROWS_AS(encode_observations(table, {{}}), std::invalid_argument);
  CHECK_THROWS_AS(encode_observations(table, {{10}}), std::out_of_range);
}

TEST_CASE("continuous_message") {
  const int L = 6;
  ParamStore s = make_tourist(L, 3, Channel::Continuous);
  SUBCASE("matches the gated sums") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const int T = trial % 4;
      std::vector<Observation> Z;
      std::vector<AgnosticAction> A;
      for (int t = 0; t <= T; ++t) Z.push_back({rng.uniform_int(kNumSymbols)});
      for (int t = 0; t < T; ++t) A.push_back(static_cast<AgnosticAction>(rng.uniform_int(4)));
      Tape tape;
      Message m = continuous_message(tape, s, Z, A);
      CHECK(m.kind == Channel::Continuous);
      CHECK(m.T == T);
      check_close(m.obs.value(), reference_obs(s, Z), 1e-12);
      check_close(m.act.value(), reference_act(s, A), 1e-12);
      CHECK(m.concatenated().size() == 2 * L);
    }
  }
  SUBCASE("T = 0 has a zero action half") {
    Tape tape;
    Message m = continuous_message(tape, s, {{kShop}}, {});
    for (double v : m.act.value().values()) CHECK(v == 0.0);
    check_close(m.obs.value(), reference_obs(s, {{kShop}}), 1e-12);
  }
  SUBCASE("hand-set gates separate observation orders") {
    ParamStore g = make_tourist(2, 1, Channel::Continuous);
    Tensor& gates = g.at(tourist_param::kObsGates).value;
    // Step 0 writes only feature 0, step 1 only feature 1.
    gates[0] = 30;
    gates[1] = -30;
    gates[2] = -30;
    gates[3] = 30;
    Tape tape;
    Message ab = continuous_message(tape, g, {{kShop}, {kBank}}, {AgnosticAction::Up});
    Message ba = continuous_message(tape, g, {{kBank}, {kShop}}, {AgnosticAction::Up});
    CHECK(max_abs_diff(ab.obs.value(), ba.obs.value()) > 1e-3);
  }
  SUBCASE("random gates usually distinguish orders") {
    Tape tape;
    Message ab = continuous_message(tape, s, {{kShop}, {kBank}}, {AgnosticAction::Up});
    Message ba = continuous_message(tape, s, {{kBank}, {kShop}}, {AgnosticAction::Up});
    CHECK(max_abs_diff(ab.obs.value(), ba.obs.value()) > 1e-6);
  }
  SUBCASE("saturated closed gates silence the message") {
    ParamStore g = make_tourist(L, 2, Channel::Continuous);
    g.at(tourist_param::kObsGates).value.fill(-700);
    g.at(tourist_param::kActGates).value.fill(-700);
    Tape tape;
    Message m = continuous_message(tape, g, {{kShop}, {kBank}, {1}}, {AgnosticAction::Up, AgnosticAction::Left});
    for (double v : m.concatenated()) CHECK(std::abs(v) < 1e-300);
  }
  SUBCASE("length errors") {
    Tape tape;
    CHECK_THROWS_AS(continuous_message(tape, s, {{kShop}}, {AgnosticAction::Up}), std::invalid_argument);
    CHECK_THROWS_AS(continuous_message(tape, s, {{1}, {1}, {1}, {1}, {1}},
                                       std::vector<AgnosticAction>(4, AgnosticAction::Up)),
                    std::invalid_argument);
  }
}

TEST_CASE("discrete_message") {
  const int L = 4;
  ParamStore s = make_tourist(L, 2, Channel::Discrete);
  const std::vector<Observation> Z = {{kShop}, {kBank, 1}};
  const std::vector<AgnosticAction> A = {AgnosticAction::Right};
  SUBCASE("bits and log probability") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      Tape tape;
      Message m = discrete_message(tape, s, Z, A, rng);
      CHECK(m.kind == Channel::Discrete);
      double expected = 0.0;
      for (const auto& [bits, h] : {std::pair{m.obs, m.h_obs}, std::pair{m.act, m.h_act}}) {
        for (std::size_t i = 0; i < bits.value().size(); ++i) {
          const double b = bits.value()[i];
          CHECK((b == 0.0 || b == 1.0));
          const double p = sig(h.value()[i]);
          expected += b * std::log(p) + (1 - b) * std::log(1 - p);
        }
      }
      CHECK(m.log_prob.item() == doctest::Approx(expected).epsilon(1e-12));
      check_close(m.h_obs.value(), reference_obs(s, Z), 1e-12);
    }
  }
  SUBCASE("saturated logits give all ones") {
    ParamStore big = make_tourist(L, 2, Channel::Discrete);
    big.at(tourist_param::kLandmarkEmbed).value.fill(50);
    big.at(tourist_param::kActionEmbed).value.fill(50);
    big.at(tourist_param::kObsGates).value.fill(30);
    big.at(tourist_param::kActGates).value.fill(30);
    Rng rng(5);
    Tape tape;
    Message m = discrete_message(tape, big, Z, A, rng);
    for (double v : m.concatenated()) CHECK(v == 1.0);
  }
  SUBCASE("empirical bit means match sigmoid(h)") {
    Rng rng(6);
    const int n = 100000;
    std::vector<double> mean(2 * L, 0.0);
    std::vector<double> p;
    for (int i = 0; i < n; ++i) {
      Tape tape(false);
      Message m = discrete_message(tape, s, Z, A, rng);
      const std::vector<double> bits = m.concatenated();
      for (std::size_t j = 0; j < bits.size(); ++j) mean[j] += bits[j] / n;
      if (p.empty()) {
        for (double h : m.h_obs.value().values()) p.push_back(sig(h));
        for (double h : m.h_act.value().values()) p.push_back(sig(h));
      }
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double se = std::sqrt(p[j] * (1 - p[j]) / n);
      CHECK(std::abs(mean[j] - p[j]) <= 3 * se);
    }
  }
  SUBCASE("T = 0 action bits are fair coins") {
    Rng rng(7);
    Tape tape;
    Message m = discrete_message(tape, s, {{kShop}}, {}, rng);
    for (double h : m.h_act.value().values()) CHECK(h == 0.0);
  }
}

TEST_CASE("baseline_value") {
  const int L = 4;
  const std::vector<Observation> Z = {{kShop}, {kBank}};
  const std::vector<AgnosticAction> A = {AgnosticAction::Down};
  SUBCASE("zero weights return the bias") {
    ParamStore s = make_tourist(L, 1, Channel::Discrete);
    s.at(tourist_param::kBaselineB).value[0] = 0.37;
    Rng rng(1);
    Tape tape;
    Message m = discrete_message(tape, s, Z, A, rng);
    CHECK(baseline_value(tape, s, m).item() == 0.37);
  }
  SUBCASE("linear in the activations") {
    ParamStore s = make_tourist(L, 1, Channel::Discrete);
    Rng rng(2);
    for (double& w : s.at(tourist_param::kBaselineW).value.values()) w = rng.normal(0, 1);
    s.at(tourist_param::kBaselineB).value[0] = 0.5;
    ParamStore d = make_tourist(L, 1, Channel::Discrete);
    d.copy_values_from(s);
    for (const char* name : {tourist_param::kLandmarkEmbed, tourist_param::kActionEmbed}) {
      for (double& v : d.at(name).value.values()) v *= 2;
    }
    Tape tape;
    Message ms = discrete_message(tape, s, Z, A, rng);
    Message md = discrete_message(tape, d, Z, A, rng);
    const double bs = baseline_value(tape, s, ms).item() - 0.5;
    const double bd = baseline_value(tape, d, md).item() - 0.5;
    CHECK(bd == doctest::Approx(2 * bs).epsilon(1e-12));
  }
  SUBCASE("regresses onto a fixed reward") {
    ParamStore s = make_tourist(L, 1, Channel::Discrete);
    Rng rng(3);
    const double reward = -0.8;
    AdamConfig adam;
    adam.lr = 0.01;
    double b = 0.0;
    for (int step = 0; step < 1500; ++step) {
      Tape tape;
      const Observation z0{rng.uniform_int(kNumSymbols)}, z1{rng.uniform_int(kNumSymbols)};
      Message m = discrete_message(tape, s, {z0, z1}, {static_cast<AgnosticAction>(rng.uniform_int(4))}, rng);
      Var bv = baseline_value(tape, s, m);
      b = bv.item();
      tape.backward(mse(bv, tape.constant(Tensor::scalar(reward))));
      // Only the baseline head receives gradient.
      CHECK(s.at(tourist_param::kLandmarkEmbed).grad[0] == 0.0);
      adam_step(s, adam);
    }
    CHECK(std::abs(b - reward) < 1e-2);
  }
  SUBCASE("continuous messages have no baseline") {
    ParamStore s = make_tourist(L, 1, Channel::Discrete);
    Tape tape;
    Message m = continuous_message(tape, s, Z, A);
    CHECK_THROWS_AS(baseline_value(tape, s, m), std::invalid_argument);
  }
}
