#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "ttw/protocol.hpp"

using namespace ttw;

namespace {

// Exact success probability of the uniform guide by dynamic programming over
// (tourist cell, attempts left), averaged over targets.
double uniform_guide_success(const Bounds& b, int attempts, int maxsteps) {
  const int n = b.cells();
  const double g = 1.0 / n;
  double total = 0.0;
  for (int target = 0; target < n; ++target) {
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(attempts + 1), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int c = 0; c < n; ++c) dist[static_cast<std::size_t>(attempts)][static_cast<std::size_t>(c)] = g;
    double success = 0.0;
    for (int step = 0; step < maxsteps; ++step) {
      auto next = dist;
      for (auto& row : next) std::fill(row.begin(), row.end(), 0.0);
      for (int rem = 1; rem <= attempts; ++rem) {
        for (int c = 0; c < n; ++c) {
          const double p = dist[static_cast<std::size_t>(rem)][static_cast<std::size_t>(c)];
          if (p == 0.0) continue;
          // No evaluation this step, or a wrong one that still leaves attempts.
          std::vector<std::pair<int, double>> moves{{rem, p * (1 - g)}};
          if (c == target) success += p * g;
          else if (rem > 1) moves.push_back({rem - 1, p * g});
          for (const auto& [r, mass] : moves) {
            for (int a = 0; a < 4; ++a) {
              const Position q = step_agnostic(b.position(c), static_cast<AgnosticAction>(a), b);
              next[static_cast<std::size_t>(r)][static_cast<std::size_t>(b.index(q))] += mass / 4;
            }
          }
        }
      }
      dist = std::move(next);
    }
    total += success / n;
  }
  return total;
}

Predictor constant_guide(int cell) {
  return [cell](const GridMap& map, const std::vector<Observation>&, const std::vector<AgnosticAction>&, Rng&) {
    std::vector<double> p(static_cast<std::size_t>(map.cells()), 0.0);
    p[static_cast<std::size_t>(cell)] = 1.0;
    return p;
  };
}

}  // namespace

TEST_CASE("protocol configuration") {
  ProtocolConfig cfg;
  CHECK(cfg.T == 3);
  CHECK(cfg.maxsteps == 200);
  CHECK(cfg.attempts == 3);
  cfg.attempts = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.maxsteps = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  Rng rng(1);
  CHECK_THROWS_AS(run_episode(uniform_predictor(), ttw::testing::distinct_map(), {4, 0}, ProtocolConfig{}, rng),
                  std::out_of_range);
}

TEST_CASE("an always-wrong guide stops at the step cap") {
  GridMap m = ttw::testing::distinct_map();
  ProtocolConfig cfg;
  cfg.maxsteps = 57;
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    ProtocolResult r = run_episode(constant_guide(0), m, {3, 3}, cfg, rng);
    CHECK_FALSE(r.success);
    CHECK(r.steps == 57);
    CHECK(r.attempts_used == 0);
  }
}

TEST_CASE("a guide that always names the target spends its attempts") {
  // Evaluations happen every step, so three misses end the episode within three steps
  // unless the tourist is already there.
  GridMap m = ttw::testing::distinct_map();
  ProtocolConfig cfg;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    ProtocolResult r = run_episode(constant_guide(5), m, m.bounds().position(5), cfg, rng);
    CHECK(r.attempts_used >= 1);
    CHECK(r.attempts_used <= 3);
    CHECK(r.steps <= 2);
    if (!r.success) CHECK(r.attempts_used == 3);
  }
}

TEST_CASE("uniform guide matches the exact chain") {
  const GridMap m = ttw::testing::distinct_map();
  ProtocolConfig cfg;
  cfg.mode = PredictionMode::Sample;
  const double exact = uniform_guide_success(m.bounds(), cfg.attempts, cfg.maxsteps);
  // Close to 1 - (15/16)^3, reduced by correlation between successive evaluations.
  CHECK(exact == doctest::Approx(1 - std::pow(15.0 / 16, 3)).epsilon(0.05));
  const int n = 20000;
  SuiteStats s = run_suite(uniform_predictor(), {m}, n, cfg, 4);
  CHECK(std::abs(s.success_rate - exact) <= 3 * std::sqrt(exact * (1 - exact) / n));
  for (const ProtocolResult& r : s.results) CHECK(r.steps <= cfg.maxsteps);
}

TEST_CASE("random distinct guesses") {
  ProtocolConfig cfg;
  const int n = 50000;
  SuiteStats s = run_random_distinct_suite({ttw::testing::distinct_map()}, n, cfg, 5);
  const double p = 3.0 / 16;
  CHECK(std::abs(s.success_rate - p) <= 3 * std::sqrt(p * (1 - p) / n));
  for (const ProtocolResult& r : s.results) {
    CHECK(r.steps == 0);
    CHECK(r.attempts_used >= 1);
    CHECK(r.attempts_used <= 3);
  }
  cfg.attempts = 40;
  Rng rng(6);
  CHECK(run_random_distinct(ttw::testing::distinct_map(), cfg, rng).success);
}

TEST_CASE("Bayes oracle on a distinguishable map") {
  ProtocolConfig cfg;
  SuiteStats s = run_suite(oracle_predictor(ChannelContent::ObsAndActions), {ttw::testing::distinct_map()}, 2000,
                           cfg, 7);
  CHECK(s.success_rate >= 0.98);
  for (const ProtocolResult& r : s.results) {
    CHECK(r.steps <= cfg.maxsteps);
    // The posterior is one-hot, so every evaluation is a hit.
    if (r.success) CHECK(r.attempts_used == 1);
    else CHECK(r.attempts_used == 0);
  }
  CHECK(s.mean_steps > 0);
}

TEST_CASE("suites are reproducible") {
  GridMap m = ttw::testing::distinct_map();
  ProtocolConfig cfg;
  SuiteStats a = run_suite(uniform_predictor(), {m}, 300, cfg, 8);
  SuiteStats b = run_suite(uniform_predictor(), {m}, 300, cfg, 8);
  SuiteStats c = run_suite(uniform_predictor(), {m}, 300, cfg, 9);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    same = same && a.results[i].success == b.results[i].success && a.results[i].steps == b.results[i].steps &&
           a.results[i].attempts_used == b.results[i].attempts_used;
    differs = differs || a.results[i].steps != c.results[i].steps;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("summaries and rows") {
  SuiteStats s = summarize({{true, 4, 1}, {false, 200, 0}, {true, 10, 2}, {false, 3, 3}});
  CHECK(s.success_rate == 0.5);
  CHECK(s.mean_steps == 7.0);
  CHECK(s.ci95 == doctest::Approx(1.96 * std::sqrt(0.25 / 4)));
  CHECK(summarize({}).success_rate == 0.0);
  SuiteRow row{"run", "continuous", "on", 3, "test", 0.5, 0.1, 7.0, 4, 11};
  CHECK(suite_csv_line(row) == "run,continuous,on,3,test,0.5,0.10000000000000001,7,4,11");
  CHECK(suite_csv_header() == "experiment_id,channel,masc,T,split,success_rate,ci95,mean_steps,n_episodes,seed");
}
