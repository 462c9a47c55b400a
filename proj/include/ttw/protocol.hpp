#pragma once

#include <string>
#include <vector>

#include "ttw/gridworld.hpp"
#include "ttw/trainer.hpp"

namespace ttw {

struct ProtocolConfig {
  int T = 3;
  int maxsteps = 200;
  int attempts = 3;
  PredictionMode mode = PredictionMode::Sample;

  void validate() const;
};

struct ProtocolResult {
  bool success = false;
  int steps = 0;          // walk actions taken after the initial buffer
  int attempts_used = 0;  // failed evaluations plus the successful one
};

/// One random-walk episode: the tourist starts uniformly, fills a T-step buffer, then at
/// every step the guide predicts a location from the sliding window; predicting the target
/// triggers an evaluation of the tourist's current location.
ProtocolResult run_episode(const Predictor& guide, const GridMap& map, Position target,
                           const ProtocolConfig& cfg, Rng& rng);

/// Scoring of the random baseline as `attempts` distinct uniform guesses of the tourist's cell.
ProtocolResult run_random_distinct(const GridMap& map, const ProtocolConfig& cfg, Rng& rng);

struct SuiteStats {
  double success_rate = 0.0;
  double ci95 = 0.0;
  double mean_steps = 0.0;  // over successful episodes only
  int n_episodes = 0;
  std::vector<ProtocolResult> results;
};

/// Episode i uses rng stream Rng(seed).fork(i): a uniform map and a uniform target.
SuiteStats run_suite(const Predictor& guide, const std::vector<GridMap>& maps, int n_episodes,
                     const ProtocolConfig& cfg, std::uint64_t seed);
SuiteStats run_random_distinct_suite(const std::vector<GridMap>& maps, int n_episodes,
                                     const ProtocolConfig& cfg, std::uint64_t seed);

SuiteStats summarize(std::vector<ProtocolResult> results);

struct SuiteRow {
  std::string experiment_id;
  std::string channel;  // continuous, discrete, random_distinct, random_uniform, oracle
  std::string masc;     // on, off or n/a
  int T = 0;
  std::string split;
  double success_rate = 0.0;
  double ci95 = 0.0;
  double mean_steps = 0.0;
  int n_episodes = 0;
  std::uint64_t seed = 0;
};

std::string suite_csv_header();
std::string suite_csv_line(const SuiteRow& row);

}  // namespace ttw
