#include "ttw/protocol.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace ttw {

void ProtocolConfig::validate() const {
  if (attempts < 1) throw std::invalid_argument("protocol: attempts must be >= 1");
  if (T < 0) throw std::invalid_argument("protocol: T must be >= 0");
  if (maxsteps < T) throw std::invalid_argument("protocol: maxsteps must be >= T");
}

namespace {

AgnosticAction random_action(Rng& rng) {
  return static_cast<AgnosticAction>(rng.uniform_int(kNumAgnosticActions));
}

}  // namespace

ProtocolResult run_episode(const Predictor& guide, const GridMap& map, Position target,
                           const ProtocolConfig& cfg, Rng& rng) {
  cfg.validate();
  const Bounds bounds = map.bounds();
  if (!bounds.contains(target.x, target.y)) throw std::out_of_range("run_episode: target outside the map");
  const int target_cell = bounds.index(target);

  Position pos = bounds.position(rng.uniform_int(bounds.cells()));
  std::vector<Observation> features{observe(pos, map)};
  std::vector<AgnosticAction> actions;
  for (int t = 0; t < cfg.T; ++t) {
    const AgnosticAction a = random_action(rng);
    pos = step_agnostic(pos, a, bounds);
    features.push_back(observe(pos, map));
    actions.push_back(a);
  }

  ProtocolResult result;
  int remaining = cfg.attempts;
  for (int i = 0; i < cfg.maxsteps; ++i) {
    const std::vector<double> p = guide(map, features, actions, rng);
    if (choose_location(p, cfg.mode, rng) == target_cell) {
      ++result.attempts_used;
      if (pos == target) {
        result.success = true;
        result.steps = i;
        return result;
      }
      if (--remaining <= 0) {
        result.steps = i;
        return result;
      }
    }
    const AgnosticAction a = random_action(rng);
    pos = step_agnostic(pos, a, bounds);
    features.push_back(observe(pos, map));
    actions.push_back(a);
    features.erase(features.begin());
    if (static_cast<int>(actions.size()) > cfg.T) actions.erase(actions.begin());
  }
  result.steps = cfg.maxsteps;
  return result;
}

ProtocolResult run_random_distinct(const GridMap& map, const ProtocolConfig& cfg, Rng& rng) {
  cfg.validate();
  const int cells = map.cells();
  const int tourist = rng.uniform_int(cells);
  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  ProtocolResult result;
  const int guesses = std::min(cfg.attempts, cells);
  // Partial Fisher-Yates: the first `guesses` entries are distinct uniform cells.
  for (int g = 0; g < guesses; ++g) {
    const int j = g + rng.uniform_int(cells - g);
    std::swap(order[static_cast<std::size_t>(g)], order[static_cast<std::size_t>(j)]);
    ++result.attempts_used;
    if (order[static_cast<std::size_t>(g)] == tourist) {
      result.success = true;
      break;
    }
  }
  return result;
}

SuiteStats summarize(std::vector<ProtocolResult> results) {
  SuiteStats s;
  s.n_episodes = static_cast<int>(results.size());
  int successes = 0;
  double steps = 0.0;
  for (const ProtocolResult& r : results) {
    if (r.success) {
      ++successes;
      steps += r.steps;
    }
  }
  if (s.n_episodes > 0) {
    s.success_rate = static_cast<double>(successes) / s.n_episodes;
    s.ci95 = 1.96 * std::sqrt(s.success_rate * (1.0 - s.success_rate) / s.n_episodes);
  }
  s.mean_steps = successes > 0 ? steps / successes : 0.0;
  s.results = std::move(results);
  return s;
}

SuiteStats run_suite(const Predictor& guide, const std::vector<GridMap>& maps, int n_episodes,
                     const ProtocolConfig& cfg, std::uint64_t seed) {
  if (maps.empty()) throw std::invalid_argument("run_suite: no maps");
  const Rng master(seed);
  std::vector<ProtocolResult> results;
  results.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(i));
    const GridMap& map = maps[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(maps.size())))];
    const Position target = map.bounds().position(rng.uniform_int(map.cells()));
    results.push_back(run_episode(guide, map, target, cfg, rng));
  }
  return summarize(std::move(results));
}

SuiteStats run_random_distinct_suite(const std::vector<GridMap>& maps, int n_episodes,
                                     const ProtocolConfig& cfg, std::uint64_t seed) {
  if (maps.empty()) throw std::invalid_argument("run_random_distinct_suite: no maps");
  const Rng master(seed);
  std::vector<ProtocolResult> results;
  results.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    Rng rng = master.fork(static_cast<std::uint64_t>(i));
    const GridMap& map = maps[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(maps.size())))];
    results.push_back(run_random_distinct(map, cfg, rng));
  }
  return summarize(std::move(results));
}

std::string suite_csv_header() {
  return "experiment_id,channel,masc,T,split,success_rate,ci95,mean_steps,n_episodes,seed";
}

std::string suite_csv_line(const SuiteRow& row) {
  std::ostringstream out;
  out.precision(17);
  out << row.experiment_id << ',' << row.channel << ',' << row.masc << ',' << row.T << ',' << row.split << ','
      << row.success_rate << ',' << row.ci95 << ',' << row.mean_steps << ',' << row.n_episodes << ','
      << row.seed;
  return out.str();
}

}  // namespace ttw
