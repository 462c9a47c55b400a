#include "ttw/oracle.hpp"

#include <algorithm>
#include <stdexcept>

namespace ttw {

std::string_view to_string(ChannelContent c) {
  return c == ChannelContent::ObsOnly ? "obs_only" : "obs_and_actions";
}

ChannelContent parse_content(std::string_view name) {
  if (name == "obs_only") return ChannelContent::ObsOnly;
  if (name == "obs_and_actions") return ChannelContent::ObsAndActions;
  throw std::invalid_argument("unknown channel content: " + std::string(name));
}

namespace {

std::int64_t ensemble_size(int cells, int T) {
  if (T < 0) throw std::invalid_argument("episode length T must be >= 0");
  std::int64_t n = cells;
  for (int t = 0; t < T; ++t) {
    n *= kNumAgnosticActions;
    if (n > kEnumerationLimit) {
      throw std::length_error("enumeration of T = " + std::to_string(T) + " exceeds " +
                              std::to_string(kEnumerationLimit) + " episodes");
    }
  }
  return n;
}

// Calls fn(start, actions) for every start cell and every action sequence of length T.
template <typename Fn>
void for_each_episode(const Bounds& bounds, int T, Fn&& fn) {
  ensemble_size(bounds.cells(), T);
  std::vector<AgnosticAction> actions(static_cast<std::size_t>(T), AgnosticAction::Left);
  std::int64_t sequences = 1;
  for (int t = 0; t < T; ++t) sequences *= kNumAgnosticActions;
  for (int cell = 0; cell < bounds.cells(); ++cell) {
    const Position start = bounds.position(cell);
    for (std::int64_t code = 0; code < sequences; ++code) {
      std::int64_t c = code;
      for (int t = T - 1; t >= 0; --t) {
        actions[static_cast<std::size_t>(t)] = static_cast<AgnosticAction>(c % kNumAgnosticActions);
        c /= kNumAgnosticActions;
      }
      fn(start, actions);
    }
  }
}

}  // namespace

EpisodeEnsemble enumerate_episodes(const GridMap& map, int T) {
  return enumerate_episodes(map, T, map.bounds());
}

EpisodeEnsemble enumerate_episodes(const GridMap& map, int T, const Bounds& bounds) {
  EpisodeEnsemble ensemble;
  ensemble.episodes.reserve(static_cast<std::size_t>(ensemble_size(bounds.cells(), T)));
  for_each_episode(bounds, T, [&](Position start, const std::vector<AgnosticAction>& actions) {
    ensemble.episodes.push_back(build_episode(map, start, actions, bounds));
  });
  return ensemble;
}

std::vector<double> Posterior::probabilities() const {
  std::vector<double> p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return p;
}

std::int64_t Posterior::max_count() const { return *std::max_element(counts.begin(), counts.end()); }

std::vector<int> evidence_key(const std::vector<Observation>& observations,
                              const std::vector<AgnosticAction>& actions, ChannelContent content) {
  std::vector<int> key;
  for (const Observation& z : observations) {
    key.insert(key.end(), z.begin(), z.end());
    key.push_back(-1);
  }
  if (content == ChannelContent::ObsAndActions) {
    key.push_back(-2);
    for (AgnosticAction a : actions) key.push_back(static_cast<int>(a));
  }
  return key;
}

BayesTable::BayesTable(const GridMap& map, int T, ChannelContent content)
    : BayesTable(map, T, content, map.bounds()) {}

BayesTable::BayesTable(const GridMap& map, int T, ChannelContent content, const Bounds& bounds)
    : T_(T), content_(content), cells_(bounds.cells()) {
  for_each_episode(bounds, T, [&](Position start, const std::vector<AgnosticAction>& actions) {
    const Episode ep = build_episode(map, start, actions, bounds);
    auto [it, inserted] = table_.try_emplace(evidence_key(ep.observations, ep.actions, content_));
    if (inserted) it->second.assign(static_cast<std::size_t>(cells_), 0);
    ++it->second[static_cast<std::size_t>(bounds.index(ep.target))];
    ++episodes_;
  });
}

Posterior BayesTable::posterior(const std::vector<Observation>& observations,
                                const std::vector<AgnosticAction>& actions) const {
  if (static_cast<int>(actions.size()) != T_ || observations.size() != actions.size() + 1) {
    throw std::invalid_argument("posterior: evidence length does not match T = " + std::to_string(T_));
  }
  auto it = table_.find(evidence_key(observations, actions, content_));
  if (it == table_.end()) throw std::invalid_argument("posterior: evidence has empty support");
  Posterior p;
  p.counts = it->second;
  for (std::int64_t c : p.counts) p.total += c;
  return p;
}

ExactAccuracy BayesTable::accuracy() const {
  ExactAccuracy acc;
  acc.total = episodes_;
  for (const auto& [key, counts] : table_) acc.correct += *std::max_element(counts.begin(), counts.end());
  return acc;
}

Posterior posterior(const GridMap& map, const std::vector<Observation>& observations,
                    const std::vector<AgnosticAction>& actions, ChannelContent content) {
  return BayesTable(map, static_cast<int>(actions.size()), content).posterior(observations, actions);
}

ExactAccuracy bayes_accuracy(const GridMap& map, int T, ChannelContent content) {
  return BayesTable(map, T, content).accuracy();
}

ExactAccuracy bayes_accuracy(const GridMap& map, int T, ChannelContent content, const Bounds& bounds) {
  return BayesTable(map, T, content, bounds).accuracy();
}

double mean_bayes_accuracy(const std::vector<GridMap>& maps, int T, ChannelContent content) {
  if (maps.empty()) return 0.0;
  double s = 0.0;
  for (const GridMap& m : maps) s += bayes_accuracy(m, T, content).value();
  return s / static_cast<double>(maps.size());
}

}  // namespace ttw
