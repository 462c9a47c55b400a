#pragma once

#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

#include "ttw/gridworld.hpp"

namespace ttw {

enum class ChannelContent { ObsOnly, ObsAndActions };

std::string_view to_string(ChannelContent c);
ChannelContent parse_content(std::string_view name);

/// Every (start, action sequence) episode of a map exactly once, uniformly weighted.
struct EpisodeEnsemble {
  std::vector<Episode> episodes;
};

inline constexpr std::int64_t kEnumerationLimit = 10'000'000;

/// Throws std::length_error when cells * 4^T exceeds kEnumerationLimit.
EpisodeEnsemble enumerate_episodes(const GridMap& map, int T);
EpisodeEnsemble enumerate_episodes(const GridMap& map, int T, const Bounds& bounds);

/// Exact posterior as integer counts over target cells.
struct Posterior {
  std::vector<std::int64_t> counts;  // indexed x * height + y
  std::int64_t total = 0;

  std::vector<double> probabilities() const;
  std::int64_t max_count() const;
};

struct ExactAccuracy {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double value() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Communicated content of an episode as a comparable key: ordered observation multisets,
/// followed by the action sequence when content is ObsAndActions.
std::vector<int> evidence_key(const std::vector<Observation>& observations,
                              const std::vector<AgnosticAction>& actions, ChannelContent content);

/// Counts of targets per distinct evidence for one map and episode length.
class BayesTable {
 public:
  BayesTable(const GridMap& map, int T, ChannelContent content);
  BayesTable(const GridMap& map, int T, ChannelContent content, const Bounds& bounds);

  /// Throws std::invalid_argument when no enumerated episode produces the evidence.
  Posterior posterior(const std::vector<Observation>& observations,
                      const std::vector<AgnosticAction>& actions) const;
  ExactAccuracy accuracy() const;
  std::size_t distinct_evidence() const { return table_.size(); }
  const std::map<std::vector<int>, std::vector<std::int64_t>>& table() const { return table_; }
  std::int64_t episodes() const { return episodes_; }
  int T() const { return T_; }
  ChannelContent content() const { return content_; }

 private:
  int T_;
  ChannelContent content_;
  int cells_;
  std::int64_t episodes_ = 0;
  std::map<std::vector<int>, std::vector<std::int64_t>> table_;
};

Posterior posterior(const GridMap& map, const std::vector<Observation>& observations,
                    const std::vector<AgnosticAction>& actions, ChannelContent content);

ExactAccuracy bayes_accuracy(const GridMap& map, int T, ChannelContent content);
ExactAccuracy bayes_accuracy(const GridMap& map, int T, ChannelContent content, const Bounds& bounds);

/// Mean per-map Bayes accuracy, i.e. the bound for episodes drawn from a uniformly chosen map.
double mean_bayes_accuracy(const std::vector<GridMap>& maps, int T, ChannelContent content);

}  // namespace ttw
