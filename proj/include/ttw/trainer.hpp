#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttw/diffcore.hpp"
#include "ttw/gridworld.hpp"
#include "ttw/guide.hpp"
#include "ttw/oracle.hpp"
#include "ttw/tourist.hpp"

namespace ttw {

struct ModelConfig {
  Channel channel = Channel::Continuous;
  bool masc = true;
  int T = 1;
  int embed_dim = 64;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Tourist and guide parameters in one store (names prefixed "tourist." / "guide.").
struct Model {
  ModelConfig config;
  diff::ParamStore params;
};

Model make_model(const ModelConfig& cfg, std::uint64_t seed);

enum class PredictionMode { Argmax, Sample };
std::string_view to_string(PredictionMode m);
PredictionMode parse_prediction_mode(std::string_view name);

/// Distribution over map cells (index x * height + y) given the communicated window.
using Predictor = std::function<std::vector<double>(const GridMap& map, const std::vector<Observation>& Z,
                                                    const std::vector<AgnosticAction>& A, Rng& rng)>;

/// Tourist message followed by guide forward; discrete messages draw bits from `rng`.
Predictor model_predictor(Model& model);
/// Exact posterior from enumeration; tables are built lazily per map.
Predictor oracle_predictor(ChannelContent content);
Predictor uniform_predictor();

int choose_location(const std::vector<double>& probs, PredictionMode mode, Rng& rng);

struct PoolEpisode {
  std::size_t map = 0;  // index into the map list the pool was drawn from
  Episode episode;
};
using EpisodePool = std::vector<PoolEpisode>;

/// n episodes, each on a uniformly chosen map.
EpisodePool sample_pool(const std::vector<GridMap>& maps, int n, int T, Rng& rng);
/// Every enumerated episode of every map.
EpisodePool enumerated_pool(const std::vector<GridMap>& maps, int T);

/// Fraction of episodes whose chosen location equals the target.
double evaluate_localization(const Predictor& predictor, const std::vector<GridMap>& maps,
                             const EpisodePool& pool, PredictionMode mode, Rng& rng);

struct TrainConfig {
  ModelConfig model;
  int epochs = 200;
  int batches_per_epoch = 100;
  int batch_size = 64;
  diff::AdamConfig adam;
  /// Learning-rate multiplier for the MASC head. Slows the masks so the kernel can
  /// learn the shifted features before the masks saturate on the centre cell.
  double masc_lr_scale = 0.03;
  std::uint64_t seed = 0;
  int train_eval_episodes = 1000;
  int valid_episodes = 1000;
  int test_episodes = 1000;
  /// Max-norm guard on tourist gradients for the discrete channel (0 = off).
  double clip_norm = 0.0;
  /// Stop after this many epochs without a validation improvement (0 = never).
  int patience = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double valid_acc = 0.0;
};

/// Measured accuracy against the mean Bayes bound of the split's maps.
struct BoundCheck {
  double accuracy = 0.0;
  double bayes = 0.0;
  /// Binomial standard error of the bound at the pool size.
  double stderr_ = 0.0;
  int n = 0;
  bool ok = true;
};

BoundCheck check_bound(double accuracy, double bayes, int n);

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  double train_acc = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
  BoundCheck train_bound;
  BoundCheck valid_bound;
  BoundCheck test_bound;

  bool bounds_ok() const { return train_bound.ok && valid_bound.ok && test_bound.ok; }
  nlohmann::json to_json() const;
  /// epoch,train_loss,train_acc,valid_acc
  std::string curves_csv() const;
};

struct TrainResult {
  TrainReport report;
  Model model;  // parameters at the best validation epoch
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train_continuous(const TrainConfig& cfg, const SplitSpec& split);
TrainResult train_discrete(const TrainConfig& cfg, const SplitSpec& split);
/// Dispatches on cfg.model.channel.
TrainResult train(const TrainConfig& cfg, const SplitSpec& split);

/// -(reward - baseline) * log p(m): its gradient is the REINFORCE estimate of -grad E[r].
diff::Var reinforce_surrogate(diff::Var log_prob, double reward, double baseline);

/// One discrete-channel training sample recorded on `tape`.
struct DiscreteSampleTerms {
  diff::Var guide_loss;     // cross-entropy of the guide
  diff::Var surrogate;      // tourist policy-gradient term
  diff::Var baseline_loss;  // mse(b, r)
  diff::Var total;
  double reward = 0.0;      // -guide_loss
  double baseline = 0.0;
  std::vector<double> probs;
};

DiscreteSampleTerms discrete_sample(diff::Tape& tape, Model& model, const GridMap& map,
                                    const Episode& episode, Rng& rng);

}  // namespace ttw
