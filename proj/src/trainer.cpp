#include "ttw/trainer.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <unordered_map>

namespace ttw {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using nlohmann::json;

namespace {

// Rng stream ids derived from TrainConfig::seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kBitsStream = 3;
constexpr std::uint64_t kPoolStream = 4;
constexpr std::uint64_t kEvalStream = 5;

int target_index(const GridMap& map, const Episode& ep) { return map.bounds().index(ep.target); }

int argmax(const std::vector<double>& p) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(p.size()); ++i) {
    if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

}  // namespace

json to_json(const ModelConfig& cfg) {
  return {{"channel", std::string(to_string(cfg.channel))},
          {"masc", cfg.masc},
          {"T", cfg.T},
          {"embed_dim", cfg.embed_dim}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.channel = parse_channel(j.at("channel").get<std::string>());
  cfg.masc = j.at("masc").get<bool>();
  cfg.T = j.at("T").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  return cfg;
}

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.T < 0) throw std::invalid_argument("model: T must be >= 0");
  if (cfg.embed_dim <= 0) throw std::invalid_argument("model: embed_dim must be positive");
  Model model;
  model.config = cfg;
  Rng rng(seed);
  Rng tourist_rng = rng.fork(1);
  Rng guide_rng = rng.fork(2);
  init_tourist(model.params, {cfg.embed_dim, cfg.T, cfg.channel}, tourist_rng);
  init_guide(model.params, {cfg.embed_dim, cfg.T, cfg.masc, cfg.channel}, guide_rng);
  return model;
}

std::string_view to_string(PredictionMode m) { return m == PredictionMode::Argmax ? "argmax" : "sample"; }

PredictionMode parse_prediction_mode(std::string_view name) {
  if (name == "argmax") return PredictionMode::Argmax;
  if (name == "sample") return PredictionMode::Sample;
  throw std::invalid_argument("unknown prediction mode: " + std::string(name));
}

Predictor model_predictor(Model& model) {
  return [&model](const GridMap& map, const std::vector<Observation>& Z, const std::vector<AgnosticAction>& A,
                  Rng& rng) {
    Tape tape(false);
    Message msg = model.config.channel == Channel::Continuous
                      ? continuous_message(tape, model.params, Z, A)
                      : discrete_message(tape, model.params, Z, A, rng);
    GuideOutput out = guide_forward(tape, model.params, msg, map, model.config.masc);
    const auto v = out.probs.value().values();
    return std::vector<double>(v.begin(), v.end());
  };
}

Predictor oracle_predictor(ChannelContent content) {
  auto cache = std::make_shared<std::unordered_map<std::string, std::shared_ptr<BayesTable>>>();
  return [cache, content](const GridMap& map, const std::vector<Observation>& Z,
                          const std::vector<AgnosticAction>& A, Rng&) {
    const std::string key = map.map_id() + "#" + std::to_string(A.size());
    auto it = cache->find(key);
    if (it == cache->end()) {
      it = cache->emplace(key, std::make_shared<BayesTable>(map, static_cast<int>(A.size()), content)).first;
    }
    return it->second->posterior(Z, A).probabilities();
  };
}

Predictor uniform_predictor() {
  return [](const GridMap& map, const std::vector<Observation>&, const std::vector<AgnosticAction>&, Rng&) {
    return std::vector<double>(static_cast<std::size_t>(map.cells()), 1.0 / map.cells());
  };
}

int choose_location(const std::vector<double>& probs, PredictionMode mode, Rng& rng) {
  if (probs.empty()) throw std::invalid_argument("choose_location: empty distribution");
  if (mode == PredictionMode::Argmax) return argmax(probs);
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the total; fall back to the last cell with mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

EpisodePool sample_pool(const std::vector<GridMap>& maps, int n, int T, Rng& rng) {
  if (maps.empty()) throw std::invalid_argument("sample_pool: no maps");
  EpisodePool pool;
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::size_t m = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(maps.size())));
    pool.push_back({m, sample_episode(maps[m], T, rng)});
  }
  return pool;
}

EpisodePool enumerated_pool(const std::vector<GridMap>& maps, int T) {
  EpisodePool pool;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    for (Episode& ep : enumerate_episodes(maps[m], T).episodes) pool.push_back({m, std::move(ep)});
  }
  return pool;
}

double evaluate_localization(const Predictor& predictor, const std::vector<GridMap>& maps,
                             const EpisodePool& pool, PredictionMode mode, Rng& rng) {
  if (pool.empty()) return 0.0;
  std::int64_t correct = 0;
  for (const PoolEpisode& pe : pool) {
    const GridMap& map = maps.at(pe.map);
    const std::vector<double> p = predictor(map, pe.episode.observations, pe.episode.actions, rng);
    if (choose_location(p, mode, rng) == target_index(map, pe.episode)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pool.size());
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train: epochs must be positive");
  if (batches_per_epoch <= 0) throw std::invalid_argument("train: batches_per_epoch must be positive");
  if (batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (train_eval_episodes <= 0 || valid_episodes <= 0 || test_episodes <= 0) {
    throw std::invalid_argument("train: evaluation pool sizes must be positive");
  }
  if (!(adam.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw std::invalid_argument("train: Adam eps must be positive");
  if (!(masc_lr_scale > 0.0)) throw std::invalid_argument("train: masc_lr_scale must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("train: clip_norm must be >= 0");
  if (patience < 0) throw std::invalid_argument("train: patience must be >= 0");
  if (model.T < 0) throw std::invalid_argument("train: T must be >= 0");
  if (model.embed_dim <= 0) throw std::invalid_argument("train: embed_dim must be positive");
}

json to_json(const TrainConfig& cfg) {
  return {{"model", to_json(cfg.model)},
          {"epochs", cfg.epochs},
          {"batches_per_epoch", cfg.batches_per_epoch},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"eps", cfg.adam.eps},
          {"masc_lr_scale", cfg.masc_lr_scale},
          {"seed", cfg.seed},
          {"train_eval_episodes", cfg.train_eval_episodes},
          {"valid_episodes", cfg.valid_episodes},
          {"test_episodes", cfg.test_episodes},
          {"clip_norm", cfg.clip_norm},
          {"patience", cfg.patience}};
}

BoundCheck check_bound(double accuracy, double bayes, int n) {
  BoundCheck c;
  c.accuracy = accuracy;
  c.bayes = bayes;
  c.n = n;
  c.stderr_ = n > 0 ? std::sqrt(bayes * (1.0 - bayes) / n) : 0.0;
  c.ok = accuracy <= bayes + 3.0 * c.stderr_ + 1e-12;
  return c;
}

namespace {

json bound_json(const BoundCheck& c) {
  return {{"accuracy", c.accuracy}, {"bayes", c.bayes}, {"stderr", c.stderr_}, {"n", c.n}, {"ok", c.ok}};
}

}  // namespace

json TrainReport::to_json() const {
  json curves = json::array();
  for (const EpochStats& e : epochs) {
    curves.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"valid_acc", e.valid_acc}});
  }
  return {{"epochs", curves},
          {"best_epoch", best_epoch},
          {"train_acc", train_acc},
          {"valid_acc", valid_acc},
          {"test_acc", test_acc},
          {"bounds", {{"train", bound_json(train_bound)},
                      {"valid", bound_json(valid_bound)},
                      {"test", bound_json(test_bound)}}},
          {"bounds_ok", bounds_ok()}};
}

std::string TrainReport::curves_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,train_acc,valid_acc\n";
  for (const EpochStats& e : epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.valid_acc << '\n';
  }
  return out.str();
}

Var reinforce_surrogate(Var log_prob, double reward, double baseline) {
  return diff::scale(log_prob, -(reward - baseline));
}

DiscreteSampleTerms discrete_sample(Tape& tape, Model& model, const GridMap& map, const Episode& episode,
                                    Rng& rng) {
  Message msg = discrete_message(tape, model.params, episode.observations, episode.actions, rng);
  GuideOutput out = guide_forward(tape, model.params, msg, map, model.config.masc);
  DiscreteSampleTerms terms;
  terms.guide_loss = diff::cross_entropy(out.probs, target_index(map, episode));
  terms.reward = -terms.guide_loss.item();
  Var b = baseline_value(tape, model.params, msg);
  terms.baseline = b.item();
  terms.surrogate = reinforce_surrogate(msg.log_prob, terms.reward, terms.baseline);
  terms.baseline_loss = diff::mse(b, tape.constant(Tensor::scalar(terms.reward)));
  terms.total = diff::sum_list({terms.guide_loss, terms.surrogate, terms.baseline_loss});
  const auto p = out.probs.value().values();
  terms.probs.assign(p.begin(), p.end());
  return terms;
}

namespace {

struct Pools {
  EpisodePool train, valid, test;
};

Pools make_pools(const TrainConfig& cfg, const SplitSpec& split) {
  if (split.train.empty() || split.valid.empty() || split.test.empty()) {
    throw std::invalid_argument("train: every split needs at least one map");
  }
  Rng rng = Rng(cfg.seed).fork(kPoolStream);
  Rng train_rng = rng.fork(1), valid_rng = rng.fork(2), test_rng = rng.fork(3);
  Pools p;
  p.train = sample_pool(split.train, cfg.train_eval_episodes, cfg.model.T, train_rng);
  p.valid = sample_pool(split.valid, cfg.valid_episodes, cfg.model.T, valid_rng);
  p.test = sample_pool(split.test, cfg.test_episodes, cfg.model.T, test_rng);
  return p;
}

// Every evaluation draws from the same stream so discrete messages are comparable across epochs.
double evaluate(Model& model, const std::vector<GridMap>& maps, const EpisodePool& pool,
                const TrainConfig& cfg, std::uint64_t which) {
  Rng rng = Rng(cfg.seed).fork(kEvalStream).fork(which);
  return evaluate_localization(model_predictor(model), maps, pool, PredictionMode::Argmax, rng);
}

// Loss of one training sample recorded on `tape`, ready for backward, plus the guide
// cross-entropy reported in the curves.
struct SampleTerms {
  Var loss;
  double cross_entropy = 0.0;
};
using SampleLoss = std::function<SampleTerms(Tape&, Model&, const GridMap&, const Episode&, Rng&)>;

template <typename Fn>
auto with_diagnostics(int epoch, int batch, Fn&& fn) {
  try {
    return fn();
  } catch (const diff::NonFiniteGradient& e) {
    throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + ": " + e.what());
  } catch (const std::domain_error& e) {
    throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + ": " + e.what());
  }
}

TrainResult run_training(const TrainConfig& cfg, const SplitSpec& split, const SampleLoss& sample_loss,
                         const std::string& clip_prefix) {
  cfg.validate();
  const Pools pools = make_pools(cfg, split);
  Model model = make_model(cfg.model, Rng(cfg.seed).fork(kInitStream).seed());
  Model best = model;
  Rng data_rng = Rng(cfg.seed).fork(kDataStream);
  Rng bits_rng = Rng(cfg.seed).fork(kBitsStream);

  TrainResult result;
  TrainReport& report = result.report;
  double best_valid = -1.0;
  int since_best = 0;
  const double inv_batch = 1.0 / cfg.batch_size;
  diff::AdamConfig adam = cfg.adam;
  adam.lr_scales.push_back({guide_param::kMascW, cfg.masc_lr_scale});
  adam.lr_scales.push_back({guide_param::kMascB, cfg.masc_lr_scale});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      with_diagnostics(epoch, b, [&] {
        for (int i = 0; i < cfg.batch_size; ++i) {
          const GridMap& map =
              split.train[static_cast<std::size_t>(data_rng.uniform_int(static_cast<int>(split.train.size())))];
          const Episode ep = sample_episode(map, cfg.model.T, data_rng);
          Tape tape;
          const SampleTerms terms = sample_loss(tape, model, map, ep, bits_rng);
          loss_sum += terms.cross_entropy;
          tape.backward(terms.loss, inv_batch);
        }
        if (cfg.clip_norm > 0.0) diff::clip_grad_norm(model.params, cfg.clip_norm, clip_prefix);
        diff::adam_step(model.params, adam);
        return 0;
      });
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / (static_cast<double>(cfg.batches_per_epoch) * cfg.batch_size);
    if (!std::isfinite(stats.train_loss)) {
      throw TrainingDiverged("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    stats.train_acc = evaluate(model, split.train, pools.train, cfg, 1);
    stats.valid_acc = evaluate(model, split.valid, pools.valid, cfg, 2);
    report.epochs.push_back(stats);

    if (stats.valid_acc > best_valid) {
      best_valid = stats.valid_acc;
      report.best_epoch = epoch;
      best.params.copy_values_from(model.params);
      best.params.set_step(model.params.step());
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }

  const EpochStats& at_best = report.epochs[static_cast<std::size_t>(report.best_epoch - 1)];
  report.train_acc = at_best.train_acc;
  report.valid_acc = at_best.valid_acc;
  report.test_acc = evaluate(best, split.test, pools.test, cfg, 3);

  const ChannelContent content = ChannelContent::ObsAndActions;
  const int T = cfg.model.T;
  report.train_bound = check_bound(report.train_acc, mean_bayes_accuracy(split.train, T, content),
                                   cfg.train_eval_episodes);
  report.valid_bound = check_bound(report.valid_acc, mean_bayes_accuracy(split.valid, T, content),
                                   cfg.valid_episodes);
  report.test_bound = check_bound(report.test_acc, mean_bayes_accuracy(split.test, T, content),
                                  cfg.test_episodes);
  result.model = std::move(best);
  return result;
}

}  // namespace

TrainResult train_continuous(const TrainConfig& cfg, const SplitSpec& split) {
  if (cfg.model.channel != Channel::Continuous) {
    throw std::invalid_argument("train_continuous: config channel is discrete");
  }
  return run_training(
      cfg, split,
      [](Tape& tape, Model& model, const GridMap& map, const Episode& ep, Rng&) {
        Message msg = continuous_message(tape, model.params, ep.observations, ep.actions);
        GuideOutput out = guide_forward(tape, model.params, msg, map, model.config.masc);
        Var ce = diff::cross_entropy(out.probs, target_index(map, ep));
        return SampleTerms{ce, ce.item()};
      },
      "");
}

TrainResult train_discrete(const TrainConfig& cfg, const SplitSpec& split) {
  if (cfg.model.channel != Channel::Discrete) {
    throw std::invalid_argument("train_discrete: config channel is continuous");
  }
  return run_training(
      cfg, split,
      [](Tape& tape, Model& model, const GridMap& map, const Episode& ep, Rng& rng) {
        DiscreteSampleTerms t = discrete_sample(tape, model, map, ep, rng);
        return SampleTerms{t.total, -t.reward};
      },
      "tourist.");
}

TrainResult train(const TrainConfig& cfg, const SplitSpec& split) {
  return cfg.model.channel == Channel::Continuous ? train_continuous(cfg, split) : train_discrete(cfg, split);
}

}  // namespace ttw
