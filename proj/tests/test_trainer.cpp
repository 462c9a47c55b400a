#include <doctest.h>

#include <cmath>
#include <map>

#include "support.hpp"
#include "ttw/oracle.hpp"
#include "ttw/trainer.hpp"

using namespace ttw;
using namespace ttw::diff;

namespace {

SplitSpec single_map_split(const GridMap& m) {
  SplitSpec s;
  s.train = {m};
  s.valid = {m};
  s.test = {m};
  return s;
}

SplitSpec random_split(std::uint64_t seed, int n_train) {
  Rng rng(seed);
  SplitSpec s;
  for (int i = 0; i < n_train; ++i) s.train.push_back(ttw::testing::random_map(rng, "tr" + std::to_string(i)));
  for (int i = 0; i < 3; ++i) s.valid.push_back(ttw::testing::random_map(rng, "va" + std::to_string(i)));
  for (int i = 0; i < 3; ++i) s.test.push_back(ttw::testing::random_map(rng, "te" + std::to_string(i)));
  return s;
}

TrainConfig small_config(Channel channel, bool masc, int T, int L, int epochs) {
  TrainConfig cfg;
  cfg.model = {channel, masc, T, L};
  cfg.epochs = epochs;
  cfg.batches_per_epoch = 20;
  cfg.batch_size = 16;
  cfg.train_eval_episodes = 300;
  cfg.valid_episodes = 300;
  cfg.test_episodes = 300;
  cfg.seed = 5;
  return cfg;
}

std::map<std::string, std::vector<double>> tourist_grads(const ParamStore& s) {
  std::map<std::string, std::vector<double>> out;
  for (const Param& p : s.params()) {
    if (p.name.rfind("tourist.", 0) == 0 && p.name.find("baseline") == std::string::npos) {
      out[p.name] = ttw::testing::to_vec(p.grad);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("model construction") {
  Model a = make_model({Channel::Continuous, true, 2, 8}, 3);
  Model b = make_model({Channel::Continuous, true, 2, 8}, 3);
  for (std::size_t i = 0; i < a.params.params().size(); ++i) {
    CHECK(ttw::testing::max_abs_diff(a.params.params()[i].value, b.params.params()[i].value) == 0.0);
  }
  const ModelConfig cfg = model_config_from_json(to_json(ModelConfig{Channel::Discrete, false, 3, 16}));
  CHECK(cfg.channel == Channel::Discrete);
  CHECK_FALSE(cfg.masc);
  CHECK(cfg.T == 3);
  CHECK(cfg.embed_dim == 16);
  CHECK_THROWS_AS(make_model({Channel::Continuous, true, -1, 8}, 0), std::invalid_argument);
}

TEST_CASE("choose_location") {
  Rng rng(1);
  CHECK(choose_location({0.1, 0.4, 0.4, 0.1}, PredictionMode::Argmax, rng) == 1);
  CHECK(choose_location({0.0, 0.0, 1.0}, PredictionMode::Sample, rng) == 2);
  std::vector<int> hits(3);
  for (int i = 0; i < 30000; ++i) ++hits[static_cast<std::size_t>(choose_location({0.2, 0.5, 0.3}, PredictionMode::Sample, rng))];
  CHECK(std::abs(hits[1] / 30000.0 - 0.5) < 0.015);
  CHECK_THROWS_AS(choose_location({}, PredictionMode::Argmax, rng), std::invalid_argument);
  CHECK(parse_prediction_mode(to_string(PredictionMode::Sample)) == PredictionMode::Sample);
}

TEST_CASE("loss at initialisation is near ln 16") {
  Model model = make_model({Channel::Continuous, true, 1, 64}, 2);
  Rng rng(3);
  GridMap m = ttw::testing::distinct_map();
  double total = 0.0;
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    Episode ep = sample_episode(m, 1, rng);
    Tape tape(false);
    Message msg = continuous_message(tape, model.params, ep.observations, ep.actions);
    total += cross_entropy(guide_forward(tape, model.params, msg, m, true).probs, m.bounds().index(ep.target)).item();
  }
  CHECK(std::abs(total / n - std::log(16.0)) < 0.3);
}

TEST_CASE("oracle predictor reproduces the Bayes accuracy exactly") {
  Rng rng(4);
  std::vector<GridMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(ttw::testing::random_map(rng, "m" + std::to_string(i)));
  for (int T : {0, 1, 2}) {
    for (ChannelContent content : {ChannelContent::ObsOnly, ChannelContent::ObsAndActions}) {
      const EpisodePool pool = enumerated_pool(maps, T);
      Rng eval(0);
      const double acc = evaluate_localization(oracle_predictor(content), maps, pool, PredictionMode::Argmax, eval);
      // First-max argmax scores one count per evidence, exactly the tied max mass.
      std::int64_t correct = 0, total = 0;
      for (const GridMap& m : maps) {
        const ExactAccuracy a = bayes_accuracy(m, T, content);
        correct += a.correct;
        total += a.total;
      }
      CHECK(acc == static_cast<double>(correct) / static_cast<double>(total));
      CHECK(acc == doctest::Approx(mean_bayes_accuracy(maps, T, content)).epsilon(1e-15));
    }
  }
}

TEST_CASE("argmax decoding beats sampling for a fixed predictor") {
  Rng rng(5);
  std::vector<GridMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(ttw::testing::random_map(rng, "m" + std::to_string(i)));
  const EpisodePool pool = enumerated_pool(maps, 1);
  Rng e1(1), e2(2);
  const Predictor oracle = oracle_predictor(ChannelContent::ObsAndActions);
  const double arg = evaluate_localization(oracle, maps, pool, PredictionMode::Argmax, e1);
  const double smp = evaluate_localization(oracle, maps, pool, PredictionMode::Sample, e2);
  CHECK(arg >= smp);
  Rng e3(3);
  const double uni = evaluate_localization(uniform_predictor(), maps, pool, PredictionMode::Argmax, e3);
  CHECK(uni < arg);
}

TEST_CASE("bound check") {
  BoundCheck ok = check_bound(0.5, 0.5, 1000);
  CHECK(ok.ok);
  CHECK(ok.stderr_ == doctest::Approx(std::sqrt(0.25 / 1000)));
  CHECK(check_bound(0.5 + 3 * ok.stderr_ - 1e-9, 0.5, 1000).ok);
  CHECK_FALSE(check_bound(0.56, 0.5, 1000).ok);
  CHECK(check_bound(1.0, 1.0, 100).ok);
  CHECK_FALSE(check_bound(0.07, 0.0625, 1000000).ok);
}

TEST_CASE("REINFORCE gradient terms") {
  Model model = make_model({Channel::Discrete, true, 1, 4}, 6);
  GridMap m = ttw::testing::distinct_map();
  Rng rng(7);
  Episode ep = sample_episode(m, 1, rng);

  SUBCASE("reward is the negative cross-entropy") {
    Rng bits(8);
    Tape tape;
    DiscreteSampleTerms t = discrete_sample(tape, model, m, ep, bits);
    CHECK(t.reward == -t.guide_loss.item());
    CHECK(t.total.item() ==
          doctest::Approx(t.guide_loss.item() + t.surrogate.item() + t.baseline_loss.item()).epsilon(1e-14));
    CHECK(t.baseline_loss.item() == doctest::Approx((t.baseline - t.reward) * (t.baseline - t.reward)));
    double total = 0.0;
    for (double p : t.probs) total += p;
    CHECK(total == doctest::Approx(1.0));
  }
  SUBCASE("a perfect baseline removes the tourist gradient") {
    Rng bits(9);
    Tape probe;
    DiscreteSampleTerms first = discrete_sample(probe, model, m, ep, bits);
    // Same bits again: fix the baseline head at the observed reward.
    model.params.at(tourist_param::kBaselineW).value.fill(0.0);
    model.params.at(tourist_param::kBaselineB).value[0] = first.reward;
    Rng again(9);
    Tape tape;
    DiscreteSampleTerms t = discrete_sample(tape, model, m, ep, again);
    CHECK(t.reward == first.reward);
    tape.backward(t.surrogate);
    for (const auto& [name, g] : tourist_grads(model.params)) {
      for (double v : g) CHECK(v == 0.0);
    }
    model.params.zero_grad();
  }
  SUBCASE("surrogate scales the score function") {
    Tape tape;
    Var h = tape.leaf(Tensor::vector({0.3, -1.2}));
    Tensor bits = Tensor::vector({1.0, 0.0});
    Var lp = bernoulli_log_prob(h, bits);
    tape.backward(reinforce_surrogate(lp, 2.0, 0.5));
    const double p0 = 1 / (1 + std::exp(-0.3)), p1 = 1 / (1 + std::exp(1.2));
    CHECK(tape.grad(h)[0] == doctest::Approx(-1.5 * (1 - p0)));
    CHECK(tape.grad(h)[1] == doctest::Approx(-1.5 * (0 - p1)));
  }
}

TEST_CASE("REINFORCE is unbiased against exact enumeration") {
  // L = 1 gives a two-bit message, so the expectation has four terms.
  Model model = make_model({Channel::Discrete, true, 1, 1}, 10);
  GridMap m = ttw::testing::distinct_map();
  model.params.at(guide_param::kObsW).value[0] = 4.0;
  Rng rng(11);
  Episode ep = sample_episode(m, 1, rng);
  const int target = m.bounds().index(ep.target);

  auto reward = [&](const Tensor& obs, const Tensor& act) {
    Tape tape(false);
    Message msg;
    msg.kind = Channel::Discrete;
    msg.T = 1;
    msg.obs = tape.constant(obs);
    msg.act = tape.constant(act);
    return -cross_entropy(guide_forward(tape, model.params, msg, m, true).probs, target).item();
  };

  // Exact gradient of -E[r] with respect to the tourist.
  std::map<std::string, std::vector<double>> exact;
  double mean_reward = 0.0;
  for (int code = 0; code < 4; ++code) {
    Tensor obs = Tensor::vector({static_cast<double>(code & 1)});
    Tensor act = Tensor::vector({static_cast<double>((code >> 1) & 1)});
    Tape tape;
    Rng unused(0);
    Message msg = discrete_message(tape, model.params, ep.observations, ep.actions, unused);
    Var lp = add(bernoulli_log_prob(msg.h_obs, obs), bernoulli_log_prob(msg.h_act, act));
    const double p = std::exp(lp.item());
    const double r = reward(obs, act);
    mean_reward += p * r;
    model.params.zero_grad();
    tape.backward(lp, -p * r);  // grad p = p grad log p
    for (auto& [name, g] : tourist_grads(model.params)) {
      auto& acc = exact[name];
      acc.resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }
  model.params.zero_grad();
  model.params.at(tourist_param::kBaselineW).value.fill(0.0);
  model.params.at(tourist_param::kBaselineB).value[0] = mean_reward;

  const int n = 20000;
  Rng bits(12);
  for (int i = 0; i < n; ++i) {
    Tape tape;
    DiscreteSampleTerms t = discrete_sample(tape, model, m, ep, bits);
    tape.backward(t.surrogate, 1.0 / n);
  }
  int compared = 0;
  for (const auto& [name, g] : tourist_grads(model.params)) {
    const auto& e = exact.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::abs(e[i]) <= 1e-3) continue;
      ++compared;
      CAPTURE(name);
      CAPTURE(i);
      CHECK(std::abs(g[i] - e[i]) <= 0.1 * std::abs(e[i]));
    }
  }
  CHECK(compared > 0);
}

TEST_CASE("training") {
  SUBCASE("a single distinct map is memorised") {
    TrainConfig cfg = small_config(Channel::Continuous, true, 1, 32, 50);
    cfg.batches_per_epoch = 10;
    cfg.patience = 5;
    cfg.adam.lr = 3e-3;
    TrainResult r = train(cfg, single_map_split(ttw::testing::distinct_map()));
    double best_train = 0.0;
    for (const EpochStats& e : r.report.epochs) best_train = std::max(best_train, e.train_acc);
    CHECK(best_train >= 0.95);
    CHECK(r.report.bounds_ok());
  }
  SUBCASE("runs are deterministic") {
    const SplitSpec split = random_split(13, 4);
    TrainConfig cfg = small_config(Channel::Discrete, true, 1, 8, 2);
    TrainResult a = train(cfg, split);
    TrainResult b = train(cfg, split);
    CHECK(a.report.to_json().dump() == b.report.to_json().dump());
    CHECK(a.report.curves_csv() == b.report.curves_csv());
    cfg.seed = 6;
    TrainResult c = train(cfg, split);
    CHECK(a.report.to_json().dump() != c.report.to_json().dump());
  }
  SUBCASE("the report follows the best validation epoch") {
    const SplitSpec split = random_split(14, 4);
    TrainConfig cfg = small_config(Channel::Continuous, false, 1, 8, 6);
    TrainResult r = train(cfg, split);
    REQUIRE(r.report.epochs.size() == 6);
    double best = -1;
    int epoch = 0;
    for (const EpochStats& e : r.report.epochs) {
      if (e.valid_acc > best) {
        best = e.valid_acc;
        epoch = e.epoch;
      }
    }
    CHECK(r.report.best_epoch == epoch);
    CHECK(r.report.valid_acc == best);
    const std::string csv = r.report.curves_csv();
    CHECK(csv.rfind("epoch,train_loss,train_acc,valid_acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  }
  SUBCASE("baseline loss falls during discrete training") {
    const SplitSpec split = random_split(15, 4);
    Model model = make_model({Channel::Discrete, true, 1, 8}, 16);
    Rng rng(17);
    AdamConfig adam;
    adam.lr = 3e-3;
    auto mean_baseline_loss = [&](int batches, bool step) {
      double s = 0.0;
      for (int b = 0; b < batches; ++b) {
        for (int i = 0; i < 16; ++i) {
          const GridMap& m = split.train[static_cast<std::size_t>(rng.uniform_int(4))];
          Episode ep = sample_episode(m, 1, rng);
          Tape tape;
          DiscreteSampleTerms t = discrete_sample(tape, model, m, ep, rng);
          s += t.baseline_loss.item();
          tape.backward(t.total, 1.0 / 16);
        }
        if (step) adam_step(model.params, adam);
        else model.params.zero_grad();
      }
      return s / (batches * 16);
    };
    const double before = mean_baseline_loss(10, false);
    mean_baseline_loss(150, true);
    const double after = mean_baseline_loss(10, false);
    CHECK(after < before);
  }
  SUBCASE("discrete T = 0 approaches the observation bound") {
    TrainConfig cfg = small_config(Channel::Discrete, true, 0, 32, 200);
    cfg.adam.lr = 3e-3;
    cfg.patience = 0;
    TrainResult r = train(cfg, single_map_split(ttw::testing::distinct_map()));
    CHECK(r.report.test_bound.bayes == 1.0);
    CHECK(r.report.test_acc >= r.report.test_bound.bayes - 0.05);
  }
  SUBCASE("invalid configurations") {
    const SplitSpec split = random_split(18, 2);
    TrainConfig cfg = small_config(Channel::Continuous, true, 1, 8, 1);
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(cfg, split), std::invalid_argument);
    cfg = small_config(Channel::Continuous, true, 1, 8, 1);
    cfg.adam.beta1 = 1.0;
    CHECK_THROWS_AS(train(cfg, split), std::invalid_argument);
    cfg = small_config(Channel::Continuous, true, 1, 8, 1);
    CHECK_THROWS_AS(train_discrete(cfg, split), std::invalid_argument);
    SplitSpec empty = split;
    empty.valid.clear();
    CHECK_THROWS_AS(train(cfg, empty), std::invalid_argument);
  }
}
