#include "ttw/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ttw {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Rng streams of the master seed used by the commands (training derives its own).
constexpr std::uint64_t kSplitStream = 1000;
constexpr std::uint64_t kEvalLocStream = 11;
constexpr std::uint64_t kFullTaskStream = 12;
constexpr std::uint64_t kDumpStream = 13;

const std::vector<std::string> kSplitNames = {"train", "valid", "test"};

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

bool compatible(const json& base, const json& value) {
  if (base.is_number() && value.is_number()) return true;
  return base.type() == value.type();
}

// Overwrites leaves of `base` with `patch`, refusing keys `base` does not have.
void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ValidationError("config section '" + prefix + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = join_path(prefix, it.key());
    if (!base.contains(it.key())) throw ValidationError("unknown config key: " + path);
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else if (!compatible(slot, it.value())) {
      throw ValidationError("config key " + path + " expects " + std::string(slot.type_name()) + ", got " +
                            std::string(it.value().type_name()));
    } else {
      slot = it.value();
    }
  }
}

int get_int(const json& j, const char* key, const std::string& section) {
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ValidationError("config key " + section + "." + key + " must be an integer");
  return v.get<int>();
}

std::uint64_t get_u64(const json& j, const char* key, const std::string& section) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ValidationError("config key " + join_path(section, key) + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const json& j, const char* key) { return j.at(key).get<double>(); }

std::string csv_meta_line(const json& prov) {
  return "# tool_version=" + prov.at("tool_version").get<std::string>() +
         " config_hash=" + prov.at("config_hash").get<std::string>() +
         " seed=" + std::to_string(prov.at("seed").get<std::uint64_t>()) + "\n";
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json model_json(const Model& m) { return to_json(m.config); }

SplitSpec load_split_for(const ExperimentConfig& cfg) {
  const Paths paths = paths_of(cfg);
  json header;
  SplitSpec split = load_manifest(paths.manifest(), &header);
  if (header.at("data_hash").get<std::string>() != cfg.data_hash()) {
    throw ValidationError("manifest " + paths.manifest() +
                          " was generated from a different data config; rerun gen-maps");
  }
  return split;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << contents;
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---- config ---------------------------------------------------------------------

json ExperimentConfig::to_json() const {
  const TrainConfig& t = train;
  return {
      {"seed", seed},
      {"data",
       {{"seed", data.seed},
        {"neighborhoods", data.neighborhoods},
        {"width", data.width},
        {"height", data.height},
        {"window", data.window},
        {"stride", data.stride},
        {"count_weights", data.count_weights},
        {"category_weights", data.category_weights},
        {"n_train", data.split.n_train},
        {"n_valid", data.split.n_valid},
        {"n_test", data.split.n_test}}},
      {"train",
       {{"channel", std::string(to_string(t.model.channel))},
        {"masc", t.model.masc},
        {"T", t.model.T},
        {"embed_dim", t.model.embed_dim},
        {"epochs", t.epochs},
        {"batches_per_epoch", t.batches_per_epoch},
        {"batch_size", t.batch_size},
        {"lr", t.adam.lr},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"masc_lr_scale", t.masc_lr_scale},
        {"train_eval_episodes", t.train_eval_episodes},
        {"valid_episodes", t.valid_episodes},
        {"test_episodes", t.test_episodes},
        {"clip_norm", t.clip_norm},
        {"patience", t.patience}}},
      {"eval", {{"mode", std::string(to_string(eval.mode))}, {"episodes", eval.episodes}}},
      {"full_task",
       {{"maxsteps", full_task.maxsteps},
        {"attempts", full_task.attempts},
        {"mode", std::string(to_string(full_task.mode))},
        {"episodes", full_task.episodes},
        {"split", full_task.split}}},
      {"masc_dump", {{"episodes", masc_dump.episodes}, {"split", masc_dump.split}}},
      {"paths", {{"output_root", paths.output_root}, {"run_name", paths.run_name}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  json doc = ExperimentConfig{}.to_json();
  merge_strict(doc, j, "");
  ExperimentConfig c;
  try {
    c.seed = get_u64(doc, "seed", "");

    const json& d = doc.at("data");
    c.data.seed = get_u64(d, "seed", "data");
    c.data.neighborhoods = get_int(d, "neighborhoods", "data");
    c.data.width = get_int(d, "width", "data");
    c.data.height = get_int(d, "height", "data");
    c.data.window = get_int(d, "window", "data");
    c.data.stride = get_int(d, "stride", "data");
    c.data.count_weights = d.at("count_weights").get<std::vector<double>>();
    c.data.category_weights = d.at("category_weights").get<std::vector<double>>();
    c.data.split.n_train = get_int(d, "n_train", "data");
    c.data.split.n_valid = get_int(d, "n_valid", "data");
    c.data.split.n_test = get_int(d, "n_test", "data");

    const json& t = doc.at("train");
    c.train.model.channel = parse_channel(t.at("channel").get<std::string>());
    c.train.model.masc = t.at("masc").get<bool>();
    c.train.model.T = get_int(t, "T", "train");
    c.train.model.embed_dim = get_int(t, "embed_dim", "train");
    c.train.epochs = get_int(t, "epochs", "train");
    c.train.batches_per_epoch = get_int(t, "batches_per_epoch", "train");
    c.train.batch_size = get_int(t, "batch_size", "train");
    c.train.adam.lr = get_double(t, "lr");
    c.train.adam.beta1 = get_double(t, "beta1");
    c.train.adam.beta2 = get_double(t, "beta2");
    c.train.adam.eps = get_double(t, "eps");
    c.train.masc_lr_scale = get_double(t, "masc_lr_scale");
    c.train.train_eval_episodes = get_int(t, "train_eval_episodes", "train");
    c.train.valid_episodes = get_int(t, "valid_episodes", "train");
    c.train.test_episodes = get_int(t, "test_episodes", "train");
    c.train.clip_norm = get_double(t, "clip_norm");
    c.train.patience = get_int(t, "patience", "train");
    c.train.seed = c.seed;

    const json& e = doc.at("eval");
    c.eval.mode = parse_prediction_mode(e.at("mode").get<std::string>());
    c.eval.episodes = get_int(e, "episodes", "eval");

    const json& f = doc.at("full_task");
    c.full_task.maxsteps = get_int(f, "maxsteps", "full_task");
    c.full_task.attempts = get_int(f, "attempts", "full_task");
    c.full_task.mode = parse_prediction_mode(f.at("mode").get<std::string>());
    c.full_task.episodes = get_int(f, "episodes", "full_task");
    c.full_task.split = f.at("split").get<std::string>();

    const json& m = doc.at("masc_dump");
    c.masc_dump.episodes = get_int(m, "episodes", "masc_dump");
    c.masc_dump.split = m.at("split").get<std::string>();

    const json& p = doc.at("paths");
    c.paths.output_root = p.at("output_root").get<std::string>();
    c.paths.run_name = p.at("run_name").get<std::string>();
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("config: ") + ex.what());
  } catch (const ValidationError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw ValidationError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  try {
    train.validate();
    MapGenConfig gen{data.width, data.height, data.count_weights, data.category_weights};
    gen.validate();
    ProtocolConfig{train.model.T, full_task.maxsteps, full_task.attempts, full_task.mode}.validate();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw ValidationError(ex.what());
  }
  if (data.neighborhoods < 1) throw ValidationError("data.neighborhoods must be >= 1");
  if (data.window < 2 || data.window > data.width || data.window > data.height) {
    throw ValidationError("data.window must lie in [2, min(width, height)]");
  }
  if (data.stride < 1) throw ValidationError("data.stride must be >= 1");
  if (data.split.n_valid < 1 || data.split.n_test < 1 || data.split.n_train < 0) {
    throw ValidationError("data split sizes must be positive (n_train 0 = all eligible)");
  }
  if (eval.episodes < 1 || full_task.episodes < 1 || masc_dump.episodes < 1) {
    throw ValidationError("episode counts must be positive");
  }
  for (const std::string* s : {&full_task.split, &masc_dump.split}) {
    if (std::find(kSplitNames.begin(), kSplitNames.end(), *s) == kSplitNames.end()) {
      throw ValidationError("unknown split name: " + *s);
    }
  }
  if (paths.output_root.empty()) throw ValidationError("paths.output_root must not be empty");
  if (paths.run_name.find('/') != std::string::npos) throw ValidationError("paths.run_name must not contain '/'");
}

std::string ExperimentConfig::config_hash() const {
  json doc = to_json();
  doc.erase("paths");
  return fnv1a_hex(doc.dump());
}

std::string ExperimentConfig::data_hash() const { return fnv1a_hex(to_json().at("data").dump()); }

std::string ExperimentConfig::compat_hash() const {
  json doc = to_json();
  json t = doc.at("train");
  for (const char* k : {"channel", "masc", "T"}) t.erase(k);
  return fnv1a_hex(json{{"data", doc.at("data")}, {"train", t}}.dump());
}

std::string ExperimentConfig::run_name() const {
  if (!paths.run_name.empty()) return paths.run_name;
  return std::string(to_string(train.model.channel)) + "_" + (train.model.masc ? "masc" : "nomasc") + "_T" +
         std::to_string(train.model.T) + "_s" + std::to_string(seed);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override must look like key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  json patch = std::move(value);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, std::move(patch)}};
  merge_strict(doc, patch, "");
}

ExperimentConfig resolve_config(const std::optional<std::string>& file, const std::vector<std::string>& overrides) {
  json doc = ExperimentConfig{}.to_json();
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) doc["paths"]["output_root"] = env;
  if (file) {
    const json parsed = json::parse(read_file(*file), nullptr, false);
    if (parsed.is_discarded()) throw ValidationError("config file " + *file + " is not valid JSON");
    merge_strict(doc, parsed, "");
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  return ExperimentConfig::from_json(doc);
}

// ---- data -----------------------------------------------------------------------------

Dataset generate_dataset(const DataConfig& cfg) {
  const MapGenConfig gen{cfg.width, cfg.height, cfg.count_weights, cfg.category_weights};
  Dataset d;
  std::vector<GridMap> windows;
  const Rng master(cfg.seed);
  for (int n = 0; n < cfg.neighborhoods; ++n) {
    Rng rng = master.fork(static_cast<std::uint64_t>(n));
    d.neighborhoods.push_back(generate_neighborhood(gen, rng));
    for (GridMap& w : extract_windows(d.neighborhoods.back(), cfg.window, cfg.stride)) {
      windows.push_back(std::move(w));
    }
  }
  SplitRule rule = cfg.split;
  rule.seed = Rng(cfg.seed).fork(kSplitStream).seed();
  d.split = make_splits(windows, rule);
  return d;
}

const std::vector<GridMap>& split_maps(const SplitSpec& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "valid") return split.valid;
  if (name == "test") return split.test;
  throw ValidationError("unknown split name: " + name);
}

json provenance(const ExperimentConfig& cfg) {
  return {{"tool_version", kToolVersion},
          {"config_hash", cfg.config_hash()},
          {"seed", cfg.seed},
          {"data_hash", cfg.data_hash()},
          {"compat_hash", cfg.compat_hash()}};
}

Paths paths_of(const ExperimentConfig& cfg) { return {cfg.paths.output_root}; }

json manifest_json(const Dataset& data, const ExperimentConfig& cfg) {
  json doc = provenance(cfg);
  doc["data"] = cfg.to_json().at("data");
  json nb = json::array();
  for (const GridMap& m : data.neighborhoods) nb.push_back(m.map_id());
  doc["neighborhoods"] = nb;
  json splits = json::object();
  for (const std::string& name : kSplitNames) {
    json maps = json::array();
    for (const GridMap& m : split_maps(data.split, name)) {
      maps.push_back({{"map", m.to_json()}, {"intersections", m.intersections()}});
    }
    splits[name] = maps;
  }
  doc["splits"] = splits;
  return doc;
}

SplitSpec load_manifest(const std::string& path, json* header) {
  const json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw ValidationError("manifest " + path + " is not valid JSON");
  SplitSpec split;
  try {
    for (const std::string& name : kSplitNames) {
      std::vector<GridMap>& out = name == "train" ? split.train : name == "valid" ? split.valid : split.test;
      for (const json& entry : doc.at("splits").at(name)) {
        const GridMap m = GridMap::from_json(entry.at("map"));
        out.emplace_back(m.map_id(), m.width(), m.height(), m.corners(),
                         entry.at("intersections").get<std::vector<std::string>>());
      }
    }
    validate_split(split);
  } catch (const json::exception& ex) {
    throw ValidationError("manifest " + path + ": " + ex.what());
  } catch (const SplitError& ex) {
    throw ValidationError("manifest " + path + " violates the split rule: " + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw ValidationError("manifest " + path + ": " + ex.what());
  }
  if (header) {
    *header = doc;
    header->erase("splits");
  }
  return split;
}

LoadedRun load_run(const std::string& run_dir) {
  LoadedRun run;
  run.dir = run_dir;
  run.report = json::parse(read_file(run_dir + "/report.json"), nullptr, false);
  if (run.report.is_discarded()) throw ValidationError(run_dir + "/report.json is not valid JSON");
  try {
    run.model.config = model_config_from_json(run.report.at("model"));
  } catch (const json::exception& ex) {
    throw ValidationError(run_dir + "/report.json: " + ex.what());
  }
  run.model.params = diff::load_checkpoint(run_dir + "/checkpoint.bin");
  const Model fresh = make_model(run.model.config, 0);
  std::set<std::string> want, have;
  for (const auto& p : fresh.params.params()) want.insert(p.name);
  for (const auto& p : run.model.params.params()) have.insert(p.name);
  if (want != have) throw ValidationError("checkpoint parameters do not match the model config in " + run_dir);
  for (const auto& p : fresh.params.params()) {
    if (run.model.params.at(p.name).value.shape() != p.value.shape()) {
      throw ValidationError("checkpoint shape mismatch for " + p.name + " in " + run_dir);
    }
  }
  return run;
}

// ---- commands ---------------------------------------------------------------------

std::vector<std::string> cmd_gen_maps(const ExperimentConfig& cfg) {
  const Paths paths = paths_of(cfg);
  const Dataset data = generate_dataset(cfg.data);
  std::vector<std::string> written{paths.manifest()};
  write_file(paths.manifest(), manifest_json(data, cfg).dump(2) + "\n");
  for (const GridMap& nb : data.neighborhoods) {
    json doc = provenance(cfg);
    doc["map"] = nb.to_json();
    const std::string p = paths.data_dir() + "/neighborhoods/" + nb.map_id() + ".json";
    write_file(p, doc.dump(2) + "\n");
    written.push_back(p);
  }
  return written;
}

namespace {

json embedded_config(const ExperimentConfig& cfg) {
  json doc = cfg.to_json();
  // Location of the outputs is not part of the experiment.
  doc["paths"].erase("output_root");
  return doc;
}

}  // namespace

std::vector<std::string> cmd_train(const ExperimentConfig& cfg) {
  const SplitSpec split = load_split_for(cfg);
  const TrainResult result = train(cfg.train, split);
  const std::string dir = paths_of(cfg).run_dir(cfg.run_name());
  fs::create_directories(dir);

  json meta = provenance(cfg);
  meta["model"] = model_json(result.model);
  diff::save_checkpoint(dir + "/checkpoint.bin", result.model.params, meta);

  json report = provenance(cfg);
  report["run_name"] = cfg.run_name();
  report["model"] = model_json(result.model);
  report["config"] = embedded_config(cfg);
  report["report"] = result.report.to_json();
  write_file(dir + "/report.json", report.dump(2) + "\n");
  write_file(dir + "/curves.csv", csv_meta_line(provenance(cfg)) + result.report.curves_csv());
  if (!result.report.bounds_ok()) {
    throw std::runtime_error("trained accuracy exceeds the Bayes bound beyond 3 standard errors; see " + dir +
                             "/report.json");
  }
  return {dir + "/report.json", dir + "/checkpoint.bin", dir + "/curves.csv"};
}

json cmd_eval_loc(const ExperimentConfig& cfg, const std::string& run_dir, const std::string& split_name) {
  const SplitSpec split = load_split_for(cfg);
  LoadedRun run = load_run(run_dir);
  const std::vector<GridMap>& maps = split_maps(split, split_name);
  const Rng master = Rng(cfg.seed).fork(kEvalLocStream);
  Rng pool_rng = master.fork(1);
  Rng eval_rng = master.fork(2);
  const int T = run.model.config.T;
  const EpisodePool pool = sample_pool(maps, cfg.eval.episodes, T, pool_rng);
  const double acc = evaluate_localization(model_predictor(run.model), maps, pool, cfg.eval.mode, eval_rng);

  json row = provenance(cfg);
  row["run"] = fs::path(run_dir).filename().string();
  row["split"] = split_name;
  row["channel"] = std::string(to_string(run.model.config.channel));
  row["masc"] = run.model.config.masc;
  row["T"] = T;
  row["mode"] = std::string(to_string(cfg.eval.mode));
  row["accuracy"] = acc;
  row["n_episodes"] = cfg.eval.episodes;
  row["bayes"] = mean_bayes_accuracy(maps, T, ChannelContent::ObsAndActions);
  write_file(run_dir + "/eval_" + split_name + "_" + std::string(to_string(cfg.eval.mode)) + ".json",
             row.dump(2) + "\n");
  return row;
}

std::vector<std::string> cmd_upper_bound(const ExperimentConfig& cfg, const std::vector<int>& Ts,
                                         const std::vector<ChannelContent>& contents) {
  const SplitSpec split = load_split_for(cfg);
  std::ostringstream csv;
  csv << csv_meta_line(provenance(cfg)) << "split,map_id,T,content,accuracy\n";
  for (const std::string& name : kSplitNames) {
    const std::vector<GridMap>& maps = split_maps(split, name);
    for (int T : Ts) {
      for (ChannelContent content : contents) {
        double sum = 0.0;
        for (const GridMap& m : maps) {
          const double a = bayes_accuracy(m, T, content).value();
          sum += a;
          csv << name << ',' << m.map_id() << ',' << T << ',' << to_string(content) << ',' << fixed(a, 6) << '\n';
        }
        csv << name << ",mean," << T << ',' << to_string(content) << ',' << fixed(sum / maps.size(), 6) << '\n';
      }
    }
  }
  const std::string path = cfg.paths.output_root + "/upper_bound.csv";
  write_file(path, csv.str());
  return {path};
}

std::vector<std::string> cmd_full_task(const ExperimentConfig& cfg, const std::vector<std::string>& run_dirs,
                                       int T) {
  const SplitSpec split = load_split_for(cfg);
  const std::vector<GridMap>& maps = split_maps(split, cfg.full_task.split);
  const std::uint64_t seed = Rng(cfg.seed).fork(kFullTaskStream).seed();
  const FullTaskConfig& f = cfg.full_task;

  std::vector<SuiteRow> rows;
  auto add_row = [&](const std::string& id, const std::string& channel, const std::string& masc, int rowT,
                     const SuiteStats& s) {
    rows.push_back({id, channel, masc, rowT, f.split, s.success_rate, s.ci95, s.mean_steps, s.n_episodes, seed});
  };

  for (const std::string& dir : run_dirs) {
    LoadedRun run = load_run(dir);
    const ModelConfig& mc = run.model.config;
    const ProtocolConfig pc{mc.T, f.maxsteps, f.attempts, f.mode};
    const SuiteStats s = run_suite(model_predictor(run.model), maps, f.episodes, pc, seed);
    add_row(fs::path(dir).filename().string(), std::string(to_string(mc.channel)), mc.masc ? "on" : "off", mc.T, s);
  }
  const ProtocolConfig pc{T, f.maxsteps, f.attempts, f.mode};
  add_row("random_distinct", "random_distinct", "n/a", T, run_random_distinct_suite(maps, f.episodes, pc, seed));
  add_row("random_uniform", "random_uniform", "n/a", T, run_suite(uniform_predictor(), maps, f.episodes, pc, seed));
  add_row("oracle", "oracle", "n/a", T,
          run_suite(oracle_predictor(ChannelContent::ObsAndActions), maps, f.episodes, pc, seed));

  std::string csv = csv_meta_line(provenance(cfg)) + suite_csv_header() + "\n";
  for (const SuiteRow& r : rows) csv += suite_csv_line(r) + "\n";
  const std::string path = cfg.paths.output_root + "/full_task.csv";
  write_file(path, csv);
  return {path};
}

std::vector<std::string> cmd_dump_masc(const ExperimentConfig& cfg, const std::string& run_dir) {
  const SplitSpec split = load_split_for(cfg);
  LoadedRun run = load_run(run_dir);
  const ModelConfig& mc = run.model.config;
  if (!mc.masc) throw ValidationError("dump-masc needs a model trained with MASC");
  if (mc.T < 1) throw ValidationError("dump-masc needs a model with T >= 1");
  const std::vector<GridMap>& maps = split_maps(split, cfg.masc_dump.split);
  const Rng master = Rng(cfg.seed).fork(kDumpStream);
  Rng pool_rng = master.fork(1);
  Rng msg_rng = master.fork(2);
  const EpisodePool pool = sample_pool(maps, cfg.masc_dump.episodes, mc.T, pool_rng);

  std::string out = json{{"meta", provenance(cfg)}}.dump() + "\n";
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const GridMap& map = maps[pool[i].map];
    const Episode& ep = pool[i].episode;
    diff::Tape tape(false);
    Message msg = mc.channel == Channel::Continuous
                      ? continuous_message(tape, run.model.params, ep.observations, ep.actions)
                      : discrete_message(tape, run.model.params, ep.observations, ep.actions, msg_rng);
    const GuideOutput g = guide_forward(tape, run.model.params, msg, map, true);
    json masks = json::array();
    for (const diff::Var& m : g.masks) {
      json grid = json::array();
      for (int r = 0; r < 3; ++r) {
        json rowv = json::array();
        for (int c = 0; c < 3; ++c) rowv.push_back(m.value()[static_cast<std::size_t>(r * 3 + c)]);
        grid.push_back(rowv);
      }
      masks.push_back(grid);
    }
    json actions = json::array();
    for (AgnosticAction a : ep.actions) actions.push_back(std::string(to_string(a)));
    const auto probs = g.probs.value().values();
    const int pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    const Position p = map.bounds().position(pred);
    out += json{{"episode_id", static_cast<int>(i)},
                {"map_id", map.map_id()},
                {"actions", actions},
                {"masks", masks},
                {"predicted", {p.x, p.y}},
                {"target", {ep.target.x, ep.target.y}}}
               .dump() +
           "\n";
  }
  const std::string path = run_dir + "/masc_dump.jsonl";
  write_file(path, out);
  return {path};
}

std::vector<std::string> cmd_report(const ExperimentConfig& cfg, bool allow_mixed) {
  const Paths paths = paths_of(cfg);
  if (!fs::is_directory(paths.runs_dir())) throw std::runtime_error("no runs directory at " + paths.runs_dir());
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(paths.runs_dir())) {
    if (entry.is_directory() && fs::exists(entry.path() / "report.json")) dirs.push_back(entry.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no trained runs under " + paths.runs_dir());

  struct Acc {
    int n = 0;
    double train = 0, valid = 0, test = 0;
    double up_train = 0, up_valid = 0, up_test = 0;
  };
  // Key sorts rows by T, then MASC, then channel.
  std::map<std::tuple<int, bool, std::string>, Acc> groups;
  std::set<std::string> hashes;
  for (const std::string& dir : dirs) {
    const json doc = json::parse(read_file(dir + "/report.json"), nullptr, false);
    if (doc.is_discarded()) throw ValidationError(dir + "/report.json is not valid JSON");
    try {
      hashes.insert(doc.at("compat_hash").get<std::string>());
      const ModelConfig mc = model_config_from_json(doc.at("model"));
      const json& r = doc.at("report");
      Acc& a = groups[{mc.T, mc.masc, std::string(to_string(mc.channel))}];
      ++a.n;
      a.train += r.at("train_acc").get<double>();
      a.valid += r.at("valid_acc").get<double>();
      a.test += r.at("test_acc").get<double>();
      a.up_train += r.at("bounds").at("train").at("bayes").get<double>();
      a.up_valid += r.at("bounds").at("valid").at("bayes").get<double>();
      a.up_test += r.at("bounds").at("test").at("bayes").get<double>();
    } catch (const json::exception& ex) {
      throw ValidationError(dir + "/report.json: " + ex.what());
    }
  }
  if (hashes.size() > 1 && !allow_mixed) {
    throw ValidationError("runs under " + paths.runs_dir() +
                          " were trained with incompatible configs; pass --allow-mixed to combine them");
  }

  const std::vector<std::string> header = {"T",     "masc",  "channel",     "seeds",       "train",
                                           "valid", "test",  "upper_train", "upper_valid", "upper_test"};
  std::vector<std::vector<std::string>> table;
  for (const auto& [key, a] : groups) {
    const auto& [T, masc, channel] = key;
    const double n = a.n;
    table.push_back({std::to_string(T), masc ? "on" : "off", channel, std::to_string(a.n),
                     fixed(100 * a.train / n, 2), fixed(100 * a.valid / n, 2), fixed(100 * a.test / n, 2),
                     fixed(100 * a.up_train / n, 2), fixed(100 * a.up_valid / n, 2),
                     fixed(100 * a.up_test / n, 2)});
  }

  const json prov = provenance(cfg);
  std::string csv = csv_meta_line(prov);
  for (std::size_t i = 0; i < header.size(); ++i) csv += (i ? "," : "") + header[i];
  csv += "\n";
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) csv += (i ? "," : "") + row[i];
    csv += "\n";
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  auto render = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      const std::string pad(width[i] - row[i].size(), ' ');
      line += i < 3 ? row[i] + pad : pad + row[i];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    return line + "\n";
  };
  std::string txt = csv_meta_line(prov) + render(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w;
  txt += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& row : table) txt += render(row);

  const std::string csv_path = cfg.paths.output_root + "/report.csv";
  const std::string txt_path = cfg.paths.output_root + "/report.txt";
  write_file(csv_path, csv);
  write_file(txt_path, txt);
  return {csv_path, txt_path};
}

}  // namespace ttw
