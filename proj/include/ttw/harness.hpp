#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttw/gridworld.hpp"
#include "ttw/oracle.hpp"
#include "ttw/protocol.hpp"
#include "ttw/trainer.hpp"

namespace ttw {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "TTW_OUTPUT_ROOT";

/// Bad configuration or input schema (exit code 2).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::uint64_t seed = 0;
  int neighborhoods = 5;
  int width = 10;
  int height = 10;
  int window = 4;
  int stride = 2;
  std::vector<double> count_weights = MapGenConfig{}.count_weights;
  std::vector<double> category_weights = MapGenConfig::default_category_weights();
  SplitRule split{0, 8, 8, 0};  // seed is derived from `seed` by generate_dataset
};

struct EvalConfig {
  PredictionMode mode = PredictionMode::Argmax;
  int episodes = 1000;
};

struct FullTaskConfig {
  int maxsteps = 200;
  int attempts = 3;
  PredictionMode mode = PredictionMode::Sample;
  int episodes = 1000;
  std::string split = "test";
};

struct MascDumpConfig {
  int episodes = 20;
  std::string split = "test";
};

struct PathsConfig {
  std::string output_root = "ttw_out";
  std::string run_name;  // empty: derived from the model config and seed
};

/// One structured document holding every knob of a run.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;
  FullTaskConfig full_task;
  MascDumpConfig masc_dump;
  PathsConfig paths;

  nlohmann::json to_json() const;
  /// Keys missing from `j` keep their defaults; unknown keys and wrong types throw ValidationError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;

  /// Hash of everything except paths.
  std::string config_hash() const;
  /// Hash of the data section: runs with equal data hashes share maps and splits.
  std::string data_hash() const;
  /// Hash of the settings that must agree for runs to share a report table
  /// (data plus training hyperparameters other than channel, MASC, T and seed).
  std::string compat_hash() const;
  std::string run_name() const;
};

/// Defaults, then the file (if any), then each "dotted.key=value" override in order.
/// The output root default comes from TTW_OUTPUT_ROOT when set.
ExperimentConfig resolve_config(const std::optional<std::string>& file, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::string fnv1a_hex(const std::string& bytes);

struct Dataset {
  std::vector<GridMap> neighborhoods;
  SplitSpec split;
};

Dataset generate_dataset(const DataConfig& cfg);
const std::vector<GridMap>& split_maps(const SplitSpec& split, const std::string& name);

/// {tool_version, config_hash, seed} plus helpers shared by every output file.
nlohmann::json provenance(const ExperimentConfig& cfg);

struct Paths {
  std::string root;
  std::string data_dir() const { return root + "/data"; }
  std::string manifest() const { return data_dir() + "/manifest.json"; }
  std::string runs_dir() const { return root + "/runs"; }
  std::string run_dir(const std::string& name) const { return runs_dir() + "/" + name; }
};

Paths paths_of(const ExperimentConfig& cfg);

nlohmann::json manifest_json(const Dataset& data, const ExperimentConfig& cfg);
/// Reads and validates a manifest; throws ValidationError on schema or split violations.
SplitSpec load_manifest(const std::string& path, nlohmann::json* header = nullptr);

struct LoadedRun {
  std::string dir;
  nlohmann::json report;  // report.json
  Model model;
};

LoadedRun load_run(const std::string& run_dir);

// Commands. Each returns the paths it wrote (first entry the main output).
std::vector<std::string> cmd_gen_maps(const ExperimentConfig& cfg);
std::vector<std::string> cmd_train(const ExperimentConfig& cfg);
nlohmann::json cmd_eval_loc(const ExperimentConfig& cfg, const std::string& run_dir, const std::string& split);
/// Rows {map_id, T, content, accuracy} for every map of every split plus per-split means.
std::vector<std::string> cmd_upper_bound(const ExperimentConfig& cfg, const std::vector<int>& Ts,
                                         const std::vector<ChannelContent>& contents);
std::vector<std::string> cmd_full_task(const ExperimentConfig& cfg, const std::vector<std::string>& run_dirs,
                                       int T);
std::vector<std::string> cmd_dump_masc(const ExperimentConfig& cfg, const std::string& run_dir);
std::vector<std::string> cmd_report(const ExperimentConfig& cfg, bool allow_mixed);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace ttw
