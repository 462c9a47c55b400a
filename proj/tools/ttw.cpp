// ttw: command-line entry point for the localization lab.

#include <iostream>

#include <CLI11.hpp>

#include "ttw/harness.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;

  ttw::ExperimentConfig resolve() const {
    return ttw::resolve_config(config_file.empty() ? std::nullopt : std::optional<std::string>(config_file),
                               overrides);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "JSON experiment config");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set train.T=2 (repeatable)");
}

void print_paths(const std::vector<std::string>& paths) {
  for (const auto& p : paths) std::cout << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Talk-The-Walk localization lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ttw::kToolVersion);

  Common gen_c, train_c, eval_c, ub_c, ft_c, dump_c, report_c, show_c;

  auto* gen = app.add_subcommand("gen-maps", "Generate neighborhoods, 4x4 maps and the split manifest");
  add_common(gen, gen_c);

  auto* trn = app.add_subcommand("train", "Train a tourist/guide pair; writes checkpoint, report and curves");
  add_common(trn, train_c);

  std::string eval_run, eval_split = "test";
  auto* ev = app.add_subcommand("eval-loc", "Localization accuracy of a trained run on one split");
  add_common(ev, eval_c);
  ev->add_option("--run", eval_run, "Run directory")->required();
  ev->add_option("--split", eval_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));

  std::vector<int> ub_T{0, 1, 2, 3};
  std::vector<std::string> ub_content{"obs_only", "obs_and_actions"};
  auto* ub = app.add_subcommand("upper-bound", "Exact Bayes localization accuracy per map");
  add_common(ub, ub_c);
  ub->add_option("--T", ub_T, "Episode lengths");
  ub->add_option("--content", ub_content, "obs_only and/or obs_and_actions")
      ->check(CLI::IsMember({"obs_only", "obs_and_actions"}));

  std::vector<std::string> ft_runs;
  int ft_T = -1;
  auto* ft = app.add_subcommand("full-task", "Random-walk protocol for runs plus random and oracle baselines");
  add_common(ft, ft_c);
  ft->add_option("--run", ft_runs, "Run directories (repeatable)");
  ft->add_option("--T", ft_T, "Window length of the baseline rows (default train.T)");

  std::string dump_run;
  auto* dump = app.add_subcommand("dump-masc", "Write MASC masks of sampled episodes as JSON lines");
  add_common(dump, dump_c);
  dump->add_option("--run", dump_run, "Run directory")->required();

  bool allow_mixed = false;
  auto* rep = app.add_subcommand("report", "Combined accuracy table over all runs");
  add_common(rep, report_c);
  rep->add_flag("--allow-mixed", allow_mixed, "Combine runs with incompatible configs");

  auto* show = app.add_subcommand("show-config", "Print the resolved config");
  add_common(show, show_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      print_paths(ttw::cmd_gen_maps(gen_c.resolve()));
    } else if (*trn) {
      print_paths(ttw::cmd_train(train_c.resolve()));
    } else if (*ev) {
      std::cout << ttw::cmd_eval_loc(eval_c.resolve(), eval_run, eval_split).dump(2) << "\n";
    } else if (*ub) {
      std::vector<ttw::ChannelContent> contents;
      for (const auto& c : ub_content) contents.push_back(ttw::parse_content(c));
      print_paths(ttw::cmd_upper_bound(ub_c.resolve(), ub_T, contents));
    } else if (*ft) {
      const ttw::ExperimentConfig cfg = ft_c.resolve();
      print_paths(ttw::cmd_full_task(cfg, ft_runs, ft_T >= 0 ? ft_T : cfg.train.model.T));
    } else if (*dump) {
      print_paths(ttw::cmd_dump_masc(dump_c.resolve(), dump_run));
    } else if (*rep) {
      const auto paths = ttw::cmd_report(report_c.resolve(), allow_mixed);
      std::cout << ttw::read_file(paths.at(1));
    } else if (*show) {
      std::cout << show_c.resolve().to_json().dump(2) << "\n";
    }
  } catch (const ttw::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
