#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advlab/checkpoint.hpp"
#include "advlab/experiment.hpp"
#include "advlab/report.hpp"

namespace fs = std::filesystem;
using namespace advlab;

namespace {

// Exit codes: 0 ok, 1 runtime or data failure, 2 invalid config or usage.
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct RunArgs {
  std::string config;
  std::string out;
  std::string data;
  std::vector<std::uint64_t> seeds;
};

RunConfig resolve(const RunArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.out.empty()) cfg.out = a.out;
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (!a.data.empty()) cfg.data.dir = a.data;
  cfg.validate();
  return cfg;
}

void add_run_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "Output directory (overrides the config's \"out\")");
  cmd->add_option("--seeds", a.seeds, "Comma-separated seed list (overrides the config)")->delimiter(',');
  cmd->add_option("--data", a.data, "CIFAR-10 directory (overrides data.dir and $ADVLAB_CIFAR10_DIR)");
}

int cmd_run(const RunArgs& a) {
  const RunConfig cfg = resolve(a);
  const ExperimentData data = load_experiment_data(cfg.data);
  std::cout << "train " << data.train.size() << " / test " << data.test.size() << " examples, writing to "
            << cfg.out << "\n";
  run_experiment(cfg, data, cfg.out, &std::cout);
  std::cout << read_text_file(fs::path(cfg.out) / "summary.md");
  return 0;
}

int cmd_eval(const RunArgs& a) {
  const RunConfig cfg = resolve(a);
  const ExperimentData data = load_experiment_data(cfg.data);
  evaluate_run(cfg, data, cfg.out, &std::cout);
  std::cout << read_text_file(fs::path(cfg.out) / "summary.md");
  return 0;
}

RunHistory read_history(const fs::path& p) {
  const auto text = read_text_file(p);
  return p.extension() == ".json" ? history_from_json(text) : history_from_csv(text);
}

int cmd_plot(const std::string& kind, const std::string& input, const std::string& output) {
  std::string svg;
  if (kind == "history") {
    svg = plot_history_svg(read_history(input));
  } else if (kind == "linearity") {
    svg = plot_linearity_svg(read_history(input));
  } else if (kind == "profile") {
    svg = plot_profile_svg(profile_from_json(read_text_file(input)));
  } else {
    // A checkpoint works as well as a filters.json dump.
    const fs::path p(input);
    const auto filters = p.extension() == ".json" ? filters_from_json(read_text_file(p))
                                                  : dump_filters(load_checkpoint<float>(p));
    svg = plot_filters_svg(filters);
  }
  if (output.empty()) {
    std::cout << svg;
  } else {
    write_text_file(output, svg);
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& inputs, const std::string& output) {
  std::vector<CompareRow> rows;
  for (const auto& in : inputs) {
    // A config file stands for its output directory.
    const fs::path dir = fs::is_directory(in) ? fs::path(in) : fs::path(load_run_config(in).out);
    rows.push_back(load_compare_row(dir));
  }
  const auto table = compare_table(rows);
  if (!output.empty()) write_text_file(output, table);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advlab: adversarial training experiments"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Train and evaluate every seed of a config");
  add_run_flags(run, run_args);

  RunArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Re-evaluate the checkpoints of a finished run");
  add_run_flags(eval, eval_args);

  std::string plot_kind, plot_input, plot_out;
  auto* plot = app.add_subcommand("plot", "Render an SVG from a run artifact");
  plot->add_option("--kind", plot_kind, "history | linearity | profile | filters")
      ->required()
      ->check(CLI::IsMember({"history", "linearity", "profile", "filters"}));
  plot->add_option("input", plot_input, "history.csv/json, profile.json, filters.json or checkpoint.bin")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "SVG path (stdout when omitted)");

  std::vector<std::string> compare_inputs, compare_configs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Tabulate finished runs as markdown");
  compare->add_option("runs", compare_inputs, "Run directories or config files");
  compare->add_option("--config", compare_configs, "Config whose output directory to include (repeatable)");
  compare->add_option("--out", compare_out, "Markdown path (stdout only when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_args);
    if (*eval) return cmd_eval(eval_args);
    if (*plot) return cmd_plot(plot_kind, plot_input, plot_out);
    if (*compare) {
      auto all = compare_configs;
      all.insert(all.end(), compare_inputs.begin(), compare_inputs.end());
      if (all.empty()) {
        std::cerr << "error: compare needs at least one run directory or --config\n";
        return kExitConfig;
      }
      return cmd_compare(all, compare_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}
