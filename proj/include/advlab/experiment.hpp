#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advlab/diagnostics.hpp"
#include "advlab/training.hpp"

namespace advlab {

struct ModelSpec {
  std::string arch = "small_cnn";  // small_cnn | toy_cnn | mlp
  std::vector<std::size_t> widths{16, 32};
  std::size_t filters = 4;
  std::vector<std::size_t> hidden{256};
};

struct SyntheticSpec {
  std::size_t train = 2000;
  std::size_t test = 500;
  Shape shape{3, 32, 32};
  double margin = 3.0;
  std::uint64_t seed = 1;
};

struct DataSpec {
  std::string source = "cifar10";  // cifar10 | synthetic
  /// Directory holding the CIFAR-10 binary batches. Empty means "use the
  /// ADVLAB_CIFAR10_DIR environment variable".
  std::string dir;
  std::size_t train_subset = 10000;  // 0 keeps every example
  std::size_t test_subset = 1000;
  std::uint64_t subset_seed = 0;
  SyntheticSpec synthetic;
};

/// Measurements taken once, after the last epoch, on the test split.
struct EvalSpec {
  bool enabled = true;
  std::size_t examples = 1000;  // 0 means the whole test split
  int pgd_steps = 50;
  int pgd_restarts = 10;
  std::size_t linearity_examples = 512;
  int linearity_noise = 8;
  std::size_t profile_examples = 256;
  int profile_draws = 4;
};

struct RunConfig {
  std::string name = "run";
  TrainMethod method = TrainMethod::kFgsm;
  ModelSpec model;
  DataSpec data;
  TrainConfig train;  // train.seed is replaced by each entry of `seeds`
  EvalSpec eval;
  CoThresholds co;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs/run";

  /// Schema-level checks beyond what the parser enforces; ConfigError.
  void validate() const;
};

/// Parses a run config. Missing keys take defaults, unknown keys and
/// ill-typed values raise ConfigError naming the offending path. Budgets
/// (attack.eps, attack.alpha, noise.eps) accept numbers or strings such as
/// "16/255". Omitted attack fields follow the method's training recipe.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field spelled out, so parsing the text reproduces `cfg` exactly.
std::string run_config_to_json(const RunConfig& cfg);

/// Parses "0.5", "16/255" or "8 / 255".
double parse_budget(std::string_view text);

struct ExperimentData {
  Dataset train;
  Dataset test;
};

/// Resolves the data source. For CIFAR-10 the directory is, in order:
/// `dir_override`, spec.dir, then $ADVLAB_CIFAR10_DIR. DataError-style
/// failures surface as ConfigError (nothing configured) or FormatError.
ExperimentData load_experiment_data(const DataSpec& spec, const std::string& dir_override = {});

template <typename T>
Model<T> build_model(const ModelSpec& spec, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed);

struct FinalEval {
  std::size_t examples = 0;
  double std_acc = 0;
  double fgsm_acc = 0;
  double pgd_acc = 0;
  double linearity = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  RunHistory history;
  std::optional<FinalEval> final_eval;
  CoVerdict co;
  SensitivityProfile profile;
  double train_seconds = 0;
};

struct RunResult {
  std::vector<SeedResult> seeds;
};

/// Final measurements of a trained model on `test`.
FinalEval final_evaluation(const Model<float>& model, const Dataset& test, const RunConfig& cfg, std::uint64_t seed);

/// Trains and evaluates every seed of `cfg`, writing artifacts under `out`:
///
///   out/effective_config.json, summary.json, summary.md
///   out/seed_<s>/checkpoint.bin, history.csv, history.json, final_eval.json,
///       linearity.json, co_verdict.json, profile.json, filters.json,
///       meta.json, timing.json, history.svg, linearity.svg, profile.svg,
///       filters.svg
///
/// Only timing.json depends on the wall clock. Progress goes to `log`.
RunResult run_experiment(const RunConfig& cfg, const ExperimentData& data, const std::filesystem::path& out,
                         std::ostream* log = nullptr);

/// Re-evaluates the checkpoints of a finished run and rewrites the
/// final_eval.json and linearity.json of every seed.
std::vector<FinalEval> evaluate_run(const RunConfig& cfg, const ExperimentData& data, const std::filesystem::path& out,
                                    std::ostream* log = nullptr);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace advlab
