#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advlab/diagnostics.hpp"
#include "advlab/models.hpp"

namespace advlab {

// Every chart uses the same 640x400 canvas. Data coordinates map affinely
// onto the plot area [kPlotLeft, kPlotRight] x [kPlotTop, kPlotBottom], with
// the y axis pointing up.
inline constexpr double kSvgWidth = 640;
inline constexpr double kSvgHeight = 400;
inline constexpr double kPlotLeft = 60;
inline constexpr double kPlotRight = 620;
inline constexpr double kPlotTop = 20;
inline constexpr double kPlotBottom = 350;

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // NaN entries break the line
  bool dashed = false;
  std::string color = "#1f77b4";
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// Fixed axis ranges; absent ranges span the data (or [0,1] without data).
  std::optional<std::pair<double, double>> x_range;
  std::optional<std::pair<double, double>> y_range;
  /// Category names drawn at x = 0, 1, 2, ... instead of numeric ticks.
  std::vector<std::string> x_categories;
};

std::string svg_line_chart(const ChartSpec& spec, std::span<const Series> series);

/// Standard accuracy dashed, FGSM and PGD accuracy solid.
std::string plot_history_svg(const RunHistory& history);
std::string plot_linearity_svg(const RunHistory& history);
std::string plot_profile_svg(const SensitivityProfile& profile);
/// One tile per filter; RGB kernels in colour, others in grey, each tile
/// min-max normalised on its own.
std::string plot_filters_svg(std::span<const FilterKernel<float>> filters);

std::string history_to_json(const RunHistory& history);
RunHistory history_from_json(const std::string& text);
std::string profile_to_json(const SensitivityProfile& profile);
SensitivityProfile profile_from_json(const std::string& text);
std::string filters_to_json(std::span<const FilterKernel<float>> filters);
std::vector<FilterKernel<float>> filters_from_json(const std::string& text);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

/// "87.82 ± 8.53"
std::string format_mean_std(const MeanStd& m);

/// One method of a comparison: per-seed final metrics plus training speed.
struct CompareRow {
  std::string label;
  std::string method;
  std::string pgd_name = "PGD-50-10";
  std::vector<double> std_acc;
  std::vector<double> pgd_acc;
  std::vector<double> fgsm_acc;
  double seconds_per_epoch = 0;
};

/// Reads summary.json and the per-seed timing.json files of a run directory.
CompareRow load_compare_row(const std::filesystem::path& run_dir);

/// Markdown table with Standard / PGD-50-10 / FGSM / Time columns. Time is
/// relative to the standard-training row, or to the first row when no run
/// used standard training (a note under the table says which).
std::string compare_table(std::span<const CompareRow> rows);

}  // namespace advlab
