#include "advlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "advlab/errors.hpp"
#include "advlab/experiment.hpp"
#include "json.hpp"

namespace advlab {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::pair<double, double> span_of(const std::optional<std::pair<double, double>>& fixed,
                                  std::span<const Series> series, bool use_x) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  if (fixed) {
    lo = fixed->first;
    hi = fixed->second;
  } else {
    for (const auto& s : series) {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (std::isnan(s.x[i]) || std::isnan(s.y[i])) continue;
        const double v = use_x ? s.x[i] : s.y[i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!std::isfinite(lo)) return {0.0, 1.0};
  }
  if (hi <= lo) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

}  // namespace

std::string svg_line_chart(const ChartSpec& spec, std::span<const Series> series) {
  const auto [x0, x1] = spec.x_categories.empty()
                            ? span_of(spec.x_range, series, true)
                            : std::pair<double, double>{0.0, std::max<double>(1.0, spec.x_categories.size() - 1.0)};
  const auto [y0, y1] = span_of(spec.y_range, series, false);
  auto px = [&](double x) { return kPlotLeft + (x - x0) / (x1 - x0) * (kPlotRight - kPlotLeft); };
  auto py = [&](double y) { return kPlotBottom - (y - y0) / (y1 - y0) * (kPlotBottom - kPlotTop); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  if (!spec.title.empty()) {
    out += "<text x=\"340\" y=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           escape(spec.title) + "</text>\n";
  }

  // Axes, grid and ticks.
  out += "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = kPlotBottom - i * (kPlotBottom - kPlotTop) / 5;
    out += "<line x1=\"60.00\" y1=\"" + num(y) + "\" x2=\"620.00\" y2=\"" + num(y) + "\"/>\n";
  }
  out += "</g>\n";
  out += "<line x1=\"60.00\" y1=\"350.00\" x2=\"620.00\" y2=\"350.00\" stroke=\"black\"/>\n";
  out += "<line x1=\"60.00\" y1=\"20.00\" x2=\"60.00\" y2=\"350.00\" stroke=\"black\"/>\n";
  out += "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = y0 + i * (y1 - y0) / 5;
    out += "<text x=\"54\" y=\"" + num(py(v) + 3) + "\" text-anchor=\"end\">" + tick(v) + "</text>\n";
  }
  if (spec.x_categories.empty()) {
    for (int i = 0; i <= 5; ++i) {
      const double v = x0 + i * (x1 - x0) / 5;
      out += "<text x=\"" + num(px(v)) + "\" y=\"364\" text-anchor=\"middle\">" + tick(v) + "</text>\n";
    }
  } else {
    for (std::size_t i = 0; i < spec.x_categories.size(); ++i) {
      out += "<text x=\"" + num(px(static_cast<double>(i))) + "\" y=\"364\" text-anchor=\"middle\">" +
             escape(spec.x_categories[i]) + "</text>\n";
    }
  }
  out += "<text x=\"340\" y=\"390\" text-anchor=\"middle\">" + escape(spec.x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"185\" text-anchor=\"middle\" transform=\"rotate(-90 14 185)\">" + escape(spec.y_label) +
         "</text>\n";
  out += "</g>\n";

  for (const auto& s : series) {
    const std::string style = "fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\"" +
                              (s.dashed ? " stroke-dasharray=\"6,4\"" : "");
    // Split the series at NaN gaps; a lone point becomes a dot.
    std::vector<std::pair<double, double>> run;
    auto flush = [&] {
      if (run.size() == 1) {
        out += "<circle cx=\"" + num(run[0].first) + "\" cy=\"" + num(run[0].second) + "\" r=\"2\" fill=\"" +
               s.color + "\"/>\n";
      } else if (run.size() > 1) {
        out += "<polyline " + style + " points=\"";
        for (std::size_t i = 0; i < run.size(); ++i) {
          if (i) out += ' ';
          out += num(run[i].first) + "," + num(run[i].second);
        }
        out += "\"/>\n";
      }
      run.clear();
    };
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isnan(s.x[i]) || std::isnan(s.y[i])) {
        flush();
        continue;
      }
      run.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    flush();
  }

  // Legend in the top-right corner of the plot area.
  double ly = kPlotTop + 14;
  for (const auto& s : series) {
    if (s.label.empty()) continue;
    out += "<line x1=\"470.00\" y1=\"" + num(ly - 4) + "\" x2=\"494.00\" y2=\"" + num(ly - 4) + "\" stroke=\"" +
           s.color + "\" stroke-width=\"2\"" + (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    out += "<text x=\"500\" y=\"" + num(ly) + "\" font-family=\"sans-serif\" font-size=\"10\">" + escape(s.label) +
           "</text>\n";
    ly += 14;
  }
  out += "</svg>\n";
  return out;
}

namespace {

std::vector<double> epochs_of(const RunHistory& h) {
  std::vector<double> x;
  for (const auto& r : h.epochs) x.push_back(r.epoch);
  return x;
}

template <typename F>
std::vector<double> column(const RunHistory& h, F field) {
  std::vector<double> y;
  for (const auto& r : h.epochs) y.push_back(field(r));
  return y;
}

double min_finite(std::span<const double> v, double floor) {
  for (double x : v) {
    if (std::isfinite(x)) floor = std::min(floor, x);
  }
  return floor;
}

}  // namespace

std::string plot_history_svg(const RunHistory& history) {
  const auto x = epochs_of(history);
  std::vector<Series> s;
  s.push_back({"standard", x, column(history, [](const EpochRecord& r) { return r.std_acc; }), true, "#1f77b4"});
  s.push_back({"FGSM", x, column(history, [](const EpochRecord& r) { return r.fgsm_acc; }), false, "#2ca02c"});
  s.push_back({"PGD", x, column(history, [](const EpochRecord& r) { return r.pgd_acc; }), false, "#d62728"});
  ChartSpec spec{"Accuracy per epoch", "epoch", "accuracy (%)", std::nullopt, std::pair{0.0, 100.0}, {}};
  return svg_line_chart(spec, s);
}

std::string plot_linearity_svg(const RunHistory& history) {
  const auto y = column(history, [](const EpochRecord& r) { return r.local_linearity; });
  std::vector<Series> s{{"local linearity", epochs_of(history), y, false, "#9467bd"}};
  ChartSpec spec{"Local linearity per epoch", "epoch", "cosine", std::nullopt, std::pair{min_finite(y, 0.0), 1.0},
                 {}};
  return svg_line_chart(spec, s);
}

std::string plot_profile_svg(const SensitivityProfile& profile) {
  std::vector<double> x(profile.forward_cos.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  std::vector<Series> s{{"features", x, profile.forward_cos, false, "#1f77b4"},
                        {"feature gradients", x, profile.backward_cos, false, "#ff7f0e"}};
  const double lo = std::min(min_finite(profile.forward_cos, 0.0), min_finite(profile.backward_cos, 0.0));
  ChartSpec spec{"Noise sensitivity by layer", "layer boundary", "cosine (clean vs noisy)", std::nullopt,
                 std::pair{lo, 1.0}, profile.boundaries};
  return svg_line_chart(spec, s);
}

std::string plot_filters_svg(std::span<const FilterKernel<float>> filters) {
  constexpr double kCell = 10;
  constexpr double kGap = 8;
  constexpr std::size_t kColumns = 8;
  std::size_t kh = 0, kw = 0;
  for (const auto& f : filters) {
    kh = std::max(kh, f.kernel.dim(1));
    kw = std::max(kw, f.kernel.dim(2));
  }
  const std::size_t cols = std::min(kColumns, std::max<std::size_t>(filters.size(), 1));
  const std::size_t rows = (filters.size() + cols - 1) / cols;
  const double width = kGap + cols * (kw * kCell + kGap);
  const double height = 24 + rows * (kh * kCell + kGap + 12);
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  out += "<rect width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"white\"/>\n";
  out += "<text x=\"8\" y=\"14\" font-family=\"sans-serif\" font-size=\"11\">First-layer filters</text>\n";
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const auto& k = filters[i].kernel;
    const std::size_t c = k.dim(0), h = k.dim(1), w = k.dim(2);
    const auto [lo_it, hi_it] = std::minmax_element(k.data().begin(), k.data().end());
    const double lo = *lo_it;
    const double range = std::max(static_cast<double>(*hi_it) - lo, 1e-12);
    auto level = [&](double v) { return static_cast<int>(std::lround(255.0 * (v - lo) / range)); };
    const double ox = kGap + static_cast<double>(i % cols) * (kw * kCell + kGap);
    const double oy = 24 + static_cast<double>(i / cols) * (kh * kCell + kGap + 12);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) {
        int rgb[3];
        if (c == 3) {
          for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch] = level(k[(ch * h + r) * w + q]);
        } else {
          double mean = 0;
          for (std::size_t ch = 0; ch < c; ++ch) mean += k[(ch * h + r) * w + q];
          rgb[0] = rgb[1] = rgb[2] = level(mean / static_cast<double>(c));
        }
        out += "<rect x=\"" + num(ox + q * kCell) + "\" y=\"" + num(oy + r * kCell) + "\" width=\"10.00\" " +
               "height=\"10.00\" fill=\"rgb(" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," +
               std::to_string(rgb[2]) + ")\"/>\n";
      }
    }
    out += "<text x=\"" + num(ox) + "\" y=\"" + num(oy + h * kCell + 10) +
           "\" font-family=\"sans-serif\" font-size=\"9\">" + escape(filters[i].name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

namespace {

double number_or_nan(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw FormatError("json: expected a number, got " + j.dump());
  return j.get<double>();
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

std::vector<double> doubles(const json& j) {
  if (!j.is_array()) throw FormatError("json: expected an array");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(number_or_nan(v));
  return out;
}

}  // namespace

std::string history_to_json(const RunHistory& history) {
  json rows = json::array();
  for (const auto& r : history.epochs) {
    rows.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"std_acc", r.std_acc},
                    {"fgsm_acc", r.fgsm_acc},
                    {"pgd_acc", r.pgd_acc},
                    {"local_linearity", r.local_linearity},
                    {"lr", r.lr}});
  }
  return json{{"epochs", rows}}.dump(2) + "\n";
}

RunHistory history_from_json(const std::string& text) {
  const auto j = parse_json(text, "history json");
  RunHistory h;
  try {
    for (const auto& row : j.at("epochs")) {
      EpochRecord r;
      r.epoch = row.at("epoch").get<int>();
      r.train_loss = number_or_nan(row.at("train_loss"));
      r.std_acc = number_or_nan(row.at("std_acc"));
      r.fgsm_acc = number_or_nan(row.at("fgsm_acc"));
      r.pgd_acc = number_or_nan(row.at("pgd_acc"));
      r.local_linearity = number_or_nan(row.at("local_linearity"));
      r.lr = number_or_nan(row.at("lr"));
      h.epochs.push_back(r);
    }
    h.validate();
  } catch (const json::exception& e) {
    throw FormatError(std::string("history json: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("history json: ") + e.what());
  }
  return h;
}

std::string profile_to_json(const SensitivityProfile& profile) {
  return json{{"boundaries", profile.boundaries},
              {"forward_cos", profile.forward_cos},
              {"backward_cos", profile.backward_cos}}
             .dump(2) +
         "\n";
}

SensitivityProfile profile_from_json(const std::string& text) {
  const auto j = parse_json(text, "profile json");
  SensitivityProfile p;
  try {
    p.boundaries = j.at("boundaries").get<std::vector<std::string>>();
    p.forward_cos = doubles(j.at("forward_cos"));
    p.backward_cos = doubles(j.at("backward_cos"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("profile json: ") + e.what());
  }
  if (p.forward_cos.size() != p.boundaries.size() || p.backward_cos.size() != p.boundaries.size()) {
    throw FormatError("profile json: boundaries and cosine lists differ in length");
  }
  return p;
}

std::string filters_to_json(std::span<const FilterKernel<float>> filters) {
  json arr = json::array();
  for (const auto& f : filters) {
    arr.push_back({{"name", f.name},
                   {"shape", f.kernel.shape()},
                   {"values", f.kernel.values()},
                   {"channel_min", f.channel_min},
                   {"channel_max", f.channel_max}});
  }
  return json{{"filters", arr}}.dump(2) + "\n";
}

std::vector<FilterKernel<float>> filters_from_json(const std::string& text) {
  const auto j = parse_json(text, "filters json");
  std::vector<FilterKernel<float>> out;
  try {
    for (const auto& f : j.at("filters")) {
      FilterKernel<float> k;
      k.name = f.at("name").get<std::string>();
      auto shape = f.at("shape").get<Shape>();
      if (shape.size() != 3) throw FormatError("filters json: kernel shape must be [C,kh,kw]");
      k.kernel = Tensor<float>(std::move(shape), f.at("values").get<std::vector<float>>());
      k.channel_min = f.at("channel_min").get<std::vector<float>>();
      k.channel_max = f.at("channel_max").get<std::vector<float>>();
      out.push_back(std::move(k));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("filters json: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("filters json: ") + e.what());
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string format_mean_std(const MeanStd& m) {
  if (std::isnan(m.mean)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

CompareRow load_compare_row(const std::filesystem::path& run_dir) {
  const auto summary_path = run_dir / "summary.json";
  if (!std::filesystem::exists(summary_path)) {
    throw FormatError("compare: " + summary_path.string() + " is missing; run the experiment first");
  }
  const auto j = parse_json(read_text_file(summary_path), "summary json");
  CompareRow row;
  double seconds = 0;
  double epochs = 0;
  try {
    row.label = j.at("name").get<std::string>();
    row.method = j.at("method").get<std::string>();
    const auto& ev = j.at("eval");
    row.pgd_name = "PGD-" + std::to_string(ev.at("pgd_steps").get<int>()) + "-" +
                   std::to_string(ev.at("pgd_restarts").get<int>());
    for (const auto& s : j.at("per_seed")) {
      row.std_acc.push_back(number_or_nan(s.at("std_acc")));
      row.pgd_acc.push_back(number_or_nan(s.at("pgd_acc")));
      row.fgsm_acc.push_back(number_or_nan(s.at("fgsm_acc")));
      const auto timing_path = run_dir / ("seed_" + std::to_string(s.at("seed").get<std::uint64_t>())) / "timing.json";
      if (!std::filesystem::exists(timing_path)) throw FormatError("compare: missing " + timing_path.string());
      const auto t = parse_json(read_text_file(timing_path), "timing json");
      seconds += t.at("train_seconds").get<double>();
      epochs += static_cast<double>(t.at("epoch_seconds").size());
    }
  } catch (const json::exception& e) {
    throw FormatError("compare: " + run_dir.string() + ": " + e.what());
  }
  row.seconds_per_epoch = epochs > 0 ? seconds / epochs : 0.0;
  return row;
}

std::string compare_table(std::span<const CompareRow> rows) {
  if (rows.empty()) throw ContractError("compare: no runs given");
  std::size_t anchor = 0;
  bool standard_anchor = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].method == "standard") {
      anchor = i;
      standard_anchor = true;
      break;
    }
  }
  const double base = rows[anchor].seconds_per_epoch;
  std::string out = "| Method | Standard | " + rows.front().pgd_name + " | FGSM | Time |\n";
  out += "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string time = "n/a";
    if (base > 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", r.seconds_per_epoch / base);
      time = buf;
    }
    out += "| " + r.label + " | " + format_mean_std(mean_std(r.std_acc)) + " | " +
           format_mean_std(mean_std(r.pgd_acc)) + " | " + format_mean_std(mean_std(r.fgsm_acc)) + " | " + time +
           " |\n";
  }
  out += standard_anchor ? "\nTime is relative to standard training (" + rows[anchor].label + ").\n"
                         : "\nTime is relative to " + rows[anchor].label + " (no standard-training run given).\n";
  return out;
}

}  // namespace advlab
