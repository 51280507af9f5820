#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "advlab/experiment.hpp"
#include "advlab/report.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace advlab;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("advlab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kTinyConfig = R"({
  "name": "tiny",
  "method": "fgsm",
  "seeds": [3],
  "model": {"arch": "small_cnn", "widths": [4, 8]},
  "data": {"source": "synthetic", "synthetic": {"train": 96, "test": 48, "shape": [3, 8, 8], "margin": 4}},
  "train": {"epochs": 2, "batch_size": 32, "regularizer": "noiseaug"},
  "attack": {"eps": "8/255"},
  "probe": {"examples": 32, "pgd_steps": 3},
  "eval": {"examples": 32, "pgd_steps": 4, "pgd_restarts": 2, "linearity_examples": 16, "linearity_noise": 2,
           "profile_examples": 8, "profile_draws": 2}
})";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADVLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string polyline_points(const std::string& svg) {
  const auto start = svg.find("points=\"");
  if (start == std::string::npos) return {};
  const auto end = svg.find('"', start + 8);
  return svg.substr(start + 8, end - start - 8);
}

}  // namespace

TEST_CASE("config defaults and method-dependent attack recipes") {
  const auto fgsm = parse_run_config(R"({"method": "fgsm", "attack": {"eps": "16/255"}})");
  CHECK(fgsm.train.attack.eps == doctest::Approx(16.0 / 255));
  CHECK(fgsm.train.attack.alpha == doctest::Approx(1.25 * 16 / 255));
  CHECK(fgsm.train.attack.init == InitMode::kZero);
  CHECK(fgsm.train.noise.eps == fgsm.train.attack.eps);
  CHECK(fgsm.train.max_lr == 0.3);
  CHECK(fgsm.eval.pgd_steps == 50);
  CHECK(fgsm.eval.pgd_restarts == 10);

  const auto pgd = parse_run_config(R"({"method": "pgd", "attack": {"eps": 0.1, "steps": 7}})");
  CHECK(pgd.train.attack.family == AttackFamily::kPgd);
  CHECK(pgd.train.attack.alpha == doctest::Approx(0.05));
  CHECK(pgd.train.attack.steps == 7);
  CHECK(pgd.train.attack.init == InitMode::kRandom);

  const auto rs = parse_run_config(R"({"attack": {"init": "random", "alpha": "2 / 255"}, "noise": {"eps": 0.5}})");
  CHECK(rs.train.attack.init == InitMode::kRandom);
  CHECK(rs.train.attack.alpha == doctest::Approx(2.0 / 255));
  CHECK(rs.train.noise.eps == 0.5);

  CHECK(parse_budget("16/255") == 16.0 / 255.0);
  CHECK(parse_budget(" 0.25 ") == 0.25);
  CHECK_THROWS_AS(parse_budget("1/0"), ConfigError);
  CHECK_THROWS_AS(parse_budget("eight"), ConfigError);
}

TEST_CASE("config schema violations are rejected with the offending path") {
  auto message = [](const char* text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  CHECK(message(R"({"epochs": 3})").find("epochs: unknown key") != std::string::npos);
  CHECK(message(R"({"train": {"epoch": 3}})").find("train.epoch: unknown key") != std::string::npos);
  CHECK(message(R"({"data": {"synthetic": {"size": 3}}})").find("data.synthetic.size") != std::string::npos);
  CHECK(message(R"({"train": {"epochs": "ten"}})").find("train.epochs") != std::string::npos);
  CHECK(message(R"({"train": {"batch_size": -1}})").find("train.batch_size") != std::string::npos);
  CHECK(message(R"({"method": "trades"})").find("method") != std::string::npos);
  CHECK(message(R"({"train": {"regularizer": "noise"}})").find("train.regularizer") != std::string::npos);
  CHECK(message(R"({"model": {"arch": "resnet18"}})").find("model.arch") != std::string::npos);
  CHECK(message(R"({"seeds": [1, 1]})").find("duplicate") != std::string::npos);
  CHECK(message(R"({"method": "pgd", "train": {"regularizer": "gradalign"}})") != "accepted");
  CHECK(message(R"({"method": "standard", "train": {"regularizer": "noiseaug"}})") != "accepted");
  CHECK(message("[1, 2]") != "accepted");
  CHECK(message("{not json") != "accepted");
}

TEST_CASE("effective config round-trips exactly") {
  auto cfg = parse_run_config(kTinyConfig);
  const auto text = run_config_to_json(cfg);
  const auto again = parse_run_config(text);
  CHECK(run_config_to_json(again) == text);
  CHECK(again.train.attack.eps == cfg.train.attack.eps);
  CHECK(again.train.regularizer == Regularizer::kNoiseAug);
  CHECK(again.data.synthetic.shape == Shape{3, 8, 8});
}

TEST_CASE("epochs = 0 emits empty-history artifacts") {
  auto cfg = parse_run_config(kTinyConfig);
  cfg.train.epochs = 0;
  const auto out = scratch("zero");
  const auto data = load_experiment_data(cfg.data);
  const auto result = run_experiment(cfg, data, out);
  REQUIRE(result.seeds.size() == 1);
  CHECK(result.seeds[0].history.empty());
  CHECK(read_text_file(out / "seed_3" / "history.csv") == std::string(kHistoryCsvHeader) + "\n");
  CHECK(history_from_json(read_text_file(out / "seed_3" / "history.json")).empty());
  const auto svg = read_text_file(out / "seed_3" / "history.svg");
  CHECK(svg.find("<polyline") == std::string::npos);
  CHECK(svg.find("<line") != std::string::npos);
  for (const char* f : {"checkpoint.bin", "final_eval.json", "linearity.json", "co_verdict.json", "profile.json",
                        "filters.json", "meta.json", "timing.json"}) {
    CHECK(fs::exists(out / "seed_3" / f));
  }
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "effective_config.json"));
}

TEST_CASE("runs are bit-reproducible and the effective config replays them") {
  const auto cfg = parse_run_config(kTinyConfig);
  const auto data = load_experiment_data(cfg.data);
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto c = scratch("det_c");
  run_experiment(cfg, data, a);
  run_experiment(cfg, data, b);
  const auto replayed = parse_run_config(read_text_file(a / "effective_config.json"));
  run_experiment(replayed, load_experiment_data(replayed.data), c);

  for (const char* f : {"checkpoint.bin", "history.csv", "history.json", "final_eval.json", "linearity.json",
                        "co_verdict.json", "profile.json", "filters.json", "meta.json", "history.svg",
                        "linearity.svg", "profile.svg", "filters.svg"}) {
    CAPTURE(f);
    const auto ref = read_text_file(a / "seed_3" / f);
    CHECK(read_text_file(b / "seed_3" / f) == ref);
    CHECK(read_text_file(c / "seed_3" / f) == ref);
  }
  CHECK(read_text_file(a / "summary.json") == read_text_file(b / "summary.json"));
  CHECK(read_text_file(a / "summary.md") == read_text_file(c / "summary.md"));
  CHECK(history_from_csv(read_text_file(a / "seed_3" / "history.csv")).epochs.size() == 2);
}

TEST_CASE("svg viewport mapping") {
  Series s{"line", {0, 1}, {0, 1}, false, "#000000"};
  const auto svg = svg_line_chart(ChartSpec{}, std::span<const Series>(&s, 1));
  // (0,0) lands on the bottom-left corner of the plot area, (1,1) on the top-right.
  CHECK(polyline_points(svg) == "60.00,350.00 620.00,20.00");

  Series mid{"", {0, 2, 4}, {0, 50, 100}, true, "#000000"};
  ChartSpec fixed{"", "", "", std::pair{0.0, 4.0}, std::pair{0.0, 100.0}, {}};
  const auto svg2 = svg_line_chart(fixed, std::span<const Series>(&mid, 1));
  CHECK(polyline_points(svg2) == "60.00,350.00 340.00,185.00 620.00,20.00");
  CHECK(svg2.find("stroke-dasharray") != std::string::npos);
  CHECK(svg_line_chart(fixed, std::span<const Series>(&mid, 1)) == svg2);
  CHECK(svg2.find("viewBox=\"0 0 640 400\"") != std::string::npos);
}

TEST_CASE("history plot draws standard accuracy dashed and robust accuracy solid") {
  RunHistory h;
  for (int e = 1; e <= 3; ++e) {
    EpochRecord r;
    r.epoch = e;
    r.std_acc = 40 + e;
    r.fgsm_acc = 30;
    r.pgd_acc = 20;
    h.epochs.push_back(r);
  }
  const auto svg = plot_history_svg(h);
  // Three polylines; exactly the first (standard) is dashed.
  std::size_t lines = 0, dashed = 0;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) {
    const auto end = svg.find("/>", pos);
    const auto element = svg.substr(pos, end - pos);
    ++lines;
    if (element.find("stroke-dasharray") != std::string::npos) {
      ++dashed;
      // y = 41% at epoch 1 on a [0,100] axis.
      CHECK(element.find("60.00,214.70") != std::string::npos);
    }
  }
  CHECK(lines == 3);
  CHECK(dashed == 1);
  CHECK(plot_history_svg(h) == svg);
}

TEST_CASE("artifact json round trips") {
  RunHistory h;
  EpochRecord r;
  r.epoch = 1;
  r.std_acc = 12.5;
  r.fgsm_acc = std::numeric_limits<double>::quiet_NaN();
  h.epochs.push_back(r);
  const auto back = history_from_json(history_to_json(h));
  CHECK(back.epochs[0].std_acc == 12.5);
  CHECK(std::isnan(back.epochs[0].fgsm_acc));

  SensitivityProfile p{{1, 0.5}, {1, 0.25}, {"input", "conv0"}};
  const auto q = profile_from_json(profile_to_json(p));
  CHECK(q.forward_cos == p.forward_cos);
  CHECK(q.boundaries == p.boundaries);
  CHECK_THROWS_AS(profile_from_json("{\"boundaries\": [\"a\"], \"forward_cos\": [], \"backward_cos\": []}"),
                  FormatError);
  CHECK_THROWS_AS(history_from_json("{"), FormatError);
}

TEST_CASE("seed aggregation") {
  const double same[] = {42.5, 42.5, 42.5, 42.5, 42.5};
  const auto m = mean_std(same);
  CHECK(m.mean == 42.5);
  CHECK(m.std == 0.0);
  CHECK(format_mean_std(m) == "42.50 ± 0.00");
  const double two[] = {1.0, 3.0};
  CHECK(mean_std(two).std == doctest::Approx(std::sqrt(2.0)));
  CHECK(format_mean_std(mean_std(two)) == "2.00 ± 1.41");
}

TEST_CASE("compare table") {
  CompareRow fgsm{"fgsm", "fgsm", "PGD-50-10", {10, 20}, {0, 0}, {80, 90}, 2.0};
  CompareRow standard{"standard", "standard", "PGD-50-10", {90}, {0}, {5}, 1.0};
  const CompareRow one[] = {fgsm};
  const auto single = compare_table(one);
  CHECK(single.find("| fgsm | 15.00 ± 7.07 | 0.00 ± 0.00 | 85.00 ± 7.07 | 1.00 |") != std::string::npos);

  const CompareRow both[] = {fgsm, standard};
  const auto table = compare_table(both);
  CHECK(table.find("| Method | Standard | PGD-50-10 | FGSM | Time |") == 0);
  CHECK(table.find("| standard | 90.00 ± 0.00 | 0.00 ± 0.00 | 5.00 ± 0.00 | 1.00 |") != std::string::npos);
  CHECK(table.find("| fgsm | 15.00 ± 7.07 | 0.00 ± 0.00 | 85.00 ± 7.07 | 2.00 |") != std::string::npos);
}

TEST_CASE("FGSM training costs about twice standard training") {
  // Both runs see the same data and model; only the per-batch objective differs.
  auto cfg = parse_run_config(R"({
    "seeds": [0],
    "model": {"arch": "small_cnn", "widths": [16, 32]},
    "data": {"source": "synthetic", "synthetic": {"train": 512, "test": 16, "shape": [3, 32, 32]}},
    "train": {"epochs": 2},
    "probe": {"enabled": false},
    "eval": {"enabled": false}
  })");
  const auto data = load_experiment_data(cfg.data);
  const auto fgsm_dir = scratch("time_fgsm");
  const auto std_dir = scratch("time_std");
  cfg.name = "fgsm";
  run_experiment(cfg, data, fgsm_dir);
  cfg.name = "standard";
  cfg.method = TrainMethod::kStandard;
  run_experiment(cfg, data, std_dir);
  const CompareRow rows[] = {load_compare_row(std_dir), load_compare_row(fgsm_dir)};
  const double ratio = rows[1].seconds_per_epoch / rows[0].seconds_per_epoch;
  MESSAGE("FGSM / standard epoch time ratio: " << ratio);
  CHECK(ratio >= 1.0);
  CHECK(ratio <= 3.0);
  CHECK(compare_table(rows).find("| standard | n/a | n/a | n/a | 1.00 |") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("exit");
  write_text_file(dir / "bad.json", R"({"train": {"epochz": 1}})");
  CHECK(run_cli("run --config " + (dir / "bad.json").string()) == 2);

  write_text_file(dir / "nodata.json", R"({"data": {"source": "cifar10", "dir": ")" + (dir / "missing").string() +
                                            R"("}})");
  CHECK(run_cli("run --config " + (dir / "nodata.json").string()) != 0);

  write_text_file(dir / "broken.csv", "epoch,oops\n");
  CHECK(run_cli("plot --kind history " + (dir / "broken.csv").string()) != 0);
  CHECK(run_cli("plot --kind nonsense " + (dir / "broken.csv").string()) != 0);
  CHECK(run_cli("compare " + (dir / "nowhere").string()) != 0);

  auto cfg = parse_run_config(kTinyConfig);
  cfg.out = (dir / "run").string();
  cfg.train.epochs = 1;
  write_text_file(dir / "tiny.json", run_config_to_json(cfg));
  REQUIRE(run_cli("run --config " + (dir / "tiny.json").string() + " --seeds 5,6") == 0);
  CHECK(fs::exists(dir / "run" / "seed_5" / "history.csv"));
  CHECK(fs::exists(dir / "run" / "seed_6" / "checkpoint.bin"));
  CHECK(run_cli("eval --config " + (dir / "tiny.json").string() + " --seeds 5") == 0);
  CHECK(run_cli("plot --kind history " + (dir / "run" / "seed_5" / "history.csv").string() + " --out " +
                (dir / "h.svg").string()) == 0);
  CHECK(read_text_file(dir / "h.svg") == read_text_file(dir / "run" / "seed_5" / "history.svg"));
  CHECK(run_cli("plot --kind filters " + (dir / "run" / "seed_5" / "checkpoint.bin").string() + " --out " +
                (dir / "f.svg").string()) == 0);
  CHECK(read_text_file(dir / "f.svg") == read_text_file(dir / "run" / "seed_5" / "filters.svg"));
  CHECK(run_cli("compare --config " + (dir / "tiny.json").string() + " --out " + (dir / "t.md").string()) == 0);
  CHECK(read_text_file(dir / "t.md").find("| tiny |") != std::string::npos);
}
