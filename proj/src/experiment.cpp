#include "advlab/experiment.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "advlab/checkpoint.hpp"
#include "advlab/report.hpp"
#include "json.hpp"

namespace advlab {

using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config: " + (path.empty() ? std::string("<root>") : path) + ": " + msg);
}

// Strict view of one JSON object: every key read is remembered, and finish()
// rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_fail(path_, "expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const char* key, bool& dst) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) config_fail(at(key), "expected true or false");
      dst = v->get<bool>();
    }
  }

  void get(const char* key, int& dst) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) config_fail(at(key), "expected an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        config_fail(at(key), "integer out of range");
      }
      dst = static_cast<int>(x);
    }
  }

  template <typename U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  void get(const char* key, U& dst) {
    if (const json* v = find(key)) {
      const auto x = unsigned_value(*v, at(key));
      if (x > std::numeric_limits<U>::max()) config_fail(at(key), "integer out of range");
      dst = static_cast<U>(x);
    }
  }

  void get(const char* key, double& dst) {
    if (const json* v = find(key)) {
      if (!v->is_number()) config_fail(at(key), "expected a number");
      dst = v->get<double>();
    }
  }

  void get(const char* key, std::string& dst) {
    if (const json* v = find(key)) {
      if (!v->is_string()) config_fail(at(key), "expected a string");
      dst = v->get<std::string>();
    }
  }

  void get(const char* key, std::vector<std::size_t>& dst) {
    if (const json* v = find(key)) {
      if (!v->is_array()) config_fail(at(key), "expected an array of non-negative integers");
      dst.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        dst.push_back(unsigned_value((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }

  /// Number or fraction string such as "16/255".
  std::optional<double> budget(const char* key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (v->is_number()) return v->get<double>();
    if (v->is_string()) {
      try {
        return parse_budget(v->get<std::string>());
      } catch (const ConfigError& e) {
        config_fail(at(key), e.what());
      }
    }
    config_fail(at(key), "expected a number or a fraction string like \"8/255\"");
  }

  std::optional<Section> child(const char* key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return Section(*v, at(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) config_fail(at(key.c_str()), "unknown key");
    }
  }

 private:
  static std::uint64_t unsigned_value(const json& v, const std::string& where) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      config_fail(where, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& text, std::initializer_list<E> options, const std::string& where) {
  std::string names;
  for (E e : options) {
    if (to_string(e) == text) return e;
    names += (names.empty() ? "" : ", ") + to_string(e);
  }
  config_fail(where, "unknown value \"" + text + "\" (expected one of " + names + ")");
}

constexpr std::initializer_list<TrainMethod> kMethods = {TrainMethod::kStandard, TrainMethod::kFgsm, TrainMethod::kPgd};
constexpr std::initializer_list<Regularizer> kRegularizers = {Regularizer::kNone, Regularizer::kNoiseAug,
                                                              Regularizer::kNoiseAugMixed, Regularizer::kGradAlign,
                                                              Regularizer::kLogitAlign};
constexpr std::initializer_list<Augmentation> kAugmentations = {Augmentation::kNone, Augmentation::kCutout,
                                                                Augmentation::kMixup, Augmentation::kCutmix};
constexpr std::initializer_list<InitMode> kInits = {InitMode::kZero, InitMode::kRandom};
constexpr std::initializer_list<NoiseDist> kDists = {NoiseDist::kUniform, NoiseDist::kGaussian};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& s, std::string_view whole) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("cannot parse budget \"" + std::string(whole) + "\"");
  }
  return v;
}

}  // namespace

double parse_budget(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return parse_number(trim(text), text);
  const double num = parse_number(trim(text.substr(0, slash)), text);
  const double den = parse_number(trim(text.substr(slash + 1)), text);
  if (den == 0) throw ConfigError("budget \"" + std::string(text) + "\" divides by zero");
  return num / den;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& where, const std::string& msg) { config_fail(where, msg); };
  if (name.empty()) fail("name", "must not be empty");
  if (name.find('/') != std::string::npos) fail("name", "must not contain '/'");
  if (out.empty()) fail("out", "must not be empty");
  if (seeds.empty()) fail("seeds", "need at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds", "duplicate seed");
  if (model.arch == "small_cnn") {
    if (model.widths.empty()) fail("model.widths", "need at least one width");
    for (auto w : model.widths) {
      if (w == 0) fail("model.widths", "widths must be positive");
    }
  } else if (model.arch == "toy_cnn") {
    if (model.filters == 0) fail("model.filters", "must be positive");
  } else if (model.arch == "mlp") {
    for (auto h : model.hidden) {
      if (h == 0) fail("model.hidden", "widths must be positive");
    }
  } else {
    fail("model.arch", "unknown architecture \"" + model.arch + "\" (expected small_cnn, toy_cnn or mlp)");
  }
  if (data.source == "synthetic") {
    if (data.synthetic.train == 0 || data.synthetic.test == 0) fail("data.synthetic", "train and test must be > 0");
    if (data.synthetic.shape.size() != 3) fail("data.synthetic.shape", "expected [C,H,W]");
    for (auto d : data.synthetic.shape) {
      if (d == 0) fail("data.synthetic.shape", "extents must be positive");
    }
    if (!(data.synthetic.margin >= 0)) fail("data.synthetic.margin", "must be >= 0");
  } else if (data.source != "cifar10") {
    fail("data.source", "unknown source \"" + data.source + "\" (expected cifar10 or synthetic)");
  }
  if (eval.enabled) {
    if (eval.pgd_steps < 1 || eval.pgd_restarts < 1) fail("eval", "pgd_steps and pgd_restarts must be >= 1");
    if (eval.linearity_examples < 1 || eval.linearity_noise < 1) fail("eval", "linearity sizes must be >= 1");
    if (eval.profile_examples < 1 || eval.profile_draws < 1) fail("eval", "profile sizes must be >= 1");
  }
  if (!(co.drop_pts >= 0) || !(co.floor_pts >= 0) || !(co.fgsm_min >= 0)) fail("co", "thresholds must be >= 0");
  train.validate(method);
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "");
  top.get("name", cfg.name);
  std::string method = to_string(cfg.method);
  top.get("method", method);
  cfg.method = parse_enum(method, kMethods, "method");
  top.get("out", cfg.out);
  if (const json* seeds = top.find("seeds")) {
    if (!seeds->is_array()) config_fail("seeds", "expected an array of non-negative integers");
    cfg.seeds.clear();
    for (const auto& s : *seeds) {
      if (!s.is_number_unsigned()) config_fail("seeds", "expected an array of non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }

  if (auto m = top.child("model")) {
    m->get("arch", cfg.model.arch);
    m->get("widths", cfg.model.widths);
    m->get("filters", cfg.model.filters);
    m->get("hidden", cfg.model.hidden);
    m->finish();
  }

  if (auto d = top.child("data")) {
    d->get("source", cfg.data.source);
    d->get("dir", cfg.data.dir);
    d->get("train_subset", cfg.data.train_subset);
    d->get("test_subset", cfg.data.test_subset);
    d->get("subset_seed", cfg.data.subset_seed);
    if (auto s = d->child("synthetic")) {
      s->get("train", cfg.data.synthetic.train);
      s->get("test", cfg.data.synthetic.test);
      s->get("shape", cfg.data.synthetic.shape);
      s->get("margin", cfg.data.synthetic.margin);
      s->get("seed", cfg.data.synthetic.seed);
      s->finish();
    }
    d->finish();
  }

  TrainConfig& t = cfg.train;
  if (auto tr = top.child("train")) {
    tr->get("epochs", t.epochs);
    tr->get("batch_size", t.batch_size);
    tr->get("max_lr", t.max_lr);
    tr->get("momentum", t.momentum);
    tr->get("weight_decay", t.weight_decay);
    std::string reg = to_string(t.regularizer);
    tr->get("regularizer", reg);
    t.regularizer = parse_enum(reg, kRegularizers, tr->at("regularizer"));
    tr->get("lambda", t.lambda);
    std::string aug = to_string(t.augmentation);
    tr->get("augmentation", aug);
    t.augmentation = parse_enum(aug, kAugmentations, tr->at("augmentation"));
    tr->get("cutout_patch", t.cutout_patch);
    tr->get("mix_alpha", t.mix_alpha);
    tr->get("detach_clean_logits", t.detach_clean_logits);
    tr->get("shuffle", t.shuffle);
    tr->get("drop_last", t.drop_last);
    tr->finish();
  }

  // The attack recipe depends on the method; explicit fields override it.
  double eps = 8.0 / 255.0;
  std::optional<Section> atk = top.child("attack");
  if (atk) {
    if (auto e = atk->budget("eps")) eps = *e;
  }
  if (!(eps >= 0)) config_fail("attack.eps", "must be >= 0");
  t.attack = cfg.method == TrainMethod::kPgd ? AttackSpec::pgd_training(eps) : AttackSpec::fgsm_training(eps);
  if (atk) {
    if (auto a = atk->budget("alpha")) t.attack.alpha = *a;
    atk->get("steps", t.attack.steps);
    atk->get("restarts", t.attack.restarts);
    std::string init = to_string(t.attack.init);
    atk->get("init", init);
    t.attack.init = parse_enum(init, kInits, atk->at("init"));
    atk->get("init_scale", t.attack.init_scale);
    atk->get("clip_image_range", t.attack.clip_image_range);
    atk->finish();
  }

  t.noise.eps = eps;
  if (auto n = top.child("noise")) {
    std::string dist = to_string(t.noise.dist);
    n->get("dist", dist);
    t.noise.dist = parse_enum(dist, kDists, n->at("dist"));
    n->get("scale", t.noise.scale);
    if (auto e = n->budget("eps")) t.noise.eps = *e;
    n->get("clip_image_range", t.noise.clip_image_range);
    n->finish();
  }

  if (auto p = top.child("probe")) {
    p->get("enabled", t.probe.enabled);
    p->get("examples", t.probe.examples);
    p->get("pgd_steps", t.probe.pgd_steps);
    p->get("pgd_restarts", t.probe.pgd_restarts);
    p->get("linearity_noise", t.probe.linearity_noise);
    p->finish();
  }

  if (auto e = top.child("eval")) {
    e->get("enabled", cfg.eval.enabled);
    e->get("examples", cfg.eval.examples);
    e->get("pgd_steps", cfg.eval.pgd_steps);
    e->get("pgd_restarts", cfg.eval.pgd_restarts);
    e->get("linearity_examples", cfg.eval.linearity_examples);
    e->get("linearity_noise", cfg.eval.linearity_noise);
    e->get("profile_examples", cfg.eval.profile_examples);
    e->get("profile_draws", cfg.eval.profile_draws);
    e->finish();
  }

  if (auto c = top.child("co")) {
    c->get("drop_pts", cfg.co.drop_pts);
    c->get("floor_pts", cfg.co.floor_pts);
    c->get("fgsm_min", cfg.co.fgsm_min);
    c->finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const FormatError&) {
    throw ConfigError("config: cannot read " + path.string());
  }
  return parse_run_config(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  json j;
  j["name"] = cfg.name;
  j["method"] = to_string(cfg.method);
  j["seeds"] = cfg.seeds;
  j["out"] = cfg.out;
  j["model"] = {{"arch", cfg.model.arch},
                {"widths", cfg.model.widths},
                {"filters", cfg.model.filters},
                {"hidden", cfg.model.hidden}};
  const auto& s = cfg.data.synthetic;
  j["data"] = {{"source", cfg.data.source},
               {"dir", cfg.data.dir},
               {"train_subset", cfg.data.train_subset},
               {"test_subset", cfg.data.test_subset},
               {"subset_seed", cfg.data.subset_seed},
               {"synthetic",
                {{"train", s.train}, {"test", s.test}, {"shape", s.shape}, {"margin", s.margin}, {"seed", s.seed}}}};
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"max_lr", t.max_lr},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"regularizer", to_string(t.regularizer)},
                {"lambda", t.lambda},
                {"augmentation", to_string(t.augmentation)},
                {"cutout_patch", t.cutout_patch},
                {"mix_alpha", t.mix_alpha},
                {"detach_clean_logits", t.detach_clean_logits},
                {"shuffle", t.shuffle},
                {"drop_last", t.drop_last}};
  j["attack"] = {{"eps", t.attack.eps},
                 {"alpha", t.attack.alpha},
                 {"steps", t.attack.steps},
                 {"restarts", t.attack.restarts},
                 {"init", to_string(t.attack.init)},
                 {"init_scale", t.attack.init_scale},
                 {"clip_image_range", t.attack.clip_image_range}};
  j["noise"] = {{"dist", to_string(t.noise.dist)},
                {"scale", t.noise.scale},
                {"eps", t.noise.eps},
                {"clip_image_range", t.noise.clip_image_range}};
  j["probe"] = {{"enabled", t.probe.enabled},
                {"examples", t.probe.examples},
                {"pgd_steps", t.probe.pgd_steps},
                {"pgd_restarts", t.probe.pgd_restarts},
                {"linearity_noise", t.probe.linearity_noise}};
  j["eval"] = {{"enabled", cfg.eval.enabled},
               {"examples", cfg.eval.examples},
               {"pgd_steps", cfg.eval.pgd_steps},
               {"pgd_restarts", cfg.eval.pgd_restarts},
               {"linearity_examples", cfg.eval.linearity_examples},
               {"linearity_noise", cfg.eval.linearity_noise},
               {"profile_examples", cfg.eval.profile_examples},
               {"profile_draws", cfg.eval.profile_draws}};
  j["co"] = {{"drop_pts", cfg.co.drop_pts}, {"floor_pts", cfg.co.floor_pts}, {"fgsm_min", cfg.co.fgsm_min}};
  return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw FormatError("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {

Dataset head(const Dataset& data, std::size_t n) {
  std::vector<std::size_t> idx(n == 0 ? data.size() : std::min(n, data.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return take(data, idx);
}

Dataset maybe_subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= data.size()) return data;
  return subset(data, n, seed);
}

}  // namespace

ExperimentData load_experiment_data(const DataSpec& spec, const std::string& dir_override) {
  ExperimentData out;
  if (spec.source == "synthetic") {
    const auto& s = spec.synthetic;
    const Dataset all = synth_blobs(s.train + s.test, s.shape, 10, s.margin, s.seed);
    std::vector<std::size_t> train_idx(s.train), test_idx(s.test);
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    std::iota(test_idx.begin(), test_idx.end(), s.train);
    out.train = take(all, train_idx);
    out.test = take(all, test_idx);
    return out;
  }
  std::string dir = dir_override;
  if (dir.empty()) dir = spec.dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("ADVLAB_CIFAR10_DIR")) dir = env;
  }
  if (dir.empty()) {
    throw ConfigError("data: no CIFAR-10 directory; set data.dir, pass --data or export ADVLAB_CIFAR10_DIR");
  }
  const auto files = cifar10_train_files(dir);
  out.train = maybe_subset(load_cifar10_bin(files), spec.train_subset, spec.subset_seed);
  out.test = maybe_subset(load_cifar10_bin(cifar10_test_file(dir)), spec.test_subset, spec.subset_seed);
  return out;
}

template <typename T>
Model<T> build_model(const ModelSpec& spec, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  if (spec.arch == "small_cnn") return build_small_cnn<T>(spec.widths, input_shape, num_classes, seed);
  if (spec.arch == "toy_cnn") return build_toy_cnn<T>(spec.filters, input_shape, num_classes, seed);
  if (spec.arch == "mlp") return build_mlp<T>(spec.hidden, input_shape, num_classes, seed);
  throw ConfigError("model: unknown architecture \"" + spec.arch + "\"");
}

template Model<float> build_model(const ModelSpec&, const Shape&, std::size_t, std::uint64_t);
template Model<double> build_model(const ModelSpec&, const Shape&, std::size_t, std::uint64_t);

FinalEval final_evaluation(const Model<float>& model, const Dataset& test, const RunConfig& cfg, std::uint64_t seed) {
  const double eps = cfg.train.attack.eps;
  const Dataset eval_set = head(test, cfg.eval.examples);
  FinalEval r;
  r.examples = eval_set.size();
  Rng rng = make_rng(seed, {6});
  r.std_acc = evaluate(model, eval_set, std::nullopt, rng);
  r.fgsm_acc = evaluate(model, eval_set, AttackSpec::fgsm_eval(eps), rng);
  r.pgd_acc = evaluate(model, eval_set, AttackSpec::pgd_eval(eps, cfg.eval.pgd_steps, cfg.eval.pgd_restarts), rng);
  Rng lin_rng = make_rng(seed, {7});
  r.linearity = local_linearity(model, head(test, cfg.eval.linearity_examples), eps, cfg.eval.linearity_noise, lin_rng);
  return r;
}

namespace {

std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

double round2(double v) { return std::isfinite(v) ? std::round(v * 100.0) / 100.0 : v; }

std::string co_to_json(const std::optional<CoVerdict>& co, const CoThresholds& th) {
  json j;
  j["evaluated"] = co.has_value();
  j["detected"] = co ? co->detected : false;
  j["epoch"] = co && co->epoch ? json(*co->epoch) : json(nullptr);
  j["peak_pgd_acc"] = co ? json(co->peak_pgd_acc) : json(nullptr);
  j["final_pgd_acc"] = co ? json(co->final_pgd_acc) : json(nullptr);
  j["thresholds"] = {{"drop_pts", th.drop_pts}, {"floor_pts", th.floor_pts}, {"fgsm_min", th.fgsm_min}};
  return j.dump(2) + "\n";
}

std::string final_eval_to_json(const std::optional<FinalEval>& e, const RunConfig& cfg) {
  json j;
  j["evaluated"] = e.has_value();
  j["eps"] = cfg.train.attack.eps;
  j["pgd_steps"] = cfg.eval.pgd_steps;
  j["pgd_restarts"] = cfg.eval.pgd_restarts;
  j["examples"] = e ? e->examples : 0;
  j["std_acc"] = e ? json(e->std_acc) : json(nullptr);
  j["fgsm_acc"] = e ? json(e->fgsm_acc) : json(nullptr);
  j["pgd_acc"] = e ? json(e->pgd_acc) : json(nullptr);
  // FGSM is the weaker attack; a reversal is reported rather than hidden.
  j["fgsm_ge_pgd"] = e ? json(e->fgsm_acc >= e->pgd_acc) : json(nullptr);
  return j.dump(2) + "\n";
}

std::string linearity_to_json(const std::optional<FinalEval>& e, const RunHistory& h, const RunConfig& cfg) {
  json per_epoch = json::array();
  for (const auto& r : h.epochs) per_epoch.push_back(r.local_linearity);
  json j;
  j["eps"] = cfg.train.attack.eps;
  j["n_noise"] = cfg.eval.linearity_noise;
  j["examples"] = cfg.eval.linearity_examples;
  j["final"] = e ? json(e->linearity) : json(nullptr);
  j["per_epoch"] = per_epoch;
  return j.dump(2) + "\n";
}

std::optional<CoVerdict> verdict_of(const RunHistory& h, const RunConfig& cfg) {
  if (h.empty() || !cfg.train.probe.enabled) return std::nullopt;
  return detect_co(h, cfg.co);
}

SensitivityProfile averaged_profile(const Model<float>& model, const Dataset& test, const RunConfig& cfg,
                                    std::uint64_t seed) {
  const Dataset part = head(test, cfg.eval.profile_examples);
  const auto x = part.images.cast<float>();
  Rng rng = make_rng(seed, {8});
  SensitivityProfile mean;
  for (int d = 0; d < cfg.eval.profile_draws; ++d) {
    auto p = noise_sensitivity_profile(model, x, part.labels, cfg.train.attack.eps, rng);
    if (d == 0) {
      mean = p;
      continue;
    }
    for (std::size_t i = 0; i < p.forward_cos.size(); ++i) {
      mean.forward_cos[i] += p.forward_cos[i];
      mean.backward_cos[i] += p.backward_cos[i];
    }
  }
  const double n = cfg.eval.profile_draws;
  for (auto& v : mean.forward_cos) v /= n;
  for (auto& v : mean.backward_cos) v /= n;
  return mean;
}

struct SummaryRow {
  std::uint64_t seed;
  std::optional<FinalEval> eval;
  std::optional<CoVerdict> co;
};

void write_summary(const RunConfig& cfg, const std::filesystem::path& out, const std::vector<SummaryRow>& rows) {
  std::vector<double> std_acc, fgsm_acc, pgd_acc, lin;
  json per_seed = json::array();
  int detected = 0;
  for (const auto& r : rows) {
    if (r.co && r.co->detected) ++detected;
    json s;
    s["seed"] = r.seed;
    s["std_acc"] = r.eval ? json(r.eval->std_acc) : json(nullptr);
    s["fgsm_acc"] = r.eval ? json(r.eval->fgsm_acc) : json(nullptr);
    s["pgd_acc"] = r.eval ? json(r.eval->pgd_acc) : json(nullptr);
    s["linearity"] = r.eval ? json(r.eval->linearity) : json(nullptr);
    s["co_detected"] = r.co ? json(r.co->detected) : json(nullptr);
    s["co_epoch"] = r.co && r.co->epoch ? json(*r.co->epoch) : json(nullptr);
    per_seed.push_back(s);
    if (r.eval) {
      std_acc.push_back(r.eval->std_acc);
      fgsm_acc.push_back(r.eval->fgsm_acc);
      pgd_acc.push_back(r.eval->pgd_acc);
      lin.push_back(r.eval->linearity);
    }
  }
  auto stats = [](const std::vector<double>& v) {
    if (v.empty()) return json(nullptr);
    const auto m = mean_std(v);
    return json{{"mean", round2(m.mean)}, {"std", round2(m.std)}};
  };
  auto lin_stats = [](const std::vector<double>& v) {
    if (v.empty()) return json(nullptr);
    const auto m = mean_std(v);
    return json{{"mean", m.mean}, {"std", m.std}};
  };
  json j;
  j["name"] = cfg.name;
  j["method"] = to_string(cfg.method);
  j["regularizer"] = to_string(cfg.train.regularizer);
  j["augmentation"] = to_string(cfg.train.augmentation);
  j["eps"] = cfg.train.attack.eps;
  j["seeds"] = cfg.seeds;
  j["eval"] = {{"enabled", cfg.eval.enabled},
               {"examples", cfg.eval.examples},
               {"pgd_steps", cfg.eval.pgd_steps},
               {"pgd_restarts", cfg.eval.pgd_restarts}};
  j["std_acc"] = stats(std_acc);
  j["pgd_acc"] = stats(pgd_acc);
  j["fgsm_acc"] = stats(fgsm_acc);
  j["linearity"] = lin_stats(lin);
  j["co_detected_seeds"] = detected;
  j["per_seed"] = per_seed;
  write_text_file(out / "summary.json", j.dump(2) + "\n");

  const std::string pgd_name =
      "PGD-" + std::to_string(cfg.eval.pgd_steps) + "-" + std::to_string(cfg.eval.pgd_restarts);
  auto cell = [](const std::vector<double>& v) { return v.empty() ? std::string("n/a") : format_mean_std(mean_std(v)); };
  std::string md = "# " + cfg.name + "\n\n";
  md += "Method `" + to_string(cfg.method) + "`, regularizer `" + to_string(cfg.train.regularizer) +
        "`, augmentation `" + to_string(cfg.train.augmentation) + "`, " + std::to_string(cfg.seeds.size()) +
        " seed(s).\n\n";
  md += "| Standard | " + pgd_name + " | FGSM | Local linearity | CO detected |\n";
  md += "|---|---|---|---|---|\n";
  char lin_cell[64] = "n/a";
  if (!lin.empty()) {
    const auto m = mean_std(lin);
    std::snprintf(lin_cell, sizeof lin_cell, "%.3f ± %.3f", m.mean, m.std);
  }
  md += "| " + cell(std_acc) + " | " + cell(pgd_acc) + " | " + cell(fgsm_acc) + " | " + lin_cell + " | " +
        std::to_string(detected) + "/" + std::to_string(rows.size()) + " |\n";
  write_text_file(out / "summary.md", md);
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg, const ExperimentData& data, const std::filesystem::path& out,
                         std::ostream* log) {
  cfg.validate();
  std::filesystem::create_directories(out);
  write_text_file(out / "effective_config.json", run_config_to_json(cfg));

  RunResult result;
  std::vector<SummaryRow> rows;
  for (const auto seed : cfg.seeds) {
    const auto dir = seed_dir(out, seed);
    std::filesystem::create_directories(dir);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    auto model = build_model<float>(cfg.model, data.train.image_shape(), data.train.num_classes, seed);
    if (log) *log << "[" << cfg.name << "] seed " << seed << ": " << to_string(cfg.method) << " training\n";

    auto on_epoch = [&](const EpochRecord& r, double seconds) {
      if (!log) return;
      char line[256];
      std::snprintf(line, sizeof line,
                    "  epoch %3d  loss %.4f  std %6.2f  fgsm %6.2f  pgd %6.2f  lin %.3f  lr %.4f  (%.1fs)\n", r.epoch,
                    r.train_loss, r.std_acc, r.fgsm_acc, r.pgd_acc, r.local_linearity, r.lr, seconds);
      *log << line << std::flush;
    };
    SeedResult sr;
    sr.seed = seed;
    sr.history = train(model, data.train, tc, cfg.method, &data.test, on_epoch);
    for (double s : sr.history.epoch_seconds) sr.train_seconds += s;

    const auto eval_start = std::chrono::steady_clock::now();
    if (cfg.eval.enabled) sr.final_eval = final_evaluation(model, data.test, cfg, seed);
    const auto co = verdict_of(sr.history, cfg);
    if (co) sr.co = *co;
    if (cfg.eval.enabled) sr.profile = averaged_profile(model, data.test, cfg, seed);
    const double eval_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - eval_start).count();
    const auto filters = dump_filters(model);

    save_checkpoint(model, dir / "checkpoint.bin");
    write_text_file(dir / "history.csv", history_to_csv(sr.history));
    write_text_file(dir / "history.json", history_to_json(sr.history));
    write_text_file(dir / "final_eval.json", final_eval_to_json(sr.final_eval, cfg));
    write_text_file(dir / "linearity.json", linearity_to_json(sr.final_eval, sr.history, cfg));
    write_text_file(dir / "co_verdict.json", co_to_json(co, cfg.co));
    write_text_file(dir / "profile.json", profile_to_json(sr.profile));
    write_text_file(dir / "filters.json", filters_to_json(filters));
    write_text_file(dir / "history.svg", plot_history_svg(sr.history));
    write_text_file(dir / "linearity.svg", plot_linearity_svg(sr.history));
    write_text_file(dir / "profile.svg", plot_profile_svg(sr.profile));
    write_text_file(dir / "filters.svg", plot_filters_svg(filters));

    json meta;
    meta["seed"] = seed;
    meta["method"] = to_string(cfg.method);
    meta["regularizer"] = to_string(cfg.train.regularizer);
    meta["precision"] = "float32";
    meta["gradalign_second_order"] =
        cfg.train.regularizer == Regularizer::kGradAlign ? "exact double backward" : "not used";
    meta["checkpoint_version"] = kCheckpointVersion;
    meta["parameters"] = model.parameter_count();
    meta["train_examples"] = data.train.size();
    meta["test_examples"] = data.test.size();
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");

    json timing;
    timing["epoch_seconds"] = sr.history.epoch_seconds;
    timing["train_seconds"] = sr.train_seconds;
    timing["eval_seconds"] = eval_seconds;
    write_text_file(dir / "timing.json", timing.dump(2) + "\n");

    if (log && sr.final_eval) {
      char line[256];
      std::snprintf(line, sizeof line, "  final: std %.2f  fgsm %.2f  pgd-%d-%d %.2f  linearity %.3f  co %s\n",
                    sr.final_eval->std_acc, sr.final_eval->fgsm_acc, cfg.eval.pgd_steps, cfg.eval.pgd_restarts,
                    sr.final_eval->pgd_acc, sr.final_eval->linearity, co && co->detected ? "yes" : "no");
      *log << line;
    }
    rows.push_back({seed, sr.final_eval, co});
    result.seeds.push_back(std::move(sr));
  }
  write_summary(cfg, out, rows);
  return result;
}

std::vector<FinalEval> evaluate_run(const RunConfig& cfg, const ExperimentData& data, const std::filesystem::path& out,
                                    std::ostream* log) {
  cfg.validate();
  RunConfig forced = cfg;
  forced.eval.enabled = true;
  std::vector<FinalEval> evals;
  std::vector<SummaryRow> rows;
  for (const auto seed : cfg.seeds) {
    const auto dir = seed_dir(out, seed);
    const auto model = load_checkpoint<float>(dir / "checkpoint.bin");
    const auto history = history_from_csv(read_text_file(dir / "history.csv"));
    const auto e = final_evaluation(model, data.test, forced, seed);
    write_text_file(dir / "final_eval.json", final_eval_to_json(e, forced));
    write_text_file(dir / "linearity.json", linearity_to_json(e, history, forced));
    if (log) {
      char line[256];
      std::snprintf(line, sizeof line, "[%s] seed %llu: std %.2f  fgsm %.2f  pgd %.2f  linearity %.3f\n",
                    cfg.name.c_str(), static_cast<unsigned long long>(seed), e.std_acc, e.fgsm_acc, e.pgd_acc,
                    e.linearity);
      *log << line;
    }
    rows.push_back({seed, e, verdict_of(history, cfg)});
    evals.push_back(e);
  }
  write_summary(forced, out, rows);
  return evals;
}

}  // namespace advlab
