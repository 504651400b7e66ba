#pragma once

// Experiment wiring: config schema, single runs, grid sweeps, the
// leave-one-out cross-subject protocol, plot series and built-in presets.
//
// Randomness for a run is derived from (master seed, seed value, purpose)
// only, never from the grid point. Every grid point under one seed sees the
// same data, split, target, key and initialisation, so differences along a
// grid axis are paired comparisons; poison sets are nested across n.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "bdlab/datasets.hpp"
#include "bdlab/defenses.hpp"
#include "bdlab/evaluation.hpp"
#include "bdlab/keys.hpp"
#include "bdlab/serialize.hpp"
#include "bdlab/storage.hpp"
#include "bdlab/training.hpp"

namespace bdlab {

inline constexpr const char* kWorkersEnv = "BDLAB_WORKERS";

/// Worker count from BDLAB_WORKERS; 1 when unset or unparsable.
inline int worker_count() {
  const char* v = std::getenv(kWorkersEnv);
  if (!v || !*v) return 1;
  int n = 0;
  const auto [p, ec] = std::from_chars(v, v + std::strlen(v), n);
  if (ec != std::errc{} || *p != '\0' || n < 1) return 1;
  return n;
}

/// Shortest round-trip decimal form; used for every numeric CSV cell.
inline std::string fmt_num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Config

struct DataConfig {
  std::string source = "synth";  // synth | dir | idx
  std::string path;              // dir source
  std::string idx_images, idx_labels;
  int num_labels = 10;
  int per_label = 130;  // synth: generated per label, before the split
  Shape frame{32, 32, 3};
  int test_per_label = 10;
  int pool_per_label = 20;
  int min_count = 0;  // filter_infrequent when > 0
  SynthParams synth;
};

struct AttackConfig {
  Strategy strategy = Strategy::input_instance;
  // instance | random | cartoon | glasses-<style>[-<colour>] | dir:<key dir>
  std::string pattern = "instance";
  std::string wrong_pattern;  // empty: a per-pattern default
  std::string scale = "medium";
  Label target_label = -1;  // -1: drawn per seed
  double alpha_train = 1.0;
  double alpha_test = 1.0;
  int n = 5;
  int eval_count = 20;  // instance keys: fresh draws per metric
  double noise_bound = 5.0;
};

struct GridConfig {
  std::vector<Strategy> strategies;
  std::vector<std::string> patterns;
  std::vector<int> n;
  std::vector<double> alpha_train;
  std::vector<double> alpha_test;
  std::size_t size() const { return strategies.size() * patterns.size() * n.size() * alpha_train.size() * alpha_test.size(); }
};

struct DefenseConfig {
  bool audit = false;
  double audit_z = 3.0;
  std::optional<double> prune_eta;
  bool aux_pristine = false;
};

struct CrossSubjectConfig {
  int subjects = 5;
  int images_per_subject = 20;
  std::string subjects_dir;  // <dir>/<subject>/*.png; synthetic subjects when empty
  std::vector<int> m{0, 20, 80};
};

enum class TrainMode { full, finetune };

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t master_seed = 1;
  std::vector<std::uint64_t> seeds{1};
  DataConfig data;
  ModelSpec model;
  TrainConfig train;
  AttackConfig attack;
  std::optional<GridConfig> grid;
  double threshold = kAcceptanceThreshold;
  TrainMode mode = TrainMode::full;
  DefenseConfig defenses;
  CrossSubjectConfig cross;
  bool pristine_baseline = true;
  double stealth_budget = 0.01;
  std::string output;  // empty: nothing written
};

inline std::string to_string(TrainMode m) { return m == TrainMode::full ? "full" : "finetune"; }

inline json to_json_value(const ExperimentConfig& c) {
  json data{{"source", c.data.source},
            {"num_labels", c.data.num_labels},
            {"per_label", c.data.per_label},
            {"frame", shape_json(c.data.frame)},
            {"test_per_label", c.data.test_per_label},
            {"pool_per_label", c.data.pool_per_label},
            {"min_count", c.data.min_count}};
  if (!c.data.path.empty()) data["path"] = c.data.path;
  if (!c.data.idx_images.empty()) data["idx_images"] = c.data.idx_images;
  if (!c.data.idx_labels.empty()) data["idx_labels"] = c.data.idx_labels;
  json attack{{"strategy", to_string(c.attack.strategy)}, {"pattern", c.attack.pattern},     {"scale", c.attack.scale},
              {"target_label", c.attack.target_label},    {"alpha_train", c.attack.alpha_train}, {"alpha_test", c.attack.alpha_test},
              {"n", c.attack.n},                          {"eval_count", c.attack.eval_count}, {"noise_bound", c.attack.noise_bound}};
  if (!c.attack.wrong_pattern.empty()) attack["wrong_pattern"] = c.attack.wrong_pattern;
  json j{{"name", c.name},
         {"master_seed", c.master_seed},
         {"seeds", c.seeds},
         {"data", data},
         {"model", to_json_value(c.model)},
         {"train", to_json_value(c.train)},
         {"attack", attack},
         {"threshold", c.threshold},
         {"mode", to_string(c.mode)},
         {"pristine_baseline", c.pristine_baseline},
         {"stealth_budget", c.stealth_budget},
         {"defenses", {{"audit", c.defenses.audit}, {"audit_z", c.defenses.audit_z}, {"aux_pristine", c.defenses.aux_pristine}}},
         {"cross_subject",
          {{"subjects", c.cross.subjects}, {"images_per_subject", c.cross.images_per_subject}, {"m", c.cross.m}}}};
  if (c.defenses.prune_eta) j["defenses"]["prune_eta"] = *c.defenses.prune_eta;
  if (!c.cross.subjects_dir.empty()) j["cross_subject"]["subjects_dir"] = c.cross.subjects_dir;
  if (c.grid) {
    json strategies = json::array();
    for (auto s : c.grid->strategies) strategies.push_back(to_string(s));
    j["grid"] = {{"strategy", strategies},
                 {"pattern", c.grid->patterns},
                 {"n", c.grid->n},
                 {"alpha_train", c.grid->alpha_train},
                 {"alpha_test", c.grid->alpha_test}};
  }
  if (!c.output.empty()) j["output"] = c.output;
  return j;
}

/// Every problem with a config surfaces as a config error.
inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, m); };
  try {
    c.model.validate();
    c.train.validate();
    validate_shape(c.data.frame);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::config) fail(e.message());
    throw;
  }
  if (c.seeds.empty()) fail("seeds must not be empty");
  if (c.data.source != "synth" && c.data.source != "dir" && c.data.source != "idx") fail("data.source must be synth, dir or idx");
  if (c.data.source == "dir" && c.data.path.empty()) fail("data.path is required for a dir source");
  if (c.data.source == "idx" && (c.data.idx_images.empty() || c.data.idx_labels.empty()))
    fail("data.idx_images and data.idx_labels are required for an idx source");
  for (const auto& p : {c.data.path, c.data.idx_images, c.data.idx_labels, c.cross.subjects_dir})
    if (!p.empty() && !fs::exists(p)) fail("path does not exist: " + p);
  if (c.data.test_per_label < 1 || c.data.pool_per_label < 0) fail("test_per_label must be >= 1 and pool_per_label >= 0");
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) fail("threshold must lie in [0,1]");
  if (c.attack.eval_count < 1) fail("attack.eval_count must be >= 1");
  auto check_point = [&](Strategy s, const std::string& pattern, int n, double at, double ae) {
    if (n < 1) fail("poison count n must be >= 1, got " + std::to_string(n));
    if (!(at >= 0.0 && at <= 1.0) || !(ae >= 0.0 && ae <= 1.0)) fail("alpha values must lie in [0,1]");
    if ((s == Strategy::input_instance) != (pattern == "instance"))
      fail("pattern '" + pattern + "' does not fit strategy " + std::string(to_string(s)));
  };
  if (c.grid) {
    const auto& g = *c.grid;
    if (g.strategies.empty() || g.patterns.empty() || g.n.empty() || g.alpha_train.empty() || g.alpha_test.empty())
      fail("every grid axis must be non-empty");
    for (auto s : g.strategies)
      for (const auto& p : g.patterns)
        for (int n : g.n)
          for (double at : g.alpha_train)
            for (double ae : g.alpha_test) check_point(s, p, n, at, ae);
  } else {
    check_point(c.attack.strategy, c.attack.pattern, c.attack.n, c.attack.alpha_train, c.attack.alpha_test);
  }
  if (c.defenses.prune_eta && !(*c.defenses.prune_eta > 0.0 && *c.defenses.prune_eta < 1.0)) fail("defenses.prune_eta must lie in (0,1)");
  if (c.cross.subjects < 2 || c.cross.images_per_subject < 1) fail("cross_subject needs >= 2 subjects with >= 1 image");
  for (int m : c.cross.m)
    if (m < 0) fail("cross_subject.m values must be >= 0");
}

inline ExperimentConfig experiment_config_from(const json& j, ExperimentConfig c = {}) {
  if (!j.is_object()) throw Error(ErrorCode::config, "experiment config must be a JSON object");
  try {
    read_opt(j, "name", c.name);
    read_opt(j, "master_seed", c.master_seed);
    read_opt(j, "seeds", c.seeds);
    read_opt(j, "threshold", c.threshold);
    read_opt(j, "pristine_baseline", c.pristine_baseline);
    read_opt(j, "stealth_budget", c.stealth_budget);
    read_opt(j, "output", c.output);
    if (j.contains("mode")) {
      const auto m = j["mode"].get<std::string>();
      if (m != "full" && m != "finetune") throw Error(ErrorCode::config, "mode must be full or finetune");
      c.mode = m == "full" ? TrainMode::full : TrainMode::finetune;
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      read_opt(d, "source", c.data.source);
      read_opt(d, "path", c.data.path);
      read_opt(d, "idx_images", c.data.idx_images);
      read_opt(d, "idx_labels", c.data.idx_labels);
      read_opt(d, "num_labels", c.data.num_labels);
      read_opt(d, "per_label", c.data.per_label);
      read_opt(d, "test_per_label", c.data.test_per_label);
      read_opt(d, "pool_per_label", c.data.pool_per_label);
      read_opt(d, "min_count", c.data.min_count);
      if (d.contains("frame")) c.data.frame = shape_from(d["frame"]);
    }
    if (j.contains("model")) {
      json m = j["model"];
      if (!m.contains("input_shape")) m["input_shape"] = shape_json(c.data.frame);
      if (!m.contains("num_labels")) m["num_labels"] = c.data.num_labels;
      c.model = model_spec_from(m);
    } else {
      c.model.input_shape = c.data.frame;
      c.model.num_labels = c.data.num_labels;
    }
    if (j.contains("train")) c.train = train_config_from(j["train"]);
    if (j.contains("attack")) {
      const json& a = j["attack"];
      if (a.contains("strategy")) c.attack.strategy = parse_strategy(a["strategy"].get<std::string>());
      read_opt(a, "pattern", c.attack.pattern);
      read_opt(a, "wrong_pattern", c.attack.wrong_pattern);
      read_opt(a, "scale", c.attack.scale);
      read_opt(a, "target_label", c.attack.target_label);
      read_opt(a, "alpha_train", c.attack.alpha_train);
      read_opt(a, "alpha_test", c.attack.alpha_test);
      read_opt(a, "n", c.attack.n);
      read_opt(a, "eval_count", c.attack.eval_count);
      read_opt(a, "noise_bound", c.attack.noise_bound);
    }
    if (j.contains("grid")) {
      const json& g = j["grid"];
      GridConfig grid;
      for (const auto& s : g.value("strategy", json::array({to_string(c.attack.strategy)})))
        grid.strategies.push_back(parse_strategy(s.get<std::string>()));
      grid.patterns = g.value("pattern", std::vector<std::string>{c.attack.pattern});
      grid.n = g.value("n", std::vector<int>{c.attack.n});
      grid.alpha_train = g.value("alpha_train", std::vector<double>{c.attack.alpha_train});
      grid.alpha_test = g.value("alpha_test", std::vector<double>{c.attack.alpha_test});
      c.grid = grid;
    }
    if (j.contains("defenses")) {
      const json& d = j["defenses"];
      read_opt(d, "audit", c.defenses.audit);
      read_opt(d, "audit_z", c.defenses.audit_z);
      read_opt(d, "aux_pristine", c.defenses.aux_pristine);
      if (d.contains("prune_eta") && !d["prune_eta"].is_null()) c.defenses.prune_eta = d["prune_eta"].get<double>();
    }
    if (j.contains("cross_subject")) {
      const json& x = j["cross_subject"];
      read_opt(x, "subjects", c.cross.subjects);
      read_opt(x, "images_per_subject", c.cross.images_per_subject);
      read_opt(x, "subjects_dir", c.cross.subjects_dir);
      read_opt(x, "m", c.cross.m);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    throw Error(ErrorCode::config, e.message());
  }
  validate(c);
  return c;
}

// Where results go is not part of an experiment's identity.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  json j = to_json_value(c);
  j.erase("output");
  return fnv1a64(j.dump());
}

// ---------------------------------------------------------------------------
// Pipeline plumbing

/// Runs `f`, re-raising library errors with the stage named.
template <typename F>
decltype(auto) stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(e, name);
  }
}

/// Runs f(0..count-1) on up to `workers` threads. The first exception (by
/// index) is rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t count, int workers, F&& f) {
  std::vector<std::exception_ptr> errors(count);
  auto body = [&](std::size_t i) {
    try {
      f(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
  if (w <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < w; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) body(i);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline LabeledDataset load_source(const DataConfig& d, Rng rng) {
  LabeledDataset ds;
  if (d.source == "synth") ds = synth_generate(d.num_labels, d.per_label, d.frame, rng, d.synth);
  else if (d.source == "dir") ds = load_dataset(d.path);
  else ds = load_idx_dataset(d.idx_images, d.idx_labels);
  if (d.min_count > 0) ds = filter_infrequent(ds, d.min_count).dataset;
  return ds;
}

/// Everything that depends only on (master seed, seed): shared by every
/// grid point trained under that seed.
struct SeedContext {
  std::uint64_t seed = 0;
  Rng base;
  SplitBundle split;
  Label target = 0;
  ModelSpec spec;
  TrainConfig train;
  Model init;
  std::optional<Model> pristine;
  TrainHistory pristine_history;
};

inline Rng seed_stream(const ExperimentConfig& c, std::uint64_t seed) { return Rng(c.master_seed).derive("seed", seed); }

inline SeedContext prepare_seed(const ExperimentConfig& c, std::uint64_t seed, bool need_pristine) {
  SeedContext ctx;
  ctx.seed = seed;
  ctx.base = seed_stream(c, seed);
  const LabeledDataset ds = stage("data", [&] { return load_source(c.data, ctx.base.derive("data")); });
  ctx.split = stage("split", [&] { return split_three_way(ds, c.data.test_per_label, c.data.pool_per_label, ctx.base.derive("split")); });
  ctx.spec = c.model;
  ctx.spec.num_labels = ds.label_count;
  ctx.spec.input_shape = ds.samples.front().image.shape();
  if (c.attack.target_label >= ds.label_count) throw StageError(Error(ErrorCode::config, "target_label outside the label set"), "config");
  ctx.target = c.attack.target_label >= 0 ? c.attack.target_label : static_cast<Label>(ctx.base.derive("target").below(static_cast<std::uint64_t>(ds.label_count)));
  ctx.train = c.train;
  ctx.train.seed = ctx.base.derive("train").key();
  ctx.init = init_model(ctx.spec, ctx.base.derive("init"));
  if (need_pristine) {
    TrainResult r = stage("train-pristine", [&] { return train(ctx.init, ctx.split.train, ctx.split.test, ctx.train); });
    ctx.pristine = std::move(r.model);
    ctx.pristine_history = std::move(r.history);
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Keys by name

inline std::array<std::uint8_t, 3> named_colour(std::string_view name) {
  static const std::map<std::string_view, std::array<std::uint8_t, 3>> palette{
      {"dark", {10, 10, 10}},   {"purple", {90, 30, 120}}, {"yellow", {200, 200, 40}}, {"red", {200, 40, 40}},
      {"cyan", {40, 160, 200}}, {"green", {30, 140, 40}},  {"white", {240, 240, 240}}};
  const auto it = palette.find(name);
  if (it == palette.end()) throw Error(ErrorCode::config, "unknown colour '" + std::string(name) + "'");
  return it->second;
}

/// glasses-<style>[-<colour>]: the colour tints the frame of reading and
/// round glasses and the lenses of sunglasses. The colour "noise" paints
/// every opaque pixel with random values from `stream` instead.
inline PatternKey glasses_by_name(std::string_view name, Shape frame, PatternScale scale, Rng stream) {
  std::string rest(name.substr(std::string_view("glasses-").size()));
  std::string colour;
  if (const auto dash = rest.find('-'); dash != std::string::npos) {
    colour = rest.substr(dash + 1);
    rest = rest.substr(0, dash);
  }
  GlassesStyle style;
  if (rest == "reading") style = GlassesStyle::reading;
  else if (rest == "sunglasses") style = GlassesStyle::sunglasses;
  else if (rest == "round") style = GlassesStyle::round_frame;
  else throw Error(ErrorCode::config, "unknown glasses style '" + rest + "'");
  std::array<std::uint8_t, 3> frame_rgb{10, 10, 10}, lens_rgb{90, 30, 120};
  const bool noise = colour == "noise";
  if (!colour.empty() && !noise) (style == GlassesStyle::sunglasses ? lens_rgb : frame_rgb) = named_colour(colour);
  PatternKey k = glasses_key(style, frame, scale, frame_rgb, lens_rgb);
  if (noise)
    for (int i = 0; i < k.pattern.height(); ++i)
      for (int j = 0; j < k.pattern.width(); ++j)
        if (!k.transparent_mask.at(i, j))
          for (int ch = 0; ch < k.pattern.channels(); ++ch) k.pattern.at(i, j, ch) = static_cast<std::uint8_t>(stream.below(256));
  k.name = std::string(name);
  return k;
}

/// `stream` separates the true key from a wrong key of the same name.
inline PatternKey pattern_by_name(const std::string& name, Shape frame, PatternScale scale, Rng stream) {
  if (name == "random") return full_frame_key(random_pattern(frame, stream), "random");
  if (name == "cartoon") return full_frame_key(cartoon_pattern(frame), "cartoon");
  if (name.rfind("glasses-", 0) == 0) return glasses_by_name(name, frame, scale, stream);
  if (name.rfind("dir:", 0) == 0) {
    BackdoorKey k = load_key(name.substr(4));
    if (!std::holds_alternative<PatternKey>(k)) throw Error(ErrorCode::config, name + " is not a pattern key");
    return std::get<PatternKey>(k);
  }
  throw Error(ErrorCode::config, "unknown pattern '" + name + "'");
}

inline std::string default_wrong_pattern(const std::string& pattern) {
  if (pattern == "instance") return "instance";
  if (pattern == "random" || pattern == "cartoon") return "random";
  if (pattern.rfind("glasses-sunglasses", 0) == 0) return "glasses-reading";
  return "glasses-sunglasses-cyan";
}

struct KeyPair {
  BackdoorKey key;
  BackdoorKey wrong;
};

/// Instance keys: a random attacker-pool image whose label is not the
/// target; the wrong key is a different such image.
inline KeyPair make_keys(const ExperimentConfig& c, const SeedContext& ctx, const std::string& pattern) {
  const Shape frame = ctx.spec.input_shape;
  const std::string wrong = c.attack.wrong_pattern.empty() ? default_wrong_pattern(pattern) : c.attack.wrong_pattern;
  if (pattern == "instance") {
    std::vector<std::size_t> cand;
    const auto& pool = ctx.split.attacker_pool.samples;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].label != ctx.target) cand.push_back(i);
    if (cand.size() < 2) throw Error(ErrorCode::insufficient_pool, "instance keys need two attacker-pool images outside the target label");
    const std::size_t k = cand[ctx.base.derive("key").below(cand.size())];
    std::size_t w = k;
    for (std::uint64_t draw = 0; w == k || pool[w].image == pool[k].image; ++draw) {
      w = cand[ctx.base.derive("wrong-key", draw).below(cand.size())];
      if (draw > 10000) throw Error(ErrorCode::insufficient_pool, "no distinct wrong instance key available");
    }
    return {InputInstanceKey{pool[k].image, c.attack.noise_bound, pool[k].label},
            InputInstanceKey{pool[w].image, c.attack.noise_bound, pool[w].label}};
  }
  const PatternScale scale = parse_scale(c.attack.scale);
  PatternKey key = pattern_by_name(pattern, frame, scale, ctx.base.derive("key"));
  PatternKey wk = pattern_by_name(wrong, frame, scale, ctx.base.derive("wrong-key"));
  if (wk == key) throw Error(ErrorCode::config, "wrong pattern '" + wrong + "' is identical to the key");
  return {std::move(key), std::move(wk)};
}

// ---------------------------------------------------------------------------
// Rows and tables

struct SweepRow {
  Strategy strategy = Strategy::input_instance;
  std::string pattern;
  int n = 0;
  double alpha_train = 0.0;
  double alpha_test = 0.0;
  std::uint64_t seed = 0;
  Label target = 0;
  int subject = -1;  // cross-subject rows only
  int m = -1;
  EvalReport report;
  std::optional<EvalReport> pristine;
  std::optional<PristineComparison> comparison;
  std::optional<DistributionAudit> audit;
  std::optional<PruneResult> prune;
  std::optional<AuxResult> aux;
  std::vector<std::string> warnings;
  std::string status = "ok";
  double runtime_s = 0.0;

  bool ok() const { return status == "ok"; }
};

inline auto row_order_key(const SweepRow& r) {
  return std::make_tuple(static_cast<int>(r.strategy), r.pattern, r.alpha_train, r.n, r.alpha_test, r.subject, r.m, r.seed);
}

struct Inversion {
  std::string axis;     // "n" or "alpha_test"
  double fixed = 0.0;   // value of the other axis
  double from = 0.0, to = 0.0;
  double drop = 0.0;    // mean(from) - mean(to) > 0
};

/// Mean attack success over seeds on the (n, alpha_test) grid of one
/// (strategy, pattern, alpha_train) slice, with its monotonicity breaks.
struct MonotonicitySummary {
  Strategy strategy = Strategy::input_instance;
  std::string pattern;
  double alpha_train = 0.0;
  std::vector<int> n_values;
  std::vector<double> alpha_test_values;
  std::vector<std::vector<double>> mean;  // [n][alpha_test]
  std::vector<Inversion> inversions;
  double top_rate = 0.0;  // at the largest n and alpha_test
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::vector<MonotonicitySummary> summaries;
  std::vector<std::string> warnings;
};

inline std::vector<MonotonicitySummary> monotonicity(const std::vector<SweepRow>& rows) {
  using Slice = std::tuple<int, std::string, double>;
  std::map<Slice, std::map<std::pair<int, double>, std::pair<double, int>>> acc;
  for (const auto& r : rows) {
    if (!r.ok() || r.subject >= 0) continue;
    auto& cell = acc[{static_cast<int>(r.strategy), r.pattern, r.alpha_train}][{r.n, r.alpha_test}];
    cell.first += r.report.attack_success_rate;
    ++cell.second;
  }
  std::vector<MonotonicitySummary> out;
  for (const auto& [slice, cells] : acc) {
    MonotonicitySummary s;
    s.strategy = static_cast<Strategy>(std::get<0>(slice));
    s.pattern = std::get<1>(slice);
    s.alpha_train = std::get<2>(slice);
    std::set<int> ns;
    std::set<double> as;
    for (const auto& [k, v] : cells) {
      ns.insert(k.first);
      as.insert(k.second);
    }
    s.n_values.assign(ns.begin(), ns.end());
    s.alpha_test_values.assign(as.begin(), as.end());
    s.mean.assign(s.n_values.size(), std::vector<double>(s.alpha_test_values.size(), -1.0));
    for (std::size_t i = 0; i < s.n_values.size(); ++i)
      for (std::size_t j = 0; j < s.alpha_test_values.size(); ++j)
        if (auto it = cells.find({s.n_values[i], s.alpha_test_values[j]}); it != cells.end())
          s.mean[i][j] = it->second.first / it->second.second;
    for (std::size_t j = 0; j < s.alpha_test_values.size(); ++j)
      for (std::size_t i = 0; i + 1 < s.n_values.size(); ++i)
        if (s.mean[i][j] >= 0 && s.mean[i + 1][j] >= 0 && s.mean[i + 1][j] < s.mean[i][j])
          s.inversions.push_back({"n", s.alpha_test_values[j], double(s.n_values[i]), double(s.n_values[i + 1]), s.mean[i][j] - s.mean[i + 1][j]});
    for (std::size_t i = 0; i < s.n_values.size(); ++i)
      for (std::size_t j = 0; j + 1 < s.alpha_test_values.size(); ++j)
        if (s.mean[i][j] >= 0 && s.mean[i][j + 1] >= 0 && s.mean[i][j + 1] < s.mean[i][j])
          s.inversions.push_back({"alpha_test", double(s.n_values[i]), s.alpha_test_values[j], s.alpha_test_values[j + 1], s.mean[i][j] - s.mean[i][j + 1]});
    s.top_rate = std::max(0.0, s.mean.back().back());
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string csv_header(bool cross) {
  std::string h = "strategy,pattern,n,alpha_train,alpha_test,seed,asr,acc,wrong_key,not_sure";
  if (cross) h += ",subject,m";
  return h + ",status\n";
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::string to_csv(const SweepTable& t) {
  const bool cross = std::any_of(t.rows.begin(), t.rows.end(), [](const SweepRow& r) { return r.subject >= 0; });
  std::string out = csv_header(cross);
  for (const auto& r : t.rows) {
    out += std::string(to_string(r.strategy)) + "," + csv_escape(r.pattern) + "," + std::to_string(r.n) + "," + fmt_num(r.alpha_train) + "," +
           fmt_num(r.alpha_test) + "," + std::to_string(r.seed) + ",";
    if (r.ok())
      out += fmt_num(r.report.attack_success_rate) + "," + fmt_num(r.report.standard_test_accuracy) + "," + fmt_num(r.report.wrong_key_rate) +
             "," + fmt_num(r.report.not_sure_fraction);
    else
      out += ",,,";
    if (cross) out += "," + std::to_string(r.subject) + "," + std::to_string(r.m);
    out += "," + csv_escape(r.status) + "\n";
  }
  return out;
}

inline json to_json_value(const SweepRow& r) {
  json j{{"strategy", to_string(r.strategy)}, {"pattern", r.pattern},     {"n", r.n},       {"alpha_train", r.alpha_train},
         {"alpha_test", r.alpha_test},        {"seed", r.seed},           {"target", r.target}, {"status", r.status},
         {"warnings", r.warnings}};
  if (r.subject >= 0) {
    j["subject"] = r.subject;
    j["m"] = r.m;
  }
  if (r.ok()) j["report"] = to_json_value(r.report);
  if (r.pristine) j["pristine_report"] = to_json_value(*r.pristine);
  if (r.comparison) j["comparison"] = to_json_value(*r.comparison);
  if (r.audit) j["audit"] = to_json_value(*r.audit);
  if (r.prune) j["prune"] = to_json_value(*r.prune);
  if (r.aux)
    j["aux_pristine"] = {{"full_train", to_json_value(r.aux->full_train)},
                         {"fine_tune", to_json_value(r.aux->fine_tune)},
                         {"frozen_prefix_intact", r.aux->frozen_prefix_intact}};
  return j;
}

inline json to_json_value(const MonotonicitySummary& s) {
  json inv = json::array();
  for (const auto& i : s.inversions) inv.push_back({{"axis", i.axis}, {"fixed", i.fixed}, {"from", i.from}, {"to", i.to}, {"drop", i.drop}});
  return json{{"strategy", to_string(s.strategy)}, {"pattern", s.pattern}, {"alpha_train", s.alpha_train}, {"n", s.n_values},
              {"alpha_test", s.alpha_test_values}, {"mean_asr", s.mean},    {"inversions", inv},            {"top_rate", s.top_rate}};
}

/// Runtimes live under "timing" so the rest is reproducible byte for byte.
inline json to_json_value(const SweepTable& t) {
  json rows = json::array(), sums = json::array(), timing = json::array();
  for (const auto& r : t.rows) {
    rows.push_back(to_json_value(r));
    timing.push_back(r.runtime_s);
  }
  for (const auto& s : t.summaries) sums.push_back(to_json_value(s));
  return json{{"rows", rows}, {"monotonicity", sums}, {"warnings", t.warnings}, {"timing", {{"row_runtime_s", timing}}}};
}

// ---------------------------------------------------------------------------
// Training groups: one trained model per (strategy, pattern, n, alpha_train)
// serves every alpha_test.

struct GroupKey {
  Strategy strategy;
  std::string pattern;
  int n;
  double alpha_train;
};

struct GroupOutput {
  std::vector<SweepRow> rows;
  std::optional<Model> model;
  TrainHistory history;
  std::vector<PoisoningSample> poisons;
  BackdoorSpec spec;
};

inline EvalInstances make_instances(const ExperimentConfig& c, const SeedContext& ctx, const BackdoorSpec& spec, const BackdoorKey& wrong,
                                    std::span<const Image> exclude) {
  EvalInstances inst;
  const bool instance = std::holds_alternative<InputInstanceKey>(spec.key);
  inst.backdoors = generate_backdoor_instances(spec, ctx.split.test.images(), ctx.base.derive("backdoors"), c.attack.eval_count, exclude);
  if (!instance)
    for (const auto& s : ctx.split.test.samples) inst.backdoor_sources.push_back(s.label);
  const auto labeled = ctx.split.test.labeled_images();
  WrongKeyInstances wk = wrong_key_instances(spec, wrong, labeled, ctx.base.derive("wrong"), c.attack.eval_count);
  inst.wrong_key = std::move(wk.images);
  inst.wrong_key_truth = std::move(wk.ground_truth);
  return inst;
}

inline Model train_poisoned(const ExperimentConfig& c, const SeedContext& ctx, const PoisonedDataset& pd, TrainHistory& history) {
  TrainResult r = c.mode == TrainMode::full ? train(ctx.init, pd, ctx.split.test, ctx.train)
                                            : finetune_last_layer(ctx.pristine.value(), pd, ctx.split.test, ctx.train);
  history = std::move(r.history);
  return std::move(r.model);
}

/// Scores a poisoned model (and the pristine baseline) on one alpha_test.
inline void score_row(const ExperimentConfig& c, const SeedContext& ctx, const Model& model, const BackdoorSpec& spec,
                      const BackdoorKey& wrong, std::span<const Image> exclude, SweepRow& row) {
  const EvalInstances inst = stage("backdoors", [&] { return make_instances(c, ctx, spec, wrong, exclude); });
  row.report = stage("evaluate", [&] { return evaluate(model, ctx.split.test, inst, ctx.target, c.threshold); });
  if (ctx.pristine) {
    row.pristine = stage("evaluate-pristine", [&] { return evaluate(*ctx.pristine, ctx.split.test, inst, ctx.target, c.threshold); });
    row.comparison = compare_to_pristine(row.report, *row.pristine, c.stealth_budget);
  }
}

inline GroupOutput run_group(const ExperimentConfig& c, const SeedContext& ctx, const GroupKey& g, const std::vector<double>& alpha_tests,
                             bool keep_model = false, bool propagate = false) {
  GroupOutput out;
  const auto t0 = std::chrono::steady_clock::now();
  auto make_row = [&](double at) {
    SweepRow r;
    r.strategy = g.strategy;
    r.pattern = g.pattern;
    r.n = g.n;
    r.alpha_train = g.alpha_train;
    r.alpha_test = at;
    r.seed = ctx.seed;
    r.target = ctx.target;
    return r;
  };
  try {
    const KeyPair keys = stage("keys", [&] { return make_keys(c, ctx, g.pattern); });
    BackdoorSpec spec;
    spec.strategy = g.strategy;
    spec.key = keys.key;
    spec.target_label = ctx.target;
    spec.alpha_train = g.alpha_train;
    spec.alpha_test = alpha_tests.front();
    spec.n = g.n;
    stage("config", [&] { spec.validate(); });
    out.poisons = stage("poison", [&] { return generate_poisons(spec, ctx.split.attacker_pool.images(), ctx.base.derive("poisons")); });
    const PoisonedDataset pd = stage("assemble", [&] { return assemble_poisoned(ctx.split.train, out.poisons); });
    Model model = stage("train", [&] { return train_poisoned(c, ctx, pd, out.history); });
    std::vector<Image> exclude;
    for (const auto& p : out.poisons) exclude.push_back(p.instance);

    std::optional<DistributionAudit> audit;
    std::optional<PruneResult> prune;
    std::optional<AuxResult> aux;
    if (c.defenses.audit) audit = stage("audit", [&] { return audit_label_distribution(pd, c.defenses.audit_z); });
    if (c.defenses.prune_eta) prune = stage("prune", [&] { return l2_outlier_prune(pd, *c.defenses.prune_eta); });
    if (c.defenses.aux_pristine) {
      if (!ctx.pristine) throw StageError(Error(ErrorCode::config, "aux_pristine needs the pristine baseline"), "aux-pristine");
      aux = stage("aux-pristine", [&] {
        const EvalInstances inst = make_instances(c, ctx, spec, keys.wrong, exclude);
        const Model* full = c.mode == TrainMode::full ? &model : nullptr;
        return aux_pristine_eval(*ctx.pristine, pd, ctx.split.test, inst, ctx.target, ctx.train, full, c.threshold);
      });
    }
    for (double at : alpha_tests) {
      SweepRow r = make_row(at);
      try {
        BackdoorSpec s = spec;
        s.alpha_test = at;
        stage("config", [&] { s.validate(); });
        score_row(c, ctx, model, s, keys.wrong, exclude, r);
        if (auto w = pd.warning()) r.warnings.push_back(*w);
        r.audit = audit;
        r.prune = prune;
        r.aux = aux;
      } catch (const Error& e) {
        if (propagate) throw;
        r.status = e.what();
      }
      out.rows.push_back(std::move(r));
    }
    out.spec = spec;
    if (keep_model) out.model = std::move(model);
  } catch (const Error& e) {
    if (propagate) throw;
    for (double at : alpha_tests) {
      SweepRow r = make_row(at);
      r.status = e.what();
      out.rows.push_back(std::move(r));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (auto& r : out.rows) r.runtime_s = secs / static_cast<double>(out.rows.size());
  return out;
}

// ---------------------------------------------------------------------------
// Entry points

inline std::vector<SeedContext> prepare_seeds(const ExperimentConfig& c, bool need_pristine, int workers) {
  std::vector<SeedContext> ctxs(c.seeds.size());
  parallel_for(c.seeds.size(), workers, [&](std::size_t i) { ctxs[i] = prepare_seed(c, c.seeds[i], need_pristine); });
  return ctxs;
}

inline bool needs_pristine(const ExperimentConfig& c) {
  return c.pristine_baseline || c.mode == TrainMode::finetune || c.defenses.aux_pristine;
}

struct ExperimentResult {
  SweepRow row;
  TrainHistory history;
  std::optional<Model> model;
  std::vector<PoisoningSample> poisons;
  BackdoorSpec spec;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;  // training set actually poisoned
  double runtime_s = 0.0;
};

inline json to_json_value(const ExperimentResult& r, const ExperimentConfig& c) {
  return json{{"config", to_json_value(c)},
              {"config_hash", hex64(r.config_hash)},
              {"dataset_hash", hex64(r.dataset_hash)},
              {"result", to_json_value(r.row)},
              {"history", to_json_value(r.history)},
              {"timing", {{"runtime_s", r.runtime_s}}}};
}

/// One attack under the first configured seed. Unlike sweeps, a failure
/// propagates (as a StageError naming the pipeline stage).
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  stage("config", [&] { validate(c); });
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  const SeedContext ctx = prepare_seed(c, c.seeds.front(), needs_pristine(c));
  GroupOutput g = run_group(c, ctx, {c.attack.strategy, c.attack.pattern, c.attack.n, c.attack.alpha_train}, {c.attack.alpha_test}, true, true);
  res.row = std::move(g.rows.front());
  res.history = std::move(g.history);
  res.model = std::move(g.model);
  res.poisons = std::move(g.poisons);
  res.spec = std::move(g.spec);
  res.config_hash = config_hash(c);
  res.dataset_hash = ctx.split.train.content_hash();
  res.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!c.output.empty()) {
    const fs::path out = c.output;
    write_json(out / "report.json", to_json_value(res, c));
    write_text(out / "history.jsonl", history_jsonl(res.history));
    if (res.model) save_model(out / "model.bfm", *res.model);
  }
  return res;
}

inline GridConfig effective_grid(const ExperimentConfig& c) {
  if (c.grid) return *c.grid;
  return GridConfig{{c.attack.strategy}, {c.attack.pattern}, {c.attack.n}, {c.attack.alpha_train}, {c.attack.alpha_test}};
}

inline SweepTable run_sweep(const ExperimentConfig& c) {
  stage("config", [&] { validate(c); });
  const GridConfig grid = effective_grid(c);
  SweepTable table;
  if (grid.size() > 200) table.warnings.push_back("grid has " + std::to_string(grid.size()) + " points");
  const int workers = worker_count();
  const auto ctxs = prepare_seeds(c, needs_pristine(c), workers);

  struct Task {
    std::size_t ctx;
    GroupKey key;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < ctxs.size(); ++s)
    for (auto st : grid.strategies)
      for (const auto& p : grid.patterns)
        for (int n : grid.n)
          for (double at : grid.alpha_train) tasks.push_back({s, {st, p, n, at}});
  std::vector<std::vector<SweepRow>> results(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    results[i] = run_group(c, ctxs[tasks[i].ctx], tasks[i].key, grid.alpha_test).rows;
  });
  for (auto& rs : results)
    for (auto& r : rs) table.rows.push_back(std::move(r));
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const SweepRow& a, const SweepRow& b) { return row_order_key(a) < row_order_key(b); });
  table.summaries = monotonicity(table.rows);
  return table;
}

/// Per-subject image sets: <dir>/<subject>/*.png, or synthetic identities
/// disjoint from the training labels.
inline std::vector<std::vector<Image>> subject_pools(const ExperimentConfig& c, const SeedContext& ctx) {
  std::vector<std::vector<Image>> pools;
  if (!c.cross.subjects_dir.empty()) {
    const LabeledDataset ds = load_dataset(c.cross.subjects_dir);
    pools.resize(static_cast<std::size_t>(ds.label_count));
    for (const auto& s : ds.samples) pools[static_cast<std::size_t>(s.label)].push_back(s.image);
    return pools;
  }
  const LabeledDataset ds = synth_generate(c.cross.subjects, c.cross.images_per_subject, ctx.spec.input_shape, ctx.base.derive("subjects"), c.data.synth);
  pools.resize(static_cast<std::size_t>(c.cross.subjects));
  for (const auto& s : ds.samples) pools[static_cast<std::size_t>(s.label)].push_back(s.image);
  return pools;
}

/// Leave-one-out: poisons are the key injected into every other subject's
/// images plus m injected attacker-pool images; evaluation injects the key
/// into the held-out subject's images.
inline SweepTable run_cross_subject(const ExperimentConfig& c) {
  stage("config", [&] { validate(c); });
  if (c.attack.strategy == Strategy::input_instance)
    throw StageError(Error(ErrorCode::config, "cross-subject runs need a pattern strategy"), "config");
  SweepTable table;
  const int workers = worker_count();
  const auto ctxs = prepare_seeds(c, c.pristine_baseline, workers);
  std::vector<std::vector<std::vector<Image>>> pools(ctxs.size());
  for (std::size_t s = 0; s < ctxs.size(); ++s) pools[s] = stage("subjects", [&] { return subject_pools(c, ctxs[s]); });

  struct Task {
    std::size_t ctx;
    std::size_t subject;
    int m;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < ctxs.size(); ++s)
    for (std::size_t h = 0; h < pools[s].size(); ++h)
      for (int m : c.cross.m) tasks.push_back({s, h, m});
  std::vector<SweepRow> rows(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const auto& t = tasks[i];
    const SeedContext& ctx = ctxs[t.ctx];
    SweepRow& r = rows[i];
    r.strategy = c.attack.strategy;
    r.pattern = c.attack.pattern;
    r.alpha_train = c.attack.alpha_train;
    r.alpha_test = c.attack.alpha_test;
    r.seed = ctx.seed;
    r.target = ctx.target;
    r.subject = static_cast<int>(t.subject);
    r.m = t.m;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const LeaveOneOut loo = stage("leave-one-out", [&] { return leave_one_out_pools(pools[t.ctx], t.subject); });
      auto ids = [](const std::vector<Image>& imgs) {
        std::vector<std::uint64_t> out;
        for (const auto& im : imgs) out.push_back(sample_identity(im, 0));
        return out;
      };
      if (!disjoint(ids(loo.poison_source), ids(loo.eval_source)))
        throw StageError(Error(ErrorCode::protocol, "held-out subject shares images with the poison source"), "leave-one-out");
      const KeyPair keys = stage("keys", [&] { return make_keys(c, ctx, c.attack.pattern); });
      const auto& pk = std::get<PatternKey>(keys.key);
      BackdoorSpec spec;
      spec.strategy = c.attack.strategy;
      spec.key = keys.key;
      spec.target_label = ctx.target;
      spec.alpha_train = c.attack.alpha_train;
      spec.alpha_test = c.attack.alpha_test;
      std::vector<PoisoningSample> poisons;
      stage("poison", [&] {
        for (std::size_t k = 0; k < loo.poison_source.size(); ++k)
          poisons.push_back({inject(spec.strategy, pk, loo.poison_source[k], spec.effective_alpha_train()), ctx.target, Provenance::poison,
                             SampleOrigin{-1, spec.strategy, spec.effective_alpha_train(), k}});
        if (t.m > 0) {
          BackdoorSpec extra = spec;
          extra.n = t.m;
          auto more = generate_poisons(extra, ctx.split.attacker_pool.images(), ctx.base.derive("poisons"));
          poisons.insert(poisons.end(), more.begin(), more.end());
        }
      });
      r.n = static_cast<int>(poisons.size());
      spec.n = r.n;
      const PoisonedDataset pd = stage("assemble", [&] { return assemble_poisoned(ctx.split.train, poisons); });
      TrainHistory hist;
      const Model model = stage("train", [&] { return train_poisoned(c, ctx, pd, hist); });
      EvalInstances inst = stage("backdoors", [&] { return make_instances(c, ctx, spec, keys.wrong, {}); });
      inst.backdoors = stage("backdoors", [&] { return generate_backdoor_instances(spec, loo.eval_source, ctx.base.derive("backdoors"), 0); });
      inst.backdoor_sources.clear();
      r.report = stage("evaluate", [&] { return evaluate(model, ctx.split.test, inst, ctx.target, c.threshold); });
      if (ctx.pristine) {
        r.pristine = stage("evaluate-pristine", [&] { return evaluate(*ctx.pristine, ctx.split.test, inst, ctx.target, c.threshold); });
        r.comparison = compare_to_pristine(r.report, *r.pristine, c.stealth_budget);
      }
      if (auto w = pd.warning()) r.warnings.push_back(*w);
    } catch (const Error& e) {
      r.status = e.what();
    }
    r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  table.rows = std::move(rows);
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const SweepRow& a, const SweepRow& b) { return row_order_key(a) < row_order_key(b); });
  return table;
}

// ---------------------------------------------------------------------------
// Plot series

struct PlotSeries {
  std::string name;  // file stem
  std::string csv;
};

inline double row_axis_value(const SweepRow& r, const std::string& axis) {
  if (axis == "n") return r.n;
  if (axis == "alpha_test") return r.alpha_test;
  if (axis == "alpha_train") return r.alpha_train;
  if (axis == "m") return r.m;
  if (axis == "subject") return r.subject;
  throw Error(ErrorCode::axis, "unknown axis column '" + axis + "'");
}

inline double row_metric(const SweepRow& r, const std::string& metric) {
  if (metric == "asr") return r.report.attack_success_rate;
  if (metric == "acc") return r.report.standard_test_accuracy;
  if (metric == "wrong_key") return r.report.wrong_key_rate;
  if (metric == "not_sure") return r.report.not_sure_fraction;
  throw Error(ErrorCode::axis, "unknown metric column '" + metric + "'");
}

/// One series per combination of the non-x axes; y is the mean over seeds
/// with min/max spread.
inline std::vector<PlotSeries> emit_plot_data(const SweepTable& t, const std::string& x_axis, const std::string& metric = "asr") {
  static const std::vector<std::string> axes{"n", "alpha_train", "alpha_test", "m", "subject"};
  if (std::find(axes.begin(), axes.end(), x_axis) == axes.end()) throw Error(ErrorCode::axis, "unknown axis column '" + x_axis + "'");
  SweepRow probe;
  row_metric(probe, metric);
  const std::string header = x_axis + ",mean,min,max,count\n";
  if (t.rows.empty()) return {{"series", header}};

  std::map<std::string, std::map<double, std::vector<double>>> series;
  for (const auto& r : t.rows) {
    if (!r.ok()) continue;
    std::string name = std::string(to_string(r.strategy)) + "_" + r.pattern;
    for (const auto& a : axes) {
      if (a == x_axis) continue;
      const double v = row_axis_value(r, a);
      if ((a == "m" || a == "subject") && v < 0) continue;
      name += "_" + a + "=" + fmt_num(v);
    }
    series[name][row_axis_value(r, x_axis)].push_back(row_metric(r, metric));
  }
  std::vector<PlotSeries> out;
  for (const auto& [name, points] : series) {
    std::string csv = header;
    for (const auto& [x, ys] : points) {
      double sum = 0.0;
      for (double y : ys) sum += y;
      csv += fmt_num(x) + "," + fmt_num(sum / static_cast<double>(ys.size())) + "," + fmt_num(*std::min_element(ys.begin(), ys.end())) + "," +
             fmt_num(*std::max_element(ys.begin(), ys.end())) + "," + std::to_string(ys.size()) + "\n";
    }
    out.push_back({name, csv});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Presets

inline std::vector<std::string> preset_names() {
  return {"iik", "blend", "accessory", "blended-accessory", "physical-digital", "defenses"};
}

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.model.arch = Arch::cnn_micro;
  if (name == "iik") {
    c.seeds = {1, 2, 3, 4, 5};
    c.attack.strategy = Strategy::input_instance;
    c.attack.pattern = "instance";
    c.attack.n = 5;
  } else if (name == "blend") {
    c.seeds = {1, 2, 3};
    c.attack.strategy = Strategy::blended;
    c.attack.pattern = "random";
    c.attack.alpha_train = 0.2;
    c.attack.alpha_test = 0.2;
    c.grid = GridConfig{{Strategy::blended}, {"random"}, {5, 15, 45, 135}, {0.2}, {0.1, 0.2, 0.5}};
  } else if (name == "accessory") {
    c.seeds = {1, 2, 3};
    c.attack.strategy = Strategy::accessory;
    c.attack.pattern = "glasses-reading";
    c.attack.n = 50;
    c.grid = GridConfig{{Strategy::accessory}, {"glasses-reading", "glasses-sunglasses-purple"}, {10, 25, 50, 100}, {1.0}, {1.0}};
  } else if (name == "blended-accessory") {
    c.seeds = {1, 2, 3};
    c.attack.strategy = Strategy::blended_accessory;
    c.attack.pattern = "glasses-sunglasses-purple";
    c.attack.alpha_train = 0.2;
    c.attack.n = 50;
    c.grid = GridConfig{{Strategy::blended_accessory}, {"glasses-sunglasses-purple"}, {10, 25, 50, 100}, {0.2}, {0.2, 0.5, 1.0}};
  } else if (name == "physical-digital") {
    c.seeds = {1};
    c.attack.strategy = Strategy::accessory;
    c.attack.pattern = "glasses-reading";
    c.cross = CrossSubjectConfig{5, 20, "", {0, 20, 80}};
  } else if (name == "defenses") {
    c.seeds = {1};
    c.attack.strategy = Strategy::input_instance;
    c.attack.pattern = "instance";
    c.attack.n = 5;
    c.defenses.audit = true;
    c.defenses.prune_eta = 0.05;
    c.defenses.aux_pristine = true;
  } else {
    throw Error(ErrorCode::config, "unknown preset '" + name + "'");
  }
  return c;
}

}  // namespace bdlab
