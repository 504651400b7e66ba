#pragma once

// JSON conversions (nlohmann) for configs, reports and audit results.
// Images never go through JSON; see storage.hpp for on-disk artifacts.

#include <nlohmann/json.hpp>

#include <string>

#include "bdlab/defenses.hpp"
#include "bdlab/evaluation.hpp"
#include "bdlab/keys.hpp"
#include "bdlab/training.hpp"

namespace bdlab {

using json = nlohmann::json;

inline json shape_json(const Shape& s) { return json::array({s.height, s.width, s.channels}); }
inline Shape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::config, "shape must be [H, W, C]");
  return Shape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

inline std::string to_string(SelectOn s) { return s == SelectOn::best_test ? "best-test" : "final"; }
inline SelectOn parse_select_on(std::string_view s) {
  if (s == "best-test" || s == "best_test") return SelectOn::best_test;
  if (s == "final") return SelectOn::final_epoch;
  throw Error(ErrorCode::config, "unknown select_on '" + std::string(s) + "'");
}

// Reads an optional field, keeping the default when absent. Type mismatches
// surface as config errors rather than nlohmann exceptions.
template <typename T>
void read_opt(const json& j, const char* field, T& out) {
  if (!j.contains(field)) return;
  try {
    out = j.at(field).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("field '") + field + "': " + e.what());
  }
}

inline json to_json_value(const ModelSpec& s) {
  json j{{"arch", to_string(s.arch)}, {"input_shape", shape_json(s.input_shape)}, {"num_labels", s.num_labels}};
  if (s.arch == Arch::mlp) j["hidden"] = s.hidden;
  return j;
}

inline ModelSpec model_spec_from(const json& j) {
  ModelSpec s;
  std::string arch(to_string(s.arch));
  read_opt(j, "arch", arch);
  s.arch = parse_arch(arch);
  read_opt(j, "hidden", s.hidden);
  read_opt(j, "num_labels", s.num_labels);
  if (j.contains("input_shape")) s.input_shape = shape_from(j["input_shape"]);
  s.validate();
  return s;
}

inline json to_json_value(const TrainConfig& c) {
  return json{{"epochs", c.epochs},       {"per_label", c.per_label}, {"batch", c.batch},
              {"lr", c.lr},               {"momentum", c.momentum},   {"lr_decay", c.lr_decay},
              {"seed", c.seed},           {"select_on", to_string(c.select_on)}};
}

inline TrainConfig train_config_from(const json& j) {
  TrainConfig c;
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "per_label", c.per_label);
  read_opt(j, "batch", c.batch);
  read_opt(j, "lr", c.lr);
  read_opt(j, "momentum", c.momentum);
  read_opt(j, "lr_decay", c.lr_decay);
  read_opt(j, "seed", c.seed);
  if (j.contains("select_on")) c.select_on = parse_select_on(j["select_on"].get<std::string>());
  c.validate();
  return c;
}

inline json to_json_value(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}, {"test_accuracy", e.test_accuracy}});
  return json{{"selected_epoch", h.selected_epoch}, {"epochs", epochs}};
}

/// One JSON object per line, one line per epoch.
inline std::string history_jsonl(const TrainHistory& h) {
  std::string out;
  for (const auto& e : h.epochs) {
    json j{{"epoch", e.epoch},
           {"train_loss", e.train_loss},
           {"train_accuracy", e.train_accuracy},
           {"test_accuracy", e.test_accuracy},
           {"selected", e.epoch == h.selected_epoch}};
    out += j.dump() + "\n";
  }
  return out;
}

inline json to_json_value(const EvalReport& r) {
  return json{{"attack_success_rate", r.attack_success_rate},
              {"standard_test_accuracy", r.standard_test_accuracy},
              {"wrong_key_rate", r.wrong_key_rate},
              {"not_sure_fraction", r.not_sure_fraction},
              {"mean_backdoor_confidence", r.mean_backdoor_confidence},
              {"counts",
               {{"backdoor_hits", r.backdoor_hits},
                {"backdoor_not_sure", r.backdoor_not_sure},
                {"backdoor_total", r.backdoor_total},
                {"backdoor_sources_with_target", r.backdoor_sources_with_target},
                {"test_correct", r.test_correct},
                {"test_not_sure", r.test_not_sure},
                {"test_total", r.test_total},
                {"wrong_key_hits", r.wrong_key_hits},
                {"wrong_key_total", r.wrong_key_total}}},
              {"test_hash", r.test_hash}};
}

inline EvalReport eval_report_from(const json& j) {
  EvalReport r;
  try {
    r.attack_success_rate = j.at("attack_success_rate").get<double>();
    r.standard_test_accuracy = j.at("standard_test_accuracy").get<double>();
    r.wrong_key_rate = j.at("wrong_key_rate").get<double>();
    r.not_sure_fraction = j.at("not_sure_fraction").get<double>();
    r.mean_backdoor_confidence = j.at("mean_backdoor_confidence").get<double>();
    const json& c = j.at("counts");
    r.backdoor_hits = c.at("backdoor_hits").get<std::size_t>();
    r.backdoor_not_sure = c.at("backdoor_not_sure").get<std::size_t>();
    r.backdoor_total = c.at("backdoor_total").get<std::size_t>();
    r.backdoor_sources_with_target = c.value("backdoor_sources_with_target", std::size_t{0});
    r.test_correct = c.at("test_correct").get<std::size_t>();
    r.test_not_sure = c.at("test_not_sure").get<std::size_t>();
    r.test_total = c.at("test_total").get<std::size_t>();
    r.wrong_key_hits = c.at("wrong_key_hits").get<std::size_t>();
    r.wrong_key_total = c.at("wrong_key_total").get<std::size_t>();
    r.test_hash = j.at("test_hash").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("malformed report: ") + e.what());
  }
  return r;
}

inline json to_json_value(const PristineComparison& c) {
  return json{{"accuracy_delta", c.accuracy_delta}, {"stealthy", c.stealthy}, {"budget", c.budget}};
}

inline json to_json_value(const DistributionAudit& a) {
  return json{{"counts", a.counts},         {"total", a.total},   {"max", a.max_count},
              {"min", a.min_count},         {"median", a.median}, {"stddev", a.stddev}, {"scale", a.scale},
              {"skew_ratio", a.skew_ratio}, {"z", a.z_threshold}, {"flagged", a.flagged}};
}

inline json to_json_value(const PruneResult& r) {
  return json{{"eta", r.eta},
              {"removed_count", r.removed_count},
              {"removed", r.removed},
              {"poisons_removed", r.poisons_removed},
              {"poisons_total", r.poisons_total},
              {"poison_percentiles", r.poison_percentiles}};
}

}  // namespace bdlab
