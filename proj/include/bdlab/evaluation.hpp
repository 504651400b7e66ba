#pragma once

// Attack metrics: thresholded attack success rate, thresholded standard
// test accuracy, and the threshold-free wrong-key rate.
//
// Every metric is written against a generic scorer (Image -> probability
// vector) so property tests can drive it with synthetic probability
// vectors; the Model overloads wrap a Predictor.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdlab/datasets.hpp"
#include "bdlab/error.hpp"
#include "bdlab/training.hpp"

namespace bdlab {

inline constexpr double kAcceptanceThreshold = 0.85;

template <typename F>
concept Scorer = requires(F f, const Image& img) {
  { f(img) } -> std::convertible_to<std::vector<double>>;
};

struct AttackSuccess {
  double rate = 0.0;
  double mean_confidence = 0.0;  // mean probability of the target label
  std::size_t hits = 0;
  std::size_t not_sure = 0;
  std::size_t total = 0;
};

struct Accuracy {
  double rate = 0.0;
  std::size_t correct = 0;
  std::size_t not_sure = 0;
  std::size_t total = 0;
};

struct WrongKey {
  double rate = 0.0;
  std::size_t hits = 0;
  std::size_t total = 0;
};

template <Scorer F>
AttackSuccess attack_success_rate(F&& scorer, std::span<const Image> backdoors, Label target, double threshold = kAcceptanceThreshold) {
  if (backdoors.empty()) throw Error(ErrorCode::empty_eval, "no backdoor instances to evaluate");
  AttackSuccess r;
  r.total = backdoors.size();
  double conf = 0.0;
  for (const auto& img : backdoors) {
    const std::vector<double> p = scorer(img);
    const Verdict v = verdict_from(p, threshold);
    conf += p.at(static_cast<std::size_t>(target));
    if (v.not_sure()) ++r.not_sure;
    else if (*v.label == target) ++r.hits;
  }
  r.rate = static_cast<double>(r.hits) / static_cast<double>(r.total);
  r.mean_confidence = conf / static_cast<double>(r.total);
  return r;
}

/// NOT-SURE verdicts count as incorrect.
template <Scorer F>
Accuracy standard_test_accuracy(F&& scorer, const LabeledDataset& test, double threshold = kAcceptanceThreshold) {
  if (test.empty()) throw Error(ErrorCode::empty_eval, "test set is empty");
  Accuracy r;
  r.total = test.size();
  for (const auto& s : test.samples) {
    const Verdict v = verdict_from(scorer(s.image), threshold);
    if (v.not_sure()) ++r.not_sure;
    else if (*v.label == s.label) ++r.correct;
  }
  r.rate = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

/// Counts unthresholded argmax == target; no confidence constraint.
template <Scorer F>
WrongKey wrong_key_rate(F&& scorer, std::span<const Image> instances, std::span<const Label> ground_truth, Label target) {
  if (instances.size() != ground_truth.size()) throw Error(ErrorCode::precondition, "instances and ground truths differ in length");
  if (instances.empty()) throw Error(ErrorCode::empty_eval, "no wrong-key instances to evaluate");
  for (Label g : ground_truth)
    if (g == target) throw Error(ErrorCode::precondition, "wrong-key instance has the target label as ground truth");
  WrongKey r;
  r.total = instances.size();
  for (const auto& img : instances) {
    const std::vector<double> p = scorer(img);
    if (verdict_from(p, 0.0).argmax == target) ++r.hits;
  }
  r.rate = static_cast<double>(r.hits) / static_cast<double>(r.total);
  return r;
}

inline auto model_scorer(Predictor& pred) {
  return [&pred](const Image& img) { return pred.probabilities(img); };
}

inline AttackSuccess attack_success_rate(const Model& model, std::span<const Image> backdoors, Label target,
                                         double threshold = kAcceptanceThreshold) {
  Predictor pred(model);
  return attack_success_rate(model_scorer(pred), backdoors, target, threshold);
}

inline Accuracy standard_test_accuracy(const Model& model, const LabeledDataset& test, double threshold = kAcceptanceThreshold) {
  Predictor pred(model);
  return standard_test_accuracy(model_scorer(pred), test, threshold);
}

inline WrongKey wrong_key_rate(const Model& model, std::span<const Image> instances, std::span<const Label> ground_truth, Label target) {
  Predictor pred(model);
  return wrong_key_rate(model_scorer(pred), instances, ground_truth, target);
}

struct EvalReport {
  double attack_success_rate = 0.0;
  double standard_test_accuracy = 0.0;
  double wrong_key_rate = 0.0;
  double not_sure_fraction = 0.0;  // over backdoor instances
  double mean_backdoor_confidence = 0.0;
  std::size_t backdoor_hits = 0, backdoor_not_sure = 0, backdoor_total = 0;
  std::size_t test_correct = 0, test_not_sure = 0, test_total = 0;
  std::size_t wrong_key_hits = 0, wrong_key_total = 0;
  // Backdoor instances whose source image already carries the target label
  // (pattern strategies evaluate on the whole pool).
  std::size_t backdoor_sources_with_target = 0;
  std::uint64_t test_hash = 0;
};

inline EvalReport make_report(const AttackSuccess& asr, const Accuracy& acc, const WrongKey& wk, std::uint64_t test_hash) {
  EvalReport r;
  r.attack_success_rate = asr.rate;
  r.mean_backdoor_confidence = asr.mean_confidence;
  r.backdoor_hits = asr.hits;
  r.backdoor_not_sure = asr.not_sure;
  r.backdoor_total = asr.total;
  r.not_sure_fraction = asr.total ? static_cast<double>(asr.not_sure) / static_cast<double>(asr.total) : 0.0;
  r.standard_test_accuracy = acc.rate;
  r.test_correct = acc.correct;
  r.test_not_sure = acc.not_sure;
  r.test_total = acc.total;
  r.wrong_key_rate = wk.rate;
  r.wrong_key_hits = wk.hits;
  r.wrong_key_total = wk.total;
  r.test_hash = test_hash;
  return r;
}

/// Everything needed to score one model: backdoor instances (with the
/// labels of the images they were built from, when known) and wrong-key
/// instances with their ground truths.
struct EvalInstances {
  std::vector<Image> backdoors;
  std::vector<Label> backdoor_sources;  // may be empty (instance keys)
  std::vector<Image> wrong_key;
  std::vector<Label> wrong_key_truth;
};

inline EvalReport evaluate(const Model& model, const LabeledDataset& test, const EvalInstances& inst, Label target,
                           double threshold = kAcceptanceThreshold) {
  Predictor pred(model);
  auto sc = model_scorer(pred);
  const AttackSuccess asr = attack_success_rate(sc, inst.backdoors, target, threshold);
  const Accuracy acc = standard_test_accuracy(sc, test, threshold);
  const WrongKey wk = wrong_key_rate(sc, inst.wrong_key, inst.wrong_key_truth, target);
  EvalReport r = make_report(asr, acc, wk, test.content_hash());
  r.backdoor_sources_with_target =
      static_cast<std::size_t>(std::count(inst.backdoor_sources.begin(), inst.backdoor_sources.end(), target));
  return r;
}

struct PristineComparison {
  double accuracy_delta = 0.0;  // poisoned - pristine
  bool stealthy = true;
  double budget = 0.01;
};

inline PristineComparison compare_to_pristine(const EvalReport& poisoned, const EvalReport& pristine, double budget = 0.01) {
  if (poisoned.test_hash != pristine.test_hash)
    throw Error(ErrorCode::comparison, "reports were computed on different test sets");
  PristineComparison c;
  c.budget = budget;
  c.accuracy_delta = poisoned.standard_test_accuracy - pristine.standard_test_accuracy;
  // Small slack so deltas that equal the budget up to rounding count as within it.
  c.stealthy = std::abs(c.accuracy_delta) <= budget + 1e-12;
  return c;
}

}  // namespace bdlab
