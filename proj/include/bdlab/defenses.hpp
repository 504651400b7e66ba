#pragma once

// Candidate defenses: label-distribution audit, L2-from-mean outlier
// pruning, and the auxiliary-pristine-data (fine-tune last layer) wrapper.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

#include "bdlab/datasets.hpp"
#include "bdlab/error.hpp"
#include "bdlab/evaluation.hpp"
#include "bdlab/training.hpp"

namespace bdlab {

struct DistributionAudit {
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  std::size_t max_count = 0, min_count = 0;
  double median = 0.0;
  double stddev = 0.0;  // population
  double scale = 0.0;   // max(stddev, sqrt(median)): the unit for z
  double skew_ratio = 0.0;  // max / median
  double z_threshold = 3.0;
  std::vector<Label> flagged;
};

inline DistributionAudit audit_counts(std::vector<std::size_t> counts, double z = 3.0) {
  if (counts.empty()) throw Error(ErrorCode::empty_dataset, "audit needs at least one label");
  DistributionAudit a;
  a.counts = std::move(counts);
  a.z_threshold = z;
  a.total = std::accumulate(a.counts.begin(), a.counts.end(), std::size_t{0});
  a.max_count = *std::max_element(a.counts.begin(), a.counts.end());
  a.min_count = *std::min_element(a.counts.begin(), a.counts.end());
  std::vector<std::size_t> sorted = a.counts;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  a.median = m % 2 ? static_cast<double>(sorted[m / 2]) : 0.5 * static_cast<double>(sorted[m / 2 - 1] + sorted[m / 2]);
  const double mean = static_cast<double>(a.total) / static_cast<double>(m);
  double var = 0.0;
  for (auto c : a.counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  a.stddev = std::sqrt(var / static_cast<double>(m));
  a.skew_ratio = a.median > 0.0 ? static_cast<double>(a.max_count) / a.median : 0.0;
  // A lone raised label inflates stddev by itself, which makes its own
  // z-score scale-free; counting noise (sqrt of the median) is the floor.
  a.scale = std::max(a.stddev, std::sqrt(a.median));
  if (a.scale > 0.0)
    for (std::size_t l = 0; l < m; ++l)
      if (static_cast<double>(a.counts[l]) - a.median > z * a.scale) a.flagged.push_back(static_cast<Label>(l));
  return a;
}

inline DistributionAudit audit_label_distribution(const LabeledDataset& ds, double z = 3.0) {
  if (ds.empty()) throw Error(ErrorCode::empty_dataset, "cannot audit an empty dataset");
  return audit_counts(ds.label_counts(), z);
}

inline DistributionAudit audit_label_distribution(const PoisonedDataset& ds, double z = 3.0) {
  if (ds.size() == 0) throw Error(ErrorCode::empty_dataset, "cannot audit an empty dataset");
  std::vector<std::size_t> counts(static_cast<std::size_t>(ds.base.label_count), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) ++counts.at(static_cast<std::size_t>(ds.label(i)));
  return audit_counts(std::move(counts), z);
}

// ---------------------------------------------------------------------------
// L2 outlier pruning

struct PruneResult {
  std::vector<std::size_t> removed;  // ascending dataset indices
  std::size_t removed_count = 0;
  std::size_t poisons_removed = 0;
  std::size_t poisons_total = 0;
  // For each poison (in poison order): share of all instances strictly
  // closer to the mean, in [0,1]. 1 means the poison is the farthest.
  std::vector<double> poison_percentiles;
  double eta = 0.0;
};

inline void check_eta(double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw Error(ErrorCode::invalid_parameter, "eta must lie in (0,1), got " + std::to_string(eta));
}

inline std::size_t removal_count(std::size_t total, double eta) {
  return static_cast<std::size_t>(std::floor(eta * static_cast<double>(total)));
}

/// Euclidean distance of every instance from the mean of all instances
/// (poisons included), in raw [0,255] pixel space.
inline std::vector<double> distances_from_mean(const PoisonedDataset& ds) {
  const std::size_t total = ds.size();
  if (total == 0) throw Error(ErrorCode::empty_dataset, "cannot prune an empty dataset");
  const std::size_t dim = ds.image(0).size();
  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    const auto& px = ds.image(i).pixels();
    if (px.size() != dim) throw Error(ErrorCode::shape, "instance " + std::to_string(i) + " has a different shape");
    for (std::size_t j = 0; j < dim; ++j) mean[j] += px[j];
  }
  for (auto& m : mean) m /= static_cast<double>(total);
  std::vector<double> dist(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto& px = ds.image(i).pixels();
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = px[j] - mean[j];
      s += d * d;
    }
    dist[i] = std::sqrt(s);
  }
  return dist;
}

namespace detail {

// Farther first; equal distances remove the smaller index first.
struct PruneOrder {
  const std::vector<double>* dist;
  bool operator()(std::size_t a, std::size_t b) const {
    const double da = (*dist)[a], db = (*dist)[b];
    return da != db ? da > db : a < b;
  }
};

inline PruneResult finish_prune(const PoisonedDataset& ds, const std::vector<double>& dist, std::vector<std::size_t> removed,
                                double eta) {
  std::sort(removed.begin(), removed.end());
  PruneResult r;
  r.eta = eta;
  r.removed_count = removed.size();
  r.poisons_total = ds.n();
  for (auto i : removed)
    if (ds.provenance(i) == Provenance::poison) ++r.poisons_removed;
  std::vector<double> sorted = dist;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t p = 0; p < ds.n(); ++p) {
    const double d = dist[ds.N() + p];
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), d) - sorted.begin();
    r.poison_percentiles.push_back(dist.size() > 1 ? static_cast<double>(below) / static_cast<double>(dist.size() - 1) : 0.0);
  }
  r.removed = std::move(removed);
  return r;
}

}  // namespace detail

inline PruneResult l2_outlier_prune(const PoisonedDataset& ds, double eta) {
  check_eta(eta);
  const auto dist = distances_from_mean(ds);
  const std::size_t k = removal_count(dist.size(), eta);
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const detail::PruneOrder order{&dist};
  // Selection, not a full sort: [0,k) ends up holding the k first under the order.
  if (k > 0 && k < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), order);
  idx.resize(k);
  return detail::finish_prune(ds, dist, std::move(idx), eta);
}

/// Recomputes the removed set by a full sort and compares index sets.
inline bool removal_oracle_check(const PoisonedDataset& ds, double eta) {
  check_eta(eta);
  const auto dist = distances_from_mean(ds);
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  idx.resize(removal_count(dist.size(), eta));
  std::sort(idx.begin(), idx.end());
  return idx == l2_outlier_prune(ds, eta).removed;
}

/// The poisoned set with the pruned instances dropped; poisons keep their
/// provenance flag.
inline LabeledDataset apply_prune(const PoisonedDataset& ds, const PruneResult& r) {
  LabeledDataset out;
  out.label_count = ds.base.label_count;
  out.original_labels = ds.base.original_labels;
  std::size_t next = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (next < r.removed.size() && r.removed[next] == i) {
      ++next;
      continue;
    }
    out.samples.push_back({ds.image(i), ds.label(i), ds.provenance(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Auxiliary pristine data

struct AuxResult {
  EvalReport full_train;
  EvalReport fine_tune;
  TrainHistory full_history;
  TrainHistory fine_tune_history;
  bool frozen_prefix_intact = false;
};

inline bool prefix_bit_equal(const Model& a, const Model& b, std::size_t count) {
  if (a.params.size() < count || b.params.size() < count) return false;
  return std::memcmp(a.params.data(), b.params.data(), count * sizeof(double)) == 0;
}

/// Fine-tunes the last layer of a pristine feature model on the poisoned
/// set and pairs the result with a full from-scratch training on the same
/// data. Pass `full_train` to reuse an existing full-train model.
inline AuxResult aux_pristine_eval(const Model& pristine_feature_model, const PoisonedDataset& poisoned, const LabeledDataset& test,
                                   const EvalInstances& inst, Label target, const TrainConfig& cfg,
                                   const Model* full_train = nullptr, double threshold = kAcceptanceThreshold) {
  AuxResult r;
  if (full_train) {
    r.full_train = evaluate(*full_train, test, inst, target, threshold);
  } else {
    const Model init = init_model(pristine_feature_model.spec, Rng(cfg.seed).derive("init"));
    TrainResult full = train(init, poisoned, test, cfg);
    r.full_train = evaluate(full.model, test, inst, target, threshold);
    r.full_history = std::move(full.history);
  }
  TrainResult ft = finetune_last_layer(pristine_feature_model, poisoned, test, cfg);
  r.frozen_prefix_intact = prefix_bit_equal(ft.model, pristine_feature_model, ft.model.last_layer_offset());
  r.fine_tune = evaluate(ft.model, test, inst, target, threshold);
  r.fine_tune_history = std::move(ft.history);
  return r;
}

}  // namespace bdlab
