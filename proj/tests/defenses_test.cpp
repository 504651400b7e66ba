#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "bdlab/defenses.hpp"
#include "support.hpp"

namespace bdlab {
namespace {

using testing::random_image;

PoisonedDataset random_poisoned(Rng rng, std::size_t N, std::size_t n, Shape s = Shape{4, 4, 3}) {
  std::vector<LabeledImage> items;
  for (std::size_t i = 0; i < N; ++i) items.push_back({random_image(s, rng.derive("x", i)), static_cast<Label>(i % 4)});
  std::vector<PoisoningSample> poisons;
  for (std::size_t i = 0; i < n; ++i) poisons.push_back({random_image(s, rng.derive("p", i)), 1, Provenance::poison, {}});
  return assemble_poisoned(make_dataset(std::move(items), 4), std::move(poisons));
}

// Independent oracle: explicit distance computation and a full sort.
std::vector<std::size_t> brute_force_removed(const PoisonedDataset& ds, double eta) {
  const std::size_t total = ds.size(), dim = ds.image(0).size();
  std::vector<long double> mean(dim, 0.0L);
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += ds.image(i).pixels()[j];
  for (auto& m : mean) m /= static_cast<long double>(total);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < total; ++i) {
    long double s = 0.0L;
    for (std::size_t j = 0; j < dim; ++j) s += (ds.image(i).pixels()[j] - mean[j]) * (ds.image(i).pixels()[j] - mean[j]);
    order.push_back({-static_cast<double>(std::sqrt(s)), i});
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> out;
  const auto k = static_cast<std::size_t>(eta * static_cast<double>(total));
  for (std::size_t i = 0; i < k; ++i) out.push_back(order[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

TEST(Audit, BalancedSet) {
  const auto a = audit_counts({50, 50, 50, 50});
  EXPECT_EQ(a.skew_ratio, 1.0);
  EXPECT_TRUE(a.flagged.empty());
  EXPECT_EQ(a.total, 200u);
}

TEST(Audit, FivePoisonsDoNotStandOut) {
  std::vector<std::size_t> counts(10, 1000);
  counts[4] += 5;
  const auto a = audit_counts(counts);
  EXPECT_EQ(a.counts[4], 1005u);
  EXPECT_NEAR(a.skew_ratio, 1.005, 1e-12);
  // One raised label among ten: count - median = 5 while stddev = 1.5.
  EXPECT_NEAR(a.stddev, 1.5, 1e-12);
  EXPECT_TRUE(a.flagged.empty());
}

TEST(Audit, CountsSumToDatasetSize) {
  const auto ds = random_poisoned(Rng(1), 37, 3);
  const auto a = audit_label_distribution(ds);
  EXPECT_EQ(a.total, ds.size());
  EXPECT_EQ(std::accumulate(a.counts.begin(), a.counts.end(), std::size_t{0}), ds.size());
}

TEST(Audit, FlagsGrossImbalance) {
  std::vector<std::size_t> counts(20, 100);
  counts[7] = 400;
  EXPECT_EQ(audit_counts(counts).flagged, (std::vector<Label>{7}));
}

TEST(Prune, RemovalCountIsFloor) {
  EXPECT_EQ(removal_count(1005, 0.05), 50u);
  const auto ds = random_poisoned(Rng(2), 1000, 5, Shape{2, 2, 1});
  EXPECT_EQ(l2_outlier_prune(ds, 0.05).removed_count, 50u);
  EXPECT_BDLAB_ERROR(l2_outlier_prune(ds, 0.0), ErrorCode::invalid_parameter);
  EXPECT_BDLAB_ERROR(l2_outlier_prune(ds, 1.0), ErrorCode::invalid_parameter);
}

TEST(Prune, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed)
    for (double eta : {0.01, 0.05, 0.2, 0.5}) {
      const auto ds = random_poisoned(Rng(seed), 60 + seed, 1 + seed % 4);
      EXPECT_EQ(l2_outlier_prune(ds, eta).removed, brute_force_removed(ds, eta)) << seed << " " << eta;
      EXPECT_TRUE(removal_oracle_check(ds, eta));
    }
}

TEST(Prune, TiesRemoveLowestIndices) {
  std::vector<LabeledImage> items(9, {Image(Shape{2, 2, 1}, 7), 0});
  std::vector<PoisoningSample> poisons{{Image(Shape{2, 2, 1}, 7), 1, Provenance::poison, {}}};
  const auto ds = assemble_poisoned(make_dataset(std::move(items), 2), std::move(poisons));
  const auto r = l2_outlier_prune(ds, 0.3);
  EXPECT_EQ(r.removed, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(removal_oracle_check(ds, 0.3));
}

TEST(Prune, GrossOutlierPoisonRemoved) {
  std::vector<LabeledImage> items(20, {Image(Shape{3, 3, 3}, 100), 0});
  std::vector<PoisoningSample> poisons{{Image(Shape{3, 3, 3}, 255), 1, Provenance::poison, {}}};
  const auto ds = assemble_poisoned(make_dataset(std::move(items), 2), std::move(poisons));
  const auto r = l2_outlier_prune(ds, 0.05);
  EXPECT_EQ(r.removed, (std::vector<std::size_t>{20}));
  EXPECT_EQ(r.poisons_removed, 1u);
  EXPECT_EQ(r.poison_percentiles, (std::vector<double>{1.0}));
  const auto kept = apply_prune(ds, r);
  EXPECT_EQ(kept.size(), 20u);
  for (const auto& s : kept.samples) EXPECT_EQ(s.provenance, Provenance::pristine);
}

TEST(Prune, TinyEtaRemovesNothing) {
  const auto ds = random_poisoned(Rng(5), 30, 2);
  const auto r = l2_outlier_prune(ds, 0.02);
  EXPECT_EQ(r.removed_count, 0u);
  EXPECT_TRUE(r.removed.empty());
  EXPECT_TRUE(removal_oracle_check(ds, 0.02));
  EXPECT_EQ(apply_prune(ds, r).size(), ds.size());
}

TEST(Aux, RunsEndToEndAndKeepsPrefix) {
  const Shape s{8, 8, 3};
  const auto data = synth_generate(3, 30, s, Rng(1));
  const auto split = split_three_way(data, 5, 2, Rng(2));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.per_label = 20;
  const Model feat = train(init_model(ModelSpec{Arch::cnn_micro, 0, s, 3}, Rng(3)), split.train, split.test, cfg).model;

  // A stand-in "poison": one clean training sample relabelled to itself.
  const auto pd = assemble_poisoned(split.train, {{split.train.samples[0].image, split.train.samples[0].label, Provenance::poison, {}}});
  EvalInstances inst;
  for (const auto& smp : split.test.samples) {
    inst.backdoors.push_back(smp.image);
    if (smp.label != 0) {
      inst.wrong_key.push_back(smp.image);
      inst.wrong_key_truth.push_back(smp.label);
    }
  }
  const auto r = aux_pristine_eval(feat, pd, split.test, inst, 0, cfg);
  EXPECT_TRUE(r.frozen_prefix_intact);
  EXPECT_EQ(r.fine_tune_history.epochs.size(), 3u);
  EXPECT_EQ(r.full_history.epochs.size(), 3u);
}

}  // namespace
}  // namespace bdlab
