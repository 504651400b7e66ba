// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Thresholds are fixed here, not read from configuration.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "bdlab/harness.hpp"

using namespace bdlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

Image random_image(Shape s, Rng rng) {
  Image img(s);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// ---------------------------------------------------------------------------

Outcome injection_algebra() {
  Rng rng(101);
  std::size_t blend_ok = 0, acc_ok = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    Rng r = rng.derive("triple", static_cast<std::uint64_t>(t));
    const Shape frame{4 + static_cast<int>(r.below(29)), 4 + static_cast<int>(r.below(29)), 1 + 2 * static_cast<int>(r.below(2))};
    const Image x = random_image(frame, r.derive("x"));
    const double alpha = r.uniform01();

    const PatternKey full = full_frame_key(random_image(frame, r.derive("k")));
    blend_ok += blended_accessory_inject(full, x, alpha) == blend_inject(full, x, alpha);

    // Partial keys with holes: glasses when the frame is three-channel,
    // otherwise a full-frame pattern with a random transparent mask.
    PatternKey partial = full;
    if (frame.channels == 3) {
      const GlassesStyle style = r.below(2) ? GlassesStyle::reading : GlassesStyle::sunglasses;
      partial = glasses_key(style, frame, static_cast<PatternScale>(r.below(3)));
    } else {
      Rng m = r.derive("mask");
      for (int i = 0; i < frame.height; ++i)
        for (int j = 0; j < frame.width; ++j) partial.transparent_mask.set(i, j, m.below(3) == 0);
    }
    acc_ok += blended_accessory_inject(partial, x, 1.0) == accessory_inject(partial, x);
  }
  return {blend_ok == trials && acc_ok == trials,
          "BA(full opaque)==blend " + std::to_string(blend_ok) + "/1000, BA(alpha=1)==accessory " + std::to_string(acc_ok) + "/1000"};
}

Outcome gradient_correctness() {
  const Shape s{16, 16, 3};
  // cnn-micro is piecewise linear: a smaller step rarely straddles a ReLU
  // or max-pool switch (1e-5 crosses one on a few coordinates). Softmax is
  // smooth, where the larger step keeps round-off down.
  constexpr double kCnnEps = 1e-6, kSoftEps = 1e-5;
  double worst_cnn = 0.0, worst_soft = 0.0;
  for (int b = 0; b < 20; ++b) {
    Rng r = Rng(202).derive("batch", static_cast<std::uint64_t>(b));
    std::vector<LabeledImage> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({random_image(s, r.derive("img", static_cast<std::uint64_t>(i))), static_cast<Label>(r.below(10))});
    const Model cnn = init_model(ModelSpec{Arch::cnn_micro, 0, s, 10}, r.derive("cnn"));
    const Model soft = init_model(ModelSpec{Arch::softmax, 0, s, 10}, r.derive("soft"));
    worst_cnn = std::max(worst_cnn, grad_check(cnn, batch, kCnnEps, r.derive("fd-cnn")));
    worst_soft = std::max(worst_soft, grad_check(soft, batch, kSoftEps, r.derive("fd-soft")));
  }
  std::ostringstream os;
  os << "max rel err cnn-micro " << worst_cnn << " (< 1e-4), softmax " << worst_soft << " (< 1e-6)";
  return {worst_cnn < 1e-4 && worst_soft < 1e-6, os.str()};
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.model.arch = Arch::cnn_micro;
  return c;
}

Outcome pristine_baseline() {
  const auto c = desk_config();
  const SeedContext ctx = prepare_seed(c, 1, true);
  const auto acc = standard_test_accuracy(*ctx.pristine, ctx.split.test);
  return {acc.rate >= 0.95, "N=" + std::to_string(ctx.split.train.size()) + ", test accuracy " + fmt(acc.rate) + " (>= 0.95)"};
}

ExperimentConfig iik_config() {
  auto c = preset("iik");
  c.defenses.prune_eta = 0.05;  // criterion 7 reads the prune result
  return c;
}

Outcome iik_reproduction(const SweepTable& t) {
  double asr = 0.0, drop = 0.0;
  bool wrong_zero = true, ok = true;
  std::size_t n_total = 0;
  for (const auto& r : t.rows) {
    ok = ok && r.ok() && r.pristine;
    if (!r.ok() || !r.pristine) continue;
    asr += r.report.attack_success_rate;
    drop += r.pristine->standard_test_accuracy - r.report.standard_test_accuracy;
    wrong_zero = wrong_zero && r.report.wrong_key_rate == 0.0;
    n_total = r.prune ? r.prune->poisons_total : n_total;
  }
  const double k = static_cast<double>(t.rows.size());
  asr /= k;
  drop /= k;
  std::string per_seed;
  for (const auto& r : t.rows) per_seed += " " + (r.ok() ? fmt(r.report.attack_success_rate, 2) + "/" + fmt(r.report.wrong_key_rate, 2) : std::string("err"));
  return {ok && t.rows.size() == 5 && asr >= 0.9 && drop <= 0.02 && wrong_zero,
          "5 seeds, mean ASR " + fmt(asr) + " (>= 0.9), mean acc drop " + fmt(100 * drop, 2) + "pp (<= 2), wrong-key all zero: " +
              (wrong_zero ? "yes" : "no") + "; asr/wrong per seed:" + per_seed};
}

Outcome blend_trend(const SweepTable& t) {
  if (t.summaries.size() != 1) return {false, "expected one grid summary"};
  const auto& s = t.summaries[0];
  bool small = true;
  std::string inv;
  for (const auto& i : s.inversions) {
    small = small && i.drop <= 0.05;
    inv += " [" + i.axis + " " + fmt_num(i.from) + "->" + fmt_num(i.to) + " @" + fmt_num(i.fixed) + " drop " + fmt(i.drop) + "]";
  }
  std::string grid;
  for (std::size_t a = 0; a < s.n_values.size(); ++a) {
    grid += " n=" + std::to_string(s.n_values[a]) + ":";
    for (std::size_t b = 0; b < s.alpha_test_values.size(); ++b) grid += (b ? "/" : "") + fmt(s.mean[a][b], 2);
  }
  const bool all_ok = std::all_of(t.rows.begin(), t.rows.end(), [](const SweepRow& r) { return r.ok(); });
  return {all_ok && s.inversions.size() <= 1 && small && s.top_rate >= 0.8,
          std::to_string(s.inversions.size()) + " inversion(s)" + inv + ", top " + fmt(s.top_rate) + " (>= 0.8); means" + grid};
}

ExperimentConfig blend_config() {
  auto c = preset("blend");
  c.pristine_baseline = false;
  return c;
}

ExperimentConfig ba_config() {
  auto c = preset("blended-accessory");
  c.pristine_baseline = false;
  c.grid->n = {50, 100};
  c.grid->alpha_test = {1.0};
  return c;
}

Outcome ba_attack(const SweepTable& t, const SweepTable& accessory) {
  std::map<int, std::pair<double, bool>> by_n;  // mean asr, wrong-key zero in every seed
  std::map<int, int> seeds;
  bool all_ok = true;
  for (const auto& r : t.rows) {
    all_ok = all_ok && r.ok();
    auto& [asr, zero] = by_n.try_emplace(r.n, 0.0, true).first->second;
    asr += r.report.attack_success_rate;
    zero = zero && r.ok() && r.report.wrong_key_rate == 0.0;
    ++seeds[r.n];
  }
  bool pass = false;
  std::string detail = "blended accessory, alpha_train 0.2, alpha_test 1:";
  for (auto& [n, v] : by_n) {
    v.first /= seeds[n];
    double worst = 0.0;
    for (const auto& r : t.rows)
      if (r.n == n) worst = std::max(worst, r.report.wrong_key_rate);
    detail += " n=" + std::to_string(n) + " ASR " + fmt(v.first) + " max wrong-key " + fmt(worst) + ";";
    pass = pass || (v.first >= 0.9 && v.second);
  }
  // Opaque accessory for context; not part of the verdict.
  for (const auto& r : accessory.rows)
    if (r.ok())
      detail += " [info: accessory n=" + std::to_string(r.n) + " seed " + std::to_string(r.seed) + " ASR " + fmt(r.report.attack_success_rate) +
                " wrong-key " + fmt(r.report.wrong_key_rate) + "]";
  return {all_ok && pass, detail};
}

ExperimentConfig accessory_info_config() {
  auto c = preset("accessory");
  c.pristine_baseline = false;
  c.seeds = {1};
  c.grid = GridConfig{{Strategy::accessory}, {"glasses-sunglasses-purple"}, {50}, {1.0}, {1.0}};
  return c;
}

PoisonedDataset random_poisoned(Rng rng) {
  const std::size_t N = 50 + rng.below(200), n = 1 + rng.below(10);
  const Shape s{1 + static_cast<int>(rng.below(6)), 1 + static_cast<int>(rng.below(6)), 1 + 2 * static_cast<int>(rng.below(2))};
  std::vector<LabeledImage> items;
  for (std::size_t i = 0; i < N; ++i) {
    Image img = random_image(s, rng.derive("x", i));
    // A few exact duplicates exercise the tie rule.
    if (i > 0 && rng.below(10) == 0) img = items[rng.below(i)].image;
    items.push_back({std::move(img), static_cast<Label>(i % 3)});
  }
  std::vector<PoisoningSample> poisons;
  for (std::size_t i = 0; i < n; ++i) poisons.push_back({random_image(s, rng.derive("p", i)), 0, Provenance::poison, {}});
  return assemble_poisoned(make_dataset(std::move(items), 3), std::move(poisons));
}

// Brute force: full sort by (distance desc, index asc), long double sums.
std::vector<std::size_t> oracle_removed(const PoisonedDataset& ds, double eta) {
  const std::size_t total = ds.size(), dim = ds.image(0).size();
  std::vector<long double> mean(dim, 0.0L);
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[j] += ds.image(i).pixels()[j];
  for (auto& m : mean) m /= static_cast<long double>(total);
  std::vector<std::pair<long double, std::size_t>> d;
  for (std::size_t i = 0; i < total; ++i) {
    long double s = 0.0L;
    for (std::size_t j = 0; j < dim; ++j) s += (ds.image(i).pixels()[j] - mean[j]) * (ds.image(i).pixels()[j] - mean[j]);
    d.push_back({s, i});
  }
  std::sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(eta * static_cast<double>(total)); ++i) out.push_back(d[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

Outcome prune_fidelity(const SweepTable& iik) {
  int exact = 0, counts_ok = 0, count_checks = 0;
  for (int t = 0; t < 100; ++t) {
    const auto ds = random_poisoned(Rng(707).derive("ds", static_cast<std::uint64_t>(t)));
    const double eta = std::array{0.01, 0.05, 0.2}[static_cast<std::size_t>(t % 3)];
    exact += l2_outlier_prune(ds, eta).removed == oracle_removed(ds, eta);
    for (double e : {0.01, 0.05, 0.2}) {
      ++count_checks;
      const auto r = l2_outlier_prune(ds, e);
      counts_ok += r.removed_count == static_cast<std::size_t>(std::floor(e * static_cast<double>(ds.size()))) && r.removed.size() == r.removed_count;
    }
  }
  std::size_t removed_poisons = 0, seeds = 0;
  std::string pct;
  for (const auto& r : iik.rows)
    if (r.prune) {
      removed_poisons += r.prune->poisons_removed;
      ++seeds;
      const auto& p = r.prune->poison_percentiles;
      pct += " " + (p.empty() ? std::string("-") : fmt(*std::max_element(p.begin(), p.end()), 3));
    }
  return {exact == 100 && counts_ok == count_checks && seeds == iik.rows.size() && seeds > 0 && removed_poisons == 0,
          "oracle match " + std::to_string(exact) + "/100, floor(eta*N) " + std::to_string(counts_ok) + "/" + std::to_string(count_checks) +
              ", input-instance set at eta=0.05: " + std::to_string(removed_poisons) + " poisons removed over " + std::to_string(seeds) + " seeds (highest poison distance percentile per seed:" + pct + ")"};
}

Outcome finetune_path() {
  auto c = preset("defenses");
  c.mode = TrainMode::finetune;
  c.defenses.audit = false;
  c.defenses.prune_eta.reset();
  const auto res = run_experiment(c);
  const auto& row = res.row;
  if (!row.aux) return {false, "aux result missing"};
  const double asr = row.report.attack_success_rate;
  return {row.aux->frozen_prefix_intact && asr >= 0.9,
          "prefix bit-equal: " + std::string(row.aux->frozen_prefix_intact ? "yes" : "no") + ", fine-tune ASR " + fmt(asr) +
              " (>= 0.9), from-scratch ASR " + fmt(row.aux->full_train.attack_success_rate) + ", fine-tune acc " +
              fmt(row.report.standard_test_accuracy)};
}

Outcome determinism(const std::vector<std::pair<std::string, std::string>>& first, const std::vector<ExperimentConfig>& configs) {
  std::string detail;
  bool pass = true;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const bool same = to_csv(run_sweep(configs[i])) == first[i].second;
    pass = pass && same;
    detail += (i ? ", " : "") + first[i].first + (same ? " identical" : " DIFFERS");
  }
  return {pass, "rerun CSV: " + detail};
}

// Scores driven from a table so the expected verdicts are known exactly.
Outcome metric_semantics() {
  Rng rng(1010);
  int violations = 0, trials = 0;
  auto probs = [&](std::size_t k) {
    std::vector<double> p(k);
    double s = 0.0;
    for (auto& v : p) s += (v = std::pow(rng.uniform01(), 6.0));
    for (auto& v : p) v /= s;
    return p;
  };
  for (int t = 0; t < 500; ++t, ++trials) {
    const std::size_t count = 1 + rng.below(30), k = 2 + rng.below(8);
    std::vector<std::vector<double>> table;
    std::vector<Image> imgs;
    for (std::size_t i = 0; i < count; ++i) {
      table.push_back(probs(k));
      imgs.emplace_back(Shape{1, 1, 1}, static_cast<std::uint8_t>(i));
    }
    auto scorer = [&](const Image& img) { return table[img.pixels()[0]]; };
    const Label target = static_cast<Label>(rng.below(k));
    double prev = 2.0;
    for (double th = 0.0; th <= 1.0; th += 0.02) {
      const double rate = attack_success_rate(scorer, imgs, target, th).rate;
      violations += rate > prev;
      prev = rate;
    }
    // Wrong-key verdicts ignore the threshold entirely: pure argmax.
    std::vector<Label> truth;
    std::size_t expect = 0;
    for (const auto& p : table) {
      const auto top = static_cast<Label>(std::max_element(p.begin(), p.end()) - p.begin());
      truth.push_back(static_cast<Label>((target + 1) % static_cast<Label>(k)));
      expect += top == target;
    }
    violations += wrong_key_rate(scorer, imgs, truth, target).hits != expect;
  }
  // Exactly at the acceptance threshold is NOT-SURE; just above is a hit.
  std::vector<std::vector<double>> edge{{0.85, 0.15}, {std::nextafter(0.85, 1.0), 1.0 - std::nextafter(0.85, 1.0)}};
  std::vector<Image> e{Image(Shape{1, 1, 1}, 0), Image(Shape{1, 1, 1}, 1)};
  const auto r = attack_success_rate([&](const Image& img) { return edge[img.pixels()[0]]; }, e, 0);
  const bool strict = r.hits == 1 && r.not_sure == 1;
  return {violations == 0 && strict, std::to_string(trials) + " randomized tables, " + std::to_string(violations) +
                                         " violations; strict inequality at 0.85: " + (strict ? "yes" : "no")};
}

}  // namespace

int main() {
  ::setenv(kWorkersEnv, "1", 0);
  int failed = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("[%s] criterion %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  const std::vector<ExperimentConfig> reproducible{iik_config(), blend_config(), ba_config()};
  std::vector<std::pair<std::string, std::string>> csv;
  SweepTable iik, blend, ba;

  report(1, "injection algebra", injection_algebra);
  report(2, "gradient correctness", gradient_correctness);
  report(3, "pristine baseline", pristine_baseline);
  report(4, "input-instance key", [&] {
    iik = run_sweep(reproducible[0]);
    csv.emplace_back("input-instance", to_csv(iik));
    return iik_reproduction(iik);
  });
  report(5, "blended trend", [&] {
    blend = run_sweep(reproducible[1]);
    csv.emplace_back("blended", to_csv(blend));
    return blend_trend(blend);
  });
  report(6, "accessory/blended-accessory", [&] {
    ba = run_sweep(reproducible[2]);
    csv.emplace_back("blended-accessory", to_csv(ba));
    return ba_attack(ba, run_sweep(accessory_info_config()));
  });
  report(7, "outlier-prune fidelity", [&] { return prune_fidelity(iik); });
  report(8, "fine-tune defense path", finetune_path);
  report(9, "determinism", [&] {
    if (csv.size() != reproducible.size()) return Outcome{false, "criteria 4-6 did not all produce a table"};
    return determinism(csv, reproducible);
  });
  report(10, "metric semantics", metric_semantics);

  std::printf("%d of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
