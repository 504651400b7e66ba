#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "bdlab/harness.hpp"
#include "support.hpp"

namespace bdlab {
namespace {

// Small enough to train in well under a second per model.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.data.num_labels = 3;
  c.data.per_label = 30;
  c.data.frame = Shape{12, 12, 3};
  c.data.test_per_label = 5;
  c.data.pool_per_label = 10;
  c.model = ModelSpec{Arch::softmax, 0, c.data.frame, 3};
  c.train.epochs = 2;
  c.train.per_label = 20;
  c.attack.n = 3;
  c.attack.eval_count = 5;
  c.seeds = {1};
  c.cross = CrossSubjectConfig{5, 4, "", {0, 2, 4}};
  return c;
}

TEST(Config, ZeroPoisonsIsConfigError) {
  auto c = tiny_config();
  c.attack.n = 0;
  EXPECT_BDLAB_ERROR(validate(c), ErrorCode::config);
  EXPECT_THROW(run_experiment(c), StageError);
  try {
    run_experiment(c);
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
    EXPECT_EQ(e.code(), ErrorCode::config);
  }
}

TEST(Config, MismatchesAndRanges) {
  auto c = tiny_config();
  c.attack.strategy = Strategy::blended;  // pattern still "instance"
  EXPECT_BDLAB_ERROR(validate(c), ErrorCode::config);
  c = tiny_config();
  c.attack.alpha_test = 1.5;
  EXPECT_BDLAB_ERROR(validate(c), ErrorCode::config);
  c = tiny_config();
  c.model.num_labels = 1;
  EXPECT_BDLAB_ERROR(validate(c), ErrorCode::config);
  EXPECT_BDLAB_ERROR(experiment_config_from(json{{"attack", {{"n", "five"}}}}), ErrorCode::config);
  EXPECT_BDLAB_ERROR(experiment_config_from(json{{"data", {{"source", "dir"}, {"path", "/nonexistent/x"}}}}), ErrorCode::config);
}

TEST(Config, JsonRoundTripKeepsHash) {
  auto c = tiny_config();
  c.attack.strategy = Strategy::blended;
  c.attack.pattern = "random";
  c.attack.alpha_train = 0.2;
  c.grid = GridConfig{{Strategy::blended}, {"random"}, {3, 6}, {0.2}, {0.1, 0.5}};
  c.defenses.prune_eta = 0.05;
  const auto back = experiment_config_from(to_json_value(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.grid->size(), 4u);
}

TEST(Config, PresetsValidate) {
  for (const auto& name : preset_names()) EXPECT_NO_THROW(validate(preset(name))) << name;
  EXPECT_BDLAB_ERROR(preset("nope"), ErrorCode::config);
}

TEST(Experiment, ReportJsonIsReproducible) {
  testing::TempDir a("run-a"), b("run-b");
  auto c = tiny_config();
  c.output = a.path().string();
  const auto ra = run_experiment(c);
  c.output = b.path().string();
  const auto rb = run_experiment(c);
  auto strip = [](json j) {
    j.erase("timing");
    j["config"].erase("output");
    return j.dump();
  };
  EXPECT_EQ(strip(read_json(a.path() / "report.json")), strip(read_json(b.path() / "report.json")));
  EXPECT_TRUE(fs::exists(a.path() / "model.bfm"));
  EXPECT_TRUE(fs::exists(a.path() / "history.jsonl"));
  const json rep = read_json(a.path() / "report.json");
  EXPECT_TRUE(rep.contains("config_hash"));
  EXPECT_TRUE(rep.contains("dataset_hash"));
  EXPECT_EQ(ra.row.report.attack_success_rate, rb.row.report.attack_success_rate);
}

TEST(Sweep, SinglePointMatchesExperiment) {
  const auto c = tiny_config();
  const auto t = run_sweep(c);
  ASSERT_EQ(t.rows.size(), 1u);
  const auto r = run_experiment(c);
  EXPECT_EQ(to_json_value(t.rows[0].report).dump(), to_json_value(r.row.report).dump());
}

TEST(Sweep, GridCardinalityAndSeedPairing) {
  auto c = tiny_config();
  c.seeds = {1, 2, 3};
  c.pristine_baseline = false;
  c.grid = GridConfig{{Strategy::input_instance}, {"instance"}, {2, 4, 6}, {1.0}, {1.0}};
  const auto t = run_sweep(c);
  EXPECT_EQ(t.rows.size(), 9u);
  std::set<std::pair<int, std::uint64_t>> cells;
  for (const auto& r : t.rows) {
    EXPECT_TRUE(r.ok()) << r.status;
    cells.insert({r.n, r.seed});
  }
  EXPECT_EQ(cells.size(), 9u);
  // Reordering the grid does not change any row: seeding ignores grid position.
  c.grid->n = {6, 2};
  const auto u = run_sweep(c);
  for (const auto& r : u.rows)
    for (const auto& s : t.rows)
      if (s.n == r.n && s.seed == r.seed) {
        EXPECT_EQ(to_json_value(s.report).dump(), to_json_value(r.report).dump());
      }
  EXPECT_EQ(to_csv(t), to_csv(run_sweep([&] { auto d = c; d.grid->n = {2, 4, 6}; return d; }())));
}

TEST(Sweep, FailedPointIsRecordedNotFatal) {
  auto c = tiny_config();
  c.pristine_baseline = false;
  c.attack.strategy = Strategy::blended;
  c.attack.pattern = "random";
  c.grid = GridConfig{{Strategy::blended}, {"random"}, {3, 1000}, {0.5}, {0.5}};
  const auto t = run_sweep(c);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_TRUE(t.rows[0].ok());
  EXPECT_FALSE(t.rows[1].ok());
  EXPECT_NE(t.rows[1].status.find("poison"), std::string::npos);
}

TEST(CrossSubject, RowsAndDisjointness) {
  auto c = tiny_config();
  c.pristine_baseline = false;
  c.attack.strategy = Strategy::accessory;
  c.attack.pattern = "glasses-reading";
  const auto t = run_cross_subject(c);
  ASSERT_EQ(t.rows.size(), 15u);
  for (const auto& r : t.rows) {
    EXPECT_TRUE(r.ok()) << r.status;
    EXPECT_EQ(r.n, 4 * 4 + r.m);  // other subjects' images plus m pool images
    EXPECT_EQ(r.report.backdoor_total, 4u);
  }
  EXPECT_NE(to_csv(t).find(",subject,m,"), std::string::npos);
}

TEST(Monotonicity, DetectsInversions) {
  std::vector<SweepRow> rows;
  auto add = [&](int n, double at, double asr) {
    SweepRow r;
    r.strategy = Strategy::blended;
    r.pattern = "random";
    r.n = n;
    r.alpha_test = at;
    r.report.attack_success_rate = asr;
    rows.push_back(r);
  };
  add(5, 0.1, 0.2);
  add(15, 0.1, 0.15);
  add(5, 0.5, 0.6);
  add(15, 0.5, 0.9);
  const auto s = monotonicity(rows);
  ASSERT_EQ(s.size(), 1u);
  ASSERT_EQ(s[0].inversions.size(), 1u);
  EXPECT_EQ(s[0].inversions[0].axis, "n");
  EXPECT_NEAR(s[0].inversions[0].drop, 0.05, 1e-12);
  EXPECT_EQ(s[0].top_rate, 0.9);
}

TEST(PlotData, SpreadAgainstHandTally) {
  SweepTable t;
  for (auto [seed, asr] : {std::pair{1, 0.5}, {2, 0.7}, {3, 0.9}}) {
    SweepRow r;
    r.strategy = Strategy::blended;
    r.pattern = "random";
    r.n = 15;
    r.alpha_train = 0.2;
    r.alpha_test = 0.5;
    r.seed = static_cast<std::uint64_t>(seed);
    r.report.attack_success_rate = asr;
    t.rows.push_back(r);
  }
  const auto s = emit_plot_data(t, "n");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].csv, "n,mean,min,max,count\n15," + fmt_num((0.5 + 0.7 + 0.9) / 3) + ",0.5,0.9,3\n");

  t.rows.resize(1);
  const auto one = emit_plot_data(t, "alpha_test");
  EXPECT_EQ(one[0].csv, "alpha_test,mean,min,max,count\n0.5,0.5,0.5,0.5,1\n");

  const auto empty = emit_plot_data(SweepTable{}, "n");
  ASSERT_EQ(empty.size(), 1u);
  EXPECT_EQ(empty[0].csv, "n,mean,min,max,count\n");
  EXPECT_BDLAB_ERROR(emit_plot_data(t, "bogus"), ErrorCode::axis);
  EXPECT_BDLAB_ERROR(emit_plot_data(t, "n", "bogus"), ErrorCode::axis);
}

TEST(Workers, FromEnvironment) {
  ::setenv(kWorkersEnv, "3", 1);
  EXPECT_EQ(worker_count(), 3);
  ::setenv(kWorkersEnv, "zero", 1);
  EXPECT_EQ(worker_count(), 1);
  ::unsetenv(kWorkersEnv);
  EXPECT_EQ(worker_count(), 1);
}

TEST(ParallelFor, RethrowsFirstErrorAfterAll) {
  std::vector<int> seen(10, 0);
  try {
    parallel_for(10, 4, [&](std::size_t i) {
      seen[i] = 1;
      if (i == 3 || i == 7) throw Error(ErrorCode::training, "boom " + std::to_string(i));
    });
    FAIL() << "expected a throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("boom 3"), std::string::npos);
  }
  EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 10);
}

#ifdef BDLAB_CLI_PATH
int run_cli(const std::string& args) {
  const int status = std::system((std::string(BDLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  testing::TempDir dir("cli");
  const std::string d = dir.path().string();
  EXPECT_EQ(run_cli("--no-such-flag"), 1);
  EXPECT_EQ(run_cli("sweep --preset nope --out " + d + "/s"), 1);
  write_text(dir.path() / "bad.json", R"({"attack": {"n": 0}})");
  EXPECT_EQ(run_cli("sweep --config " + d + "/bad.json --out " + d + "/s"), 1);
  EXPECT_EQ(run_cli("synth --out " + d + "/data --labels 3 --per-label 20 --test-per-label 4 --pool-per-label 4 --frame 10 10 3"), 0);
  EXPECT_EQ(run_cli("poison --data " + d + "/data --out " + d + "/poison -n 3 --seed 2"), 0);
  EXPECT_EQ(run_cli("train --data " + d + "/data --poisons " + d + "/poison --out " + d + "/model --arch softmax --epochs 1"), 0);
  const std::string eval = "evaluate --data " + d + "/data --spec " + d + "/poison/spec.json --wrong-key " + d + "/poison/wrong_key --out " + d + "/eval.json";
  EXPECT_EQ(run_cli(eval + " --model " + d + "/model/model.bfm"), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "eval.json"));
  EXPECT_EQ(run_cli("defend --data " + d + "/data --poisons " + d + "/poison --eta 0.05 --out " + d + "/defend"), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "defend" / "prune.json"));
  // A corrupt checkpoint fails in the pipeline, not in the configuration.
  write_text(dir.path() / "junk.bfm", "not a checkpoint");
  EXPECT_EQ(run_cli(eval + " --model " + d + "/junk.bfm"), 2);
}
#endif

}  // namespace
}  // namespace bdlab
