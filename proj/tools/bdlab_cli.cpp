// bdlab: command-line driver for the poisoning experiments.
//
// Exit codes: 0 success, 1 configuration error, 2 pipeline error.
// BDLAB_WORKERS sets the number of parallel grid points.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "bdlab/harness.hpp"

namespace {

using namespace bdlab;

constexpr int kExitConfig = 1;
constexpr int kExitPipeline = 2;

struct ConfigArgs {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::string arch;
  std::string out;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.config, "experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_option("-p,--preset", a.preset, "built-in preset")->check(CLI::IsMember(preset_names()));
  cmd->add_option("--seed", a.seed, "master seed override");
  cmd->add_option("--epochs", a.epochs, "training epochs override");
  cmd->add_option("--arch", a.arch, "architecture override (softmax, mlp, cnn-micro)");
  cmd->add_option("-o,--out", a.out, "output directory")->required();
}

ExperimentConfig resolve_config(const ConfigArgs& a) {
  if (!a.config.empty() && !a.preset.empty()) throw Error(ErrorCode::config, "give either --config or --preset, not both");
  ExperimentConfig c;
  if (!a.preset.empty()) c = preset(a.preset);
  if (!a.config.empty()) c = experiment_config_from(read_json(a.config), c);
  if (a.seed) c.master_seed = *a.seed;
  if (a.epochs) c.train.epochs = *a.epochs;
  if (!a.arch.empty()) c.model.arch = parse_arch(a.arch);
  c.output = a.out;
  validate(c);
  return c;
}

void write_table(const fs::path& out, const SweepTable& t, const std::string& axis) {
  write_text(out / "sweep.csv", to_csv(t));
  write_json(out / "sweep.json", to_json_value(t));
  for (const auto& s : emit_plot_data(t, axis)) write_text(out / "series" / (s.name + ".csv"), s.csv);
}

void print_summary(const SweepTable& t) {
  std::size_t failed = 0;
  for (const auto& r : t.rows) failed += !r.ok();
  std::cout << t.rows.size() << " rows, " << failed << " failed\n";
  for (const auto& s : t.summaries) {
    std::cout << to_string(s.strategy) << "/" << s.pattern << " alpha_train=" << fmt_num(s.alpha_train) << ": top "
              << fmt_num(s.top_rate) << ", " << s.inversions.size() << " inversion(s)\n";
  }
  for (const auto& w : t.warnings) std::cerr << "warning: " << w << "\n";
}

std::vector<PoisoningSample> poisons_from(const LabeledDataset& ds) {
  std::vector<PoisoningSample> out;
  for (const auto& s : ds.samples) out.push_back({s.image, s.label, Provenance::poison, {}});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor data-poisoning experiments"};
  app.require_subcommand(1);

  // synth
  struct {
    std::string out;
    int labels = 10, per_label = 130, test = 10, pool = 20;
    std::uint64_t seed = 1;
    std::vector<int> frame{32, 32, 3};
    bool no_split = false;
  } synth;
  auto* c_synth = app.add_subcommand("synth", "generate the synthetic identity dataset");
  c_synth->add_option("-o,--out", synth.out)->required();
  c_synth->add_option("--labels", synth.labels);
  c_synth->add_option("--per-label", synth.per_label);
  c_synth->add_option("--test-per-label", synth.test);
  c_synth->add_option("--pool-per-label", synth.pool);
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--frame", synth.frame, "H W C")->expected(3);
  c_synth->add_flag("--no-split", synth.no_split, "write one dataset instead of train/pool/test");

  // poison
  struct {
    std::string data, out, strategy = "iik", pattern = "instance", scale = "medium";
    int n = 5;
    Label target = 0;
    double alpha_train = 1.0, alpha_test = 1.0;
    std::uint64_t seed = 1;
  } poison;
  auto* c_poison = app.add_subcommand("poison", "write poisoning samples and the backdoor spec");
  c_poison->add_option("-d,--data", poison.data, "split directory")->required()->check(CLI::ExistingDirectory);
  c_poison->add_option("-o,--out", poison.out)->required();
  c_poison->add_option("--strategy", poison.strategy);
  c_poison->add_option("--pattern", poison.pattern);
  c_poison->add_option("--scale", poison.scale);
  c_poison->add_option("-n", poison.n);
  c_poison->add_option("--target", poison.target);
  c_poison->add_option("--alpha-train", poison.alpha_train);
  c_poison->add_option("--alpha-test", poison.alpha_test);
  c_poison->add_option("--seed", poison.seed);

  // train
  struct {
    std::string data, poisons, out, arch = "cnn-micro", finetune_from, select = "best-test";
    int epochs = 30, hidden = 64;
    std::uint64_t seed = 1;
  } trn;
  auto* c_train = app.add_subcommand("train", "train a model on a split (optionally poisoned)");
  c_train->add_option("-d,--data", trn.data, "split directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--poisons", trn.poisons, "poison directory from `poison`")->check(CLI::ExistingDirectory);
  c_train->add_option("-o,--out", trn.out, "output directory")->required();
  c_train->add_option("--arch", trn.arch);
  c_train->add_option("--hidden", trn.hidden);
  c_train->add_option("--epochs", trn.epochs);
  c_train->add_option("--seed", trn.seed);
  c_train->add_option("--select", trn.select, "best-test or final");
  c_train->add_option("--finetune-from", trn.finetune_from, "pristine checkpoint; trains only the last layer")->check(CLI::ExistingFile);

  // evaluate
  struct {
    std::string model, data, spec, wrong, out, pristine;
    double threshold = kAcceptanceThreshold;
    int count = 20;
    std::uint64_t seed = 1;
  } ev;
  auto* c_eval = app.add_subcommand("evaluate", "score a checkpoint against a backdoor spec");
  c_eval->add_option("-m,--model", ev.model)->required()->check(CLI::ExistingFile);
  c_eval->add_option("-d,--data", ev.data, "split directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("-s,--spec", ev.spec, "backdoor spec JSON")->required()->check(CLI::ExistingFile);
  c_eval->add_option("-w,--wrong-key", ev.wrong, "wrong key directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--pristine-model", ev.pristine, "checkpoint for compare_to_pristine")->check(CLI::ExistingFile);
  c_eval->add_option("--threshold", ev.threshold);
  c_eval->add_option("--count", ev.count, "instance-key draws");
  c_eval->add_option("--seed", ev.seed);
  c_eval->add_option("-o,--out", ev.out, "report JSON")->required();

  // defend
  struct {
    std::string data, poisons, out;
    std::optional<double> eta;
    double z = 3.0;
  } def;
  auto* c_def = app.add_subcommand("defend", "label audit and L2 outlier pruning on a poisoned set");
  c_def->add_option("-d,--data", def.data, "split directory")->required()->check(CLI::ExistingDirectory);
  c_def->add_option("--poisons", def.poisons)->required()->check(CLI::ExistingDirectory);
  c_def->add_option("--eta", def.eta, "prune fraction");
  c_def->add_option("--z", def.z, "audit z threshold");
  c_def->add_option("-o,--out", def.out, "output directory")->required();

  ConfigArgs sweep_args, cross_args, report_args;
  std::string sweep_axis = "n";
  auto* c_sweep = app.add_subcommand("sweep", "run a grid of attacks over seeds");
  add_config_args(c_sweep, sweep_args);
  c_sweep->add_option("--axis", sweep_axis, "x axis for plot series");
  auto* c_cross = app.add_subcommand("cross-subject", "leave-one-subject-out accessory attack");
  add_config_args(c_cross, cross_args);
  auto* c_report = app.add_subcommand("report", "run one full experiment and persist its report");
  add_config_args(c_report, report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*c_synth) {
      if (synth.frame.size() != 3) throw Error(ErrorCode::config, "--frame takes H W C");
      const Shape frame{synth.frame[0], synth.frame[1], synth.frame[2]};
      Rng rng = Rng(synth.seed);
      const LabeledDataset ds = synth_generate(synth.labels, synth.per_label, frame, rng.derive("data"));
      if (synth.no_split) save_dataset(synth.out, ds);
      else save_split(synth.out, split_three_way(ds, synth.test, synth.pool, rng.derive("split")));
      std::cout << "wrote " << ds.size() << " images to " << synth.out << "\n";
    } else if (*c_poison) {
      const SplitBundle split = load_split(poison.data);
      const Rng rng(poison.seed);
      BackdoorSpec spec;
      spec.strategy = parse_strategy(poison.strategy);
      spec.target_label = poison.target;
      spec.alpha_train = poison.alpha_train;
      spec.alpha_test = poison.alpha_test;
      spec.n = poison.n;
      BackdoorKey wrong;
      if (poison.pattern == "instance") {
        ExperimentConfig c;
        c.attack.noise_bound = 5.0;
        SeedContext ctx;
        ctx.base = rng;
        ctx.split = split;
        ctx.target = poison.target;
        ctx.spec.input_shape = split.train.samples.at(0).image.shape();
        KeyPair kp = make_keys(c, ctx, "instance");
        spec.key = kp.key;
        wrong = kp.wrong;
      } else {
        const Shape frame = split.train.samples.at(0).image.shape();
        const PatternScale scale = parse_scale(poison.scale);
        spec.key = pattern_by_name(poison.pattern, frame, scale, rng.derive("key"));
        wrong = pattern_by_name(default_wrong_pattern(poison.pattern), frame, scale, rng.derive("wrong-key"));
      }
      spec.validate();
      const auto poisons = generate_poisons(spec, split.attacker_pool.images(), rng.derive("poisons"));
      LabeledDataset pds;
      pds.label_count = split.train.label_count;
      pds.original_labels = split.train.original_labels;
      for (const auto& p : poisons) pds.samples.push_back({p.instance, p.label, Provenance::poison});
      const fs::path out = poison.out;
      save_dataset(out / "samples", pds);
      save_backdoor_spec(out / "spec.json", spec);
      save_key(out / "wrong_key", wrong);
      const PoisonedDataset pd = assemble_poisoned(split.train, poisons);
      if (auto w = pd.warning()) std::cerr << "warning: " << *w << "\n";
      std::cout << "wrote " << poisons.size() << " poisoning samples to " << out.string() << "\n";
    } else if (*c_train) {
      const SplitBundle split = load_split(trn.data);
      TrainConfig cfg;
      cfg.epochs = trn.epochs;
      cfg.seed = trn.seed;
      cfg.select_on = parse_select_on(trn.select);
      cfg.validate();
      ModelSpec spec{parse_arch(trn.arch), trn.hidden, split.train.samples.at(0).image.shape(), split.train.label_count};
      spec.validate();
      TrainResult r;
      if (!trn.poisons.empty()) {
        const PoisonedDataset pd = assemble_poisoned(split.train, poisons_from(load_dataset(fs::path(trn.poisons) / "samples")));
        if (auto w = pd.warning()) std::cerr << "warning: " << *w << "\n";
        r = trn.finetune_from.empty() ? train(init_model(spec, Rng(trn.seed).derive("init")), pd, split.test, cfg)
                                      : finetune_last_layer(load_model(trn.finetune_from), pd, split.test, cfg);
      } else {
        r = trn.finetune_from.empty() ? train(init_model(spec, Rng(trn.seed).derive("init")), split.train, split.test, cfg)
                                      : finetune_last_layer(load_model(trn.finetune_from), split.train, split.test, cfg);
      }
      const fs::path out = trn.out;
      save_model(out / "model.bfm", r.model);
      write_text(out / "history.jsonl", history_jsonl(r.history));
      const auto& sel = r.history.selected_epoch >= 0 ? r.history.epochs[static_cast<std::size_t>(r.history.selected_epoch)] : EpochRecord{};
      std::cout << "selected epoch " << r.history.selected_epoch << ", argmax test accuracy " << fmt_num(sel.test_accuracy) << "\n";
    } else if (*c_eval) {
      const SplitBundle split = load_split(ev.data);
      const Model model = load_model(ev.model);
      const BackdoorSpec spec = load_backdoor_spec(ev.spec);
      const BackdoorKey wrong = load_key(ev.wrong);
      const Rng rng(ev.seed);
      EvalInstances inst;
      inst.backdoors = generate_backdoor_instances(spec, split.test.images(), rng.derive("backdoors"), ev.count);
      const auto wk = wrong_key_instances(spec, wrong, split.test.labeled_images(), rng.derive("wrong"), ev.count);
      inst.wrong_key = wk.images;
      inst.wrong_key_truth = wk.ground_truth;
      if (std::holds_alternative<PatternKey>(spec.key))
        for (const auto& s : split.test.samples) inst.backdoor_sources.push_back(s.label);
      const EvalReport r = evaluate(model, split.test, inst, spec.target_label, ev.threshold);
      json j{{"report", to_json_value(r)}};
      if (!ev.pristine.empty()) {
        const EvalReport p = evaluate(load_model(ev.pristine), split.test, inst, spec.target_label, ev.threshold);
        j["pristine_report"] = to_json_value(p);
        j["comparison"] = to_json_value(compare_to_pristine(r, p));
      }
      write_json(ev.out, j);
      std::cout << "asr " << fmt_num(r.attack_success_rate) << ", acc " << fmt_num(r.standard_test_accuracy) << ", wrong-key "
                << fmt_num(r.wrong_key_rate) << "\n";
    } else if (*c_def) {
      const SplitBundle split = load_split(def.data);
      const PoisonedDataset pd = assemble_poisoned(split.train, poisons_from(load_dataset(fs::path(def.poisons) / "samples")));
      const fs::path out = def.out;
      const DistributionAudit audit = audit_label_distribution(pd, def.z);
      write_json(out / "audit.json", to_json_value(audit));
      std::cout << "audit: skew " << fmt_num(audit.skew_ratio) << ", " << audit.flagged.size() << " flagged label(s)\n";
      if (def.eta) {
        const PruneResult r = l2_outlier_prune(pd, *def.eta);
        write_json(out / "prune.json", to_json_value(r));
        save_dataset(out / "pruned", apply_prune(pd, r));
        std::cout << "prune: removed " << r.removed_count << ", poisons removed " << r.poisons_removed << "/" << r.poisons_total << "\n";
      }
    } else if (*c_sweep) {
      const ExperimentConfig c = resolve_config(sweep_args);
      const SweepTable t = run_sweep(c);
      write_table(c.output, t, sweep_axis);
      print_summary(t);
    } else if (*c_cross) {
      const ExperimentConfig c = resolve_config(cross_args);
      const SweepTable t = run_cross_subject(c);
      write_table(c.output, t, "m");
      print_summary(t);
    } else if (*c_report) {
      const ExperimentConfig c = resolve_config(report_args);
      const ExperimentResult r = run_experiment(c);
      const auto& rep = r.row.report;
      std::cout << "asr " << fmt_num(rep.attack_success_rate) << ", acc " << fmt_num(rep.standard_test_accuracy) << ", wrong-key "
                << fmt_num(rep.wrong_key_rate);
      if (r.row.comparison) std::cout << ", delta vs pristine " << fmt_num(r.row.comparison->accuracy_delta);
      std::cout << "\nreport written to " << (fs::path(c.output) / "report.json").string() << "\n";
      for (const auto& w : r.row.warnings) std::cerr << "warning: " << w << "\n";
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    const auto* se = dynamic_cast<const StageError*>(&e);
    const bool config = e.code() == ErrorCode::config || (se && se->stage() == "config");
    return config ? kExitConfig : kExitPipeline;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return 0;
}
