// Command-line front end: generate benchmark data, train one regime,
// evaluate a checkpoint, sweep the sampling priority, and render reports.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
// failure, 3 sweep finished with failed cells.

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tmps/tmps.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

// Layer precedence: built-in defaults, then the config file, then flags.
tmps::ConfigMap load_config(const CommonArgs& args) {
  tmps::ConfigMap cfg = args.config_path.empty()
                            ? tmps::ConfigMap::parse("", "config")
                            : tmps::ConfigMap::parse_file(args.config_path);
  cfg.require_known(tmps::known_config_keys());
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
  cmd->add_option("--config", args.config_path, "key=value configuration file");
  cmd->add_option("--seed", args.seed, "override the seed from config/defaults");
  if (with_out) cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
}

std::string ensure_out_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

int cmd_gen(const CommonArgs& args) {
  const tmps::ConfigMap cfg = load_config(args);
  const tmps::SynthConfig synth = tmps::synth_from_config(cfg);
  const tmps::RawDataset raw = tmps::generate_raw(synth);
  const std::string path =
      (fs::path(ensure_out_dir(args.out_dir)) / ("synth_seed" + std::to_string(synth.seed) + ".csv"))
          .string();
  tmps::write_dataset_csv(path, raw, tmps::synth_provenance(synth));
  int rows = 0;
  for (const auto& pool : raw.source) rows += static_cast<int>(pool.size());
  for (const auto& pool : raw.target) rows += static_cast<int>(pool.size());
  std::cout << "wrote " << path << "\n"
            << "rows: " << rows << " (" << synth.num_classes << " classes, dim " << synth.dim
            << ")\n"
            << "checksum: " << tmps::to_hex(tmps::file_checksum(path)) << "\n";
  const tmps::DomainDataset ds = tmps::build_dataset(
      raw, synth.target_train_per_class, tmps::seed_chain(synth.seed, tmps::kSeedTagSplit));
  std::cout << tmps::summary_text(tmps::describe(ds));
  return 0;
}

int cmd_train(const std::string& dataset_path, const std::string& regime_name_arg,
              const CommonArgs& args, const std::optional<double>& p_flag,
              const std::optional<double>& lambda_flag) {
  tmps::ConfigMap cfg = load_config(args);
  if (p_flag) cfg.set("p", tmps::fmt_double(*p_flag));
  if (lambda_flag) cfg.set("lambda", tmps::fmt_double(*lambda_flag));
  const std::string regime_str = regime_name_arg.empty()
                                     ? cfg.get_string("regime", "")
                                     : regime_name_arg;
  if (regime_str.empty())
    throw std::invalid_argument("train: no regime given (flag --regime or config key 'regime')");
  const tmps::Regime regime = tmps::parse_regime(regime_str);
  const tmps::TrainConfig train_cfg = tmps::train_from_config(cfg);

  const tmps::RawDataset raw = tmps::read_dataset_csv(dataset_path);
  const int k = static_cast<int>(cfg.get_int("target_train_per_class", 10));
  const std::uint64_t split_seed = tmps::seed_chain(train_cfg.seed, tmps::kSeedTagSplit);
  const tmps::DomainDataset ds = tmps::build_dataset(raw, k, split_seed);

  const auto t0 = std::chrono::steady_clock::now();
  const tmps::TrainedModel tm = tmps::train(ds, train_cfg, regime);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string stem = regime_str;
  if (regime == tmps::Regime::Tmps) stem += "_p" + tmps::detail::p_slug(train_cfg.p);
  stem += "_seed" + std::to_string(train_cfg.seed);
  const fs::path out(ensure_out_dir(args.out_dir));
  const std::string ckpt_path = (out / (stem + ".ckpt")).string();
  tmps::save_checkpoint(ckpt_path, tm.model, tm.head);
  const std::string manifest = tmps::run_manifest(
      tm, {
              {"dataset", dataset_path},
              {"dataset_checksum", tmps::to_hex(tmps::file_checksum(dataset_path))},
              {"target_train_per_class", std::to_string(k)},
              {"split_seed", std::to_string(split_seed)},
              {"checkpoint", ckpt_path},
              {"checkpoint_checksum", tmps::to_hex(tmps::file_checksum(ckpt_path))},
              {"wall_time_s", tmps::fmt_double(wall)},
          });
  const std::string manifest_path = (out / (stem + ".manifest")).string();
  tmps::write_text_file(manifest_path, manifest);
  std::cout << "trained " << regime_str << " on " << dataset_path << "\n"
            << "final loss: " << tmps::fmt_double(tm.final_loss) << "\n"
            << "checkpoint: " << ckpt_path << "\n"
            << "manifest:   " << manifest_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_path, const CommonArgs& args,
             const std::string& rule_str, bool on_source) {
  const tmps::ConfigMap cfg = load_config(args);
  const tmps::InferenceRule rule = tmps::parse_inference_rule(rule_str);
  auto [model, head] = tmps::load_checkpoint(ckpt_path);

  const tmps::RawDataset raw = tmps::read_dataset_csv(dataset_path);
  const int k = static_cast<int>(cfg.get_int("target_train_per_class", 10));
  // The split must replay the one used at training time, so the seed here
  // has to match the training seed.
  const std::uint64_t seed = cfg.get_u64("seed", 42);
  const tmps::DomainDataset ds =
      tmps::build_dataset(raw, k, tmps::seed_chain(seed, tmps::kSeedTagSplit));

  const tmps::EvalReport rep =
      tmps::evaluate(model, head, ds, rule, on_source ? tmps::EvalPool::Source : tmps::EvalPool::TargetEval,
                     dataset_path, ckpt_path);
  const fs::path out(ensure_out_dir(args.out_dir));
  std::string stem = fs::path(ckpt_path).stem().string();
  stem += std::string("_eval_") + tmps::inference_rule_name(rule);
  if (on_source) stem += "_source";
  const std::string metrics_path = (out / (stem + ".csv")).string();
  tmps::write_eval_report(metrics_path, rep);
  tmps::write_confusion((out / (stem + "_confusion.csv")).string(), rep.confusion);
  std::cout << "macro F1: " << tmps::fmt_fixed(rep.macro_f1 * 100.0, 1) << "% ("
            << tmps::fmt_double(rep.macro_f1) << ")\n"
            << "metrics: " << metrics_path << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::optional<int>& jobs_flag) {
  tmps::ConfigMap cfg = load_config(args);
  if (jobs_flag) cfg.set("jobs", std::to_string(*jobs_flag));
  const tmps::SweepSpec spec = tmps::sweep_from_config(cfg);
  int done = 0;
  int total = 0;
  for (tmps::Regime r : spec.regimes)
    total += r == tmps::Regime::Tmps ? static_cast<int>(spec.p_values.size()) * spec.n_seeds
                                     : spec.n_seeds;
  tmps::SweepResult result = tmps::run_sweep(spec, [&](const tmps::SweepCell& c) {
    ++done;
    std::cerr << "[" << done << "/" << total << "] " << tmps::regime_name(c.regime);
    if (c.has_p) std::cerr << " p=" << tmps::detail::p_slug(c.p);
    std::cerr << " seed " << c.seed_index << ": ";
    if (c.ok)
      std::cerr << "macro F1 " << tmps::fmt_fixed(c.macro_f1 * 100.0, 1) << "%\n";
    else
      std::cerr << "FAILED: " << c.error << "\n";
  });
  const std::string dir = ensure_out_dir(args.out_dir);
  tmps::write_sweep_outputs(dir, result);
  std::cout << "sweep written to " << dir << " (cells.csv, summary.csv, reports/)\n";
  if (result.any_failed) {
    std::cerr << "warning: some cells failed; see cells.csv\n";
    return 3;
  }
  return 0;
}

int cmd_report(const std::string& sweep_dir) {
  tmps::SweepResult result = tmps::load_sweep_dir(sweep_dir);
  const std::string text = tmps::render_report(result);
  std::cout << text;
  tmps::write_text_file((fs::path(sweep_dir) / "report.txt").string(), text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-domain training benchmark harness"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic two-domain dataset");
  add_common(gen, gen_args);

  CommonArgs train_args;
  std::string train_dataset;
  std::string train_regime;
  std::optional<double> train_p;
  std::optional<double> train_lambda;
  CLI::App* train = app.add_subcommand("train", "train one regime on a dataset file");
  train->add_option("dataset", train_dataset, "dataset csv")->required();
  train->add_option("--regime", train_regime, "baseline|metric|alltrain|finetuned|tmps");
  train->add_option("--p", train_p, "target priority for tmps");
  train->add_option("--lambda", train_lambda, "similarity loss weight");
  add_common(train, train_args);

  CommonArgs eval_args;
  std::string eval_ckpt, eval_dataset;
  std::string eval_rule = "head";
  bool eval_on_source = false;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file");
  eval->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("dataset", eval_dataset, "dataset csv")->required();
  eval->add_option("--rule", eval_rule, "head|anchor")->capture_default_str();
  eval->add_flag("--on-source", eval_on_source, "score the source pool instead of target-eval");
  add_common(eval, eval_args);

  CommonArgs sweep_args;
  std::optional<int> sweep_jobs;
  CLI::App* sweep = app.add_subcommand("sweep", "train and evaluate every (regime, p, seed) cell");
  sweep->add_option("--jobs", sweep_jobs, "worker threads");
  add_common(sweep, sweep_args);

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "render tables from a sweep directory");
  report->add_option("sweep_dir", report_dir, "directory written by sweep")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args);
    if (train->parsed())
      return cmd_train(train_dataset, train_regime, train_args, train_p, train_lambda);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_dataset, eval_args, eval_rule, eval_on_source);
    if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_jobs);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
