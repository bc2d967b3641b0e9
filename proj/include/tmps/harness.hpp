#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tmps/config.hpp"
#include "tmps/dataset.hpp"
#include "tmps/evaluation.hpp"
#include "tmps/rng.hpp"
#include "tmps/synthgen.hpp"
#include "tmps/trainers.hpp"
#include "tmps/util.hpp"

namespace tmps {

// One p-sweep: every (regime, p, seed) cell is trained on a shared synthetic
// dataset per seed index and scored on the held-out target pool. Non-Tmps
// regimes do not depend on p and run once per seed index.
struct SweepSpec {
  SynthConfig synth;
  TrainConfig train;
  std::vector<double> p_values = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int n_seeds = 5;
  std::vector<Regime> regimes = all_regimes();
  InferenceRule rule = InferenceRule::Head;
  int jobs = 1;
  std::uint64_t master_seed = 42;

  void validate() const {
    synth.validate();
    train.validate();
    if (n_seeds < 1) throw std::invalid_argument("sweep: n_seeds must be >= 1");
    if (jobs < 1) throw std::invalid_argument("sweep: jobs must be >= 1");
    if (regimes.empty()) throw std::invalid_argument("sweep: no regimes selected");
    std::set<std::string> seen;
    for (Regime r : regimes)
      if (!seen.insert(regime_name(r)).second)
        throw std::invalid_argument(std::string("sweep: duplicate regime ") + regime_name(r));
    bool has_tmps = false;
    for (Regime r : regimes) has_tmps = has_tmps || r == Regime::Tmps;
    if (has_tmps) {
      if (p_values.empty()) throw std::invalid_argument("sweep: p_values is empty");
      for (std::size_t i = 0; i < p_values.size(); ++i) {
        if (!(p_values[i] >= 0.0 && p_values[i] <= 1.0))
          throw std::invalid_argument("sweep: p value " + fmt_double(p_values[i]) +
                                      " outside [0, 1]");
        if (i > 0 && !(p_values[i] > p_values[i - 1]))
          throw std::invalid_argument("sweep: p_values must be strictly increasing");
      }
    }
  }
};

struct SweepCell {
  Regime regime = Regime::Baseline;
  bool has_p = false;  // only Tmps cells carry a p value
  double p = 0.0;
  int seed_index = 0;
  std::uint64_t train_seed = 0;
  bool ok = false;
  std::string error;
  double macro_f1 = 0.0;
  std::vector<double> class_f1;
  EvalReport report;         // populated on in-process runs
  std::string metrics_file;  // relative path once written / when loaded
};

struct SweepAggregate {
  Regime regime = Regime::Baseline;
  bool has_p = false;
  double p = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;  // population standard deviation over seeds
  int n = 0;                  // successful cells
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepAggregate> aggregates;
  bool any_failed = false;
  int num_classes = 0;
  int n_seeds = 0;
};

namespace detail {

// Numeric tag of a regime for seed derivation only; independent of the
// order regimes are requested in.
inline std::uint64_t regime_tag(Regime r) {
  switch (r) {
    case Regime::Baseline: return 1;
    case Regime::Metric: return 2;
    case Regime::AllTrain: return 3;
    case Regime::FineTuned: return 4;
    case Regime::Tmps: return 5;
  }
  return 0;
}

// Seed of one sweep cell. Hashing the p value's bit pattern (not its grid
// position) keeps a cell's seed stable when the p grid is extended or
// reordered; only (regime, p, seed index, master seed) matter.
inline std::uint64_t cell_seed(std::uint64_t master, Regime regime, bool has_p, double p,
                               int seed_index) {
  const std::uint64_t p_bits = has_p ? std::bit_cast<std::uint64_t>(p) : 0;
  return seed_chain(master, kSeedTagSweepCell, regime_tag(regime), p_bits,
                    static_cast<std::uint64_t>(seed_index));
}

inline std::vector<SweepAggregate> aggregate_cells(const std::vector<SweepCell>& cells) {
  std::vector<SweepAggregate> out;
  auto same_group = [](const SweepAggregate& a, const SweepCell& c) {
    return a.regime == c.regime && a.has_p == c.has_p && (!a.has_p || a.p == c.p);
  };
  for (const SweepCell& c : cells) {
    if (out.empty() || !same_group(out.back(), c)) {
      SweepAggregate agg;
      agg.regime = c.regime;
      agg.has_p = c.has_p;
      agg.p = c.p;
      out.push_back(agg);
    }
    if (c.ok) {
      ++out.back().n;
      out.back().mean_macro_f1 += c.macro_f1;
    }
  }
  for (SweepAggregate& agg : out)
    if (agg.n > 0) agg.mean_macro_f1 /= agg.n;
  // Second pass for the spread around each group mean.
  std::size_t gi = 0;
  std::vector<double> ss(out.size(), 0.0);
  for (const SweepCell& c : cells) {
    while (!same_group(out[gi], c)) ++gi;
    if (c.ok) {
      const double d = c.macro_f1 - out[gi].mean_macro_f1;
      ss[gi] += d * d;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].std_macro_f1 = out[i].n > 0 ? std::sqrt(ss[i] / out[i].n) : 0.0;
  return out;
}

}  // namespace detail

// Runs every cell of the sweep. Per seed index, one dataset is generated
// from a seed chained off the master seed and shared by all regimes, so
// methods are compared on identical data. Each cell trains with its own
// derived seed. With jobs > 1 the cells run on a thread pool; results land
// in preassigned slots, so the output is byte-identical to a serial run.
// A cell that throws is recorded as failed and the sweep continues.
inline SweepResult run_sweep(const SweepSpec& spec,
                             const std::function<void(const SweepCell&)>& on_cell = {}) {
  spec.validate();

  std::vector<DomainDataset> datasets;
  datasets.reserve(spec.n_seeds);
  for (int i = 0; i < spec.n_seeds; ++i) {
    SynthConfig s = spec.synth;
    s.seed = seed_chain(spec.master_seed, kSeedTagSweepData, static_cast<std::uint64_t>(i));
    datasets.push_back(generate(s));
  }

  SweepResult result;
  result.num_classes = spec.synth.num_classes;
  result.n_seeds = spec.n_seeds;
  for (Regime regime : spec.regimes) {
    const bool is_tmps = regime == Regime::Tmps;
    const std::vector<double> ps = is_tmps ? spec.p_values : std::vector<double>{0.0};
    for (double p : ps)
      for (int s = 0; s < spec.n_seeds; ++s) {
        SweepCell cell;
        cell.regime = regime;
        cell.has_p = is_tmps;
        cell.p = is_tmps ? p : 0.0;
        cell.seed_index = s;
        cell.train_seed = detail::cell_seed(spec.master_seed, regime, is_tmps, cell.p, s);
        result.cells.push_back(std::move(cell));
      }
  }

  std::atomic<std::size_t> next{0};
  std::mutex cb_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      SweepCell& cell = result.cells[i];
      try {
        TrainConfig cfg = spec.train;
        cfg.seed = cell.train_seed;
        if (cell.has_p) cfg.p = cell.p;
        const DomainDataset& ds = datasets[cell.seed_index];
        const TrainedModel tm = train(ds, cfg, cell.regime);
        std::string ckpt_id = std::string(regime_name(cell.regime));
        if (cell.has_p) ckpt_id += " p=" + fmt_double(cell.p);
        ckpt_id += " seed_index=" + std::to_string(cell.seed_index);
        cell.report = evaluate(tm, ds, spec.rule, EvalPool::TargetEval,
                               "synth seed_index=" + std::to_string(cell.seed_index), ckpt_id);
        cell.macro_f1 = cell.report.macro_f1;
        cell.class_f1.clear();
        for (const ClassMetrics& m : cell.report.per_class) cell.class_f1.push_back(m.f1);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      if (on_cell) {
        std::lock_guard<std::mutex> lock(cb_mutex);
        on_cell(cell);
      }
    }
  };

  const int jobs = std::min<int>(spec.jobs, static_cast<int>(result.cells.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  for (const SweepCell& c : result.cells) result.any_failed = result.any_failed || !c.ok;
  result.aggregates = detail::aggregate_cells(result.cells);
  return result;
}

// --- sweep files -------------------------------------------------------------
//
// <dir>/cells.csv    regime,p,seed_index,train_seed,status,macro_f1,metrics_file,error
//                    p is empty for regimes that do not use it; macro_f1 and
//                    metrics_file are empty for failed cells.
// <dir>/summary.csv  regime,p,mean_macro_f1,std_macro_f1,n_seeds
// <dir>/reports/     per-cell metrics and confusion CSVs
// <dir>/report.txt   rendered tables (written by the report command)

namespace detail {

inline std::string p_slug(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return std::string(buf);
}

inline std::string cell_stem(const SweepCell& c) {
  std::string s = regime_name(c.regime);
  if (c.has_p) s += "_p" + p_slug(c.p);
  s += "_s" + std::to_string(c.seed_index);
  return s;
}

inline std::string sanitize_csv_field(std::string s) {
  for (char& ch : s) {
    if (ch == ',') ch = ';';
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace detail

inline void write_sweep_outputs(const std::string& dir, SweepResult& result) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "reports");
  std::ostringstream cells;
  cells << "regime,p,seed_index,train_seed,status,macro_f1,metrics_file,error\n";
  for (SweepCell& c : result.cells) {
    if (c.ok) {
      c.metrics_file = "reports/" + detail::cell_stem(c) + ".csv";
      write_eval_report((fs::path(dir) / c.metrics_file).string(), c.report);
      write_confusion((fs::path(dir) / "reports" / (detail::cell_stem(c) + "_confusion.csv")).string(),
                      c.report.confusion);
    }
    cells << regime_name(c.regime) << ',' << (c.has_p ? fmt_double(c.p) : "") << ','
          << c.seed_index << ',' << c.train_seed << ',' << (c.ok ? "ok" : "error") << ','
          << (c.ok ? fmt_double(c.macro_f1) : "") << ',' << c.metrics_file << ','
          << detail::sanitize_csv_field(c.error) << "\n";
  }
  write_text_file((fs::path(dir) / "cells.csv").string(), cells.str());

  std::ostringstream summary;
  summary << "regime,p,mean_macro_f1,std_macro_f1,n_seeds\n";
  for (const SweepAggregate& a : result.aggregates)
    summary << regime_name(a.regime) << ',' << (a.has_p ? fmt_double(a.p) : "") << ','
            << (a.n > 0 ? fmt_double(a.mean_macro_f1) : "") << ','
            << (a.n > 0 ? fmt_double(a.std_macro_f1) : "") << ',' << a.n << "\n";
  write_text_file((fs::path(dir) / "summary.csv").string(), summary.str());
}

// Reconstructs a SweepResult from a sweep directory: cells.csv plus each
// cell's metrics file. Aggregates are recomputed rather than read back.
inline SweepResult load_sweep_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string cells_path = (fs::path(dir) / "cells.csv").string();
  const std::string text = read_text_file(cells_path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "regime,p,seed_index,train_seed,status,macro_f1,metrics_file,error")
    throw std::runtime_error(cells_path + ": not a sweep cells csv");
  SweepResult result;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = cells_path + ": line " + std::to_string(lineno);
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      f.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() != 8) throw std::runtime_error(where + ": expected 8 fields");
    SweepCell c;
    try {
      c.regime = parse_regime(f[0]);
      c.has_p = !f[1].empty();
      if (c.has_p && !parse_double(f[1], c.p)) throw std::invalid_argument("bad p value");
      c.seed_index = std::stoi(f[2]);
      c.train_seed = std::stoull(f[3]);
      c.ok = f[4] == "ok";
      c.error = f[7];
      if (c.ok) {
        if (!parse_double(f[5], c.macro_f1)) throw std::invalid_argument("bad macro value");
        c.metrics_file = f[6];
        const LoadedEval ev = read_eval_report((fs::path(dir) / c.metrics_file).string());
        c.class_f1 = ev.f1;
      }
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    result.n_seeds = std::max(result.n_seeds, c.seed_index + 1);
    if (!c.class_f1.empty())
      result.num_classes = std::max(result.num_classes, static_cast<int>(c.class_f1.size()));
    result.any_failed = result.any_failed || !c.ok;
    result.cells.push_back(std::move(c));
  }
  result.aggregates = detail::aggregate_cells(result.cells);
  return result;
}

// --- report rendering --------------------------------------------------------

namespace detail {

inline std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

// One decimal, as a percentage; the table arithmetic below works on these
// rounded values so printed deltas are exactly consistent with the printed
// averages.
inline double pct1(double fraction) { return std::stod(fmt_fixed(fraction * 100.0, 1)); }

}  // namespace detail

// Two text tables: macro F1 per (regime, p), and a per-class comparison of
// the regimes with the prioritized column taken at p = 0.7 when present,
// otherwise at its best-scoring p. The comparison needs a baseline column
// to diff against and fails without one.
inline std::string render_report(const SweepResult& result) {
  std::ostringstream out;
  out << "macro F1 by regime (percent, mean +- std over seeds)\n\n";
  out << detail::pad("regime", 11) << detail::pad("p", 7) << detail::pad("mean", 8)
      << detail::pad("std", 8) << "runs\n";
  for (const SweepAggregate& a : result.aggregates) {
    out << detail::pad(regime_name(a.regime), 11)
        << detail::pad(a.has_p ? detail::p_slug(a.p) : "-", 7);
    if (a.n > 0)
      out << detail::pad(fmt_fixed(a.mean_macro_f1 * 100.0, 1), 8)
          << detail::pad(fmt_fixed(a.std_macro_f1 * 100.0, 1), 8) << a.n << "\n";
    else
      out << detail::pad("-", 8) << detail::pad("-", 8) << "0\n";
  }

  // Pick the column p for the prioritized regime.
  bool have_tmps = false;
  double tmps_p = 0.0;
  double best_mean = -1.0;
  bool have_exact = false;
  for (const SweepAggregate& a : result.aggregates) {
    if (a.regime != Regime::Tmps || a.n == 0) continue;
    have_tmps = true;
    if (std::abs(a.p - 0.7) < 1e-12) {
      have_exact = true;
      tmps_p = a.p;
    }
    if (!have_exact && a.mean_macro_f1 > best_mean) {
      best_mean = a.mean_macro_f1;
      tmps_p = a.p;
    }
  }

  // Regimes present, in canonical order.
  std::vector<Regime> cols;
  for (Regime r : all_regimes()) {
    bool present = false;
    for (const SweepAggregate& a : result.aggregates)
      present = present || (a.regime == r && a.n > 0);
    if (present) cols.push_back(r);
  }
  if (cols.empty()) {
    out << "\nno successful cells; nothing to compare\n";
    return out.str();
  }
  bool have_baseline = false;
  for (Regime r : cols) have_baseline = have_baseline || r == Regime::Baseline;
  if (!have_baseline)
    throw std::runtime_error("report: no successful baseline cells to compare against");

  // Per-class means over successful seeds for each column.
  const int classes = result.num_classes;
  std::vector<std::vector<double>> class_mean(cols.size(), std::vector<double>(classes, 0.0));
  std::vector<int> col_n(cols.size(), 0);
  for (const SweepCell& c : result.cells) {
    if (!c.ok) continue;
    if (c.regime == Regime::Tmps && (!have_tmps || std::abs(c.p - tmps_p) > 1e-12)) continue;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] != c.regime) continue;
      for (int cl = 0; cl < classes && cl < static_cast<int>(c.class_f1.size()); ++cl)
        class_mean[k][cl] += c.class_f1[cl];
      ++col_n[k];
    }
  }
  for (std::size_t k = 0; k < cols.size(); ++k)
    if (col_n[k] > 0)
      for (double& v : class_mean[k]) v /= col_n[k];

  out << "\nper-class F1 comparison (percent";
  if (have_tmps) out << ", tmps at p=" << detail::p_slug(tmps_p);
  out << ")\n\n";
  const std::size_t w = 11;
  out << detail::pad("class", 9);
  for (Regime r : cols) out << detail::pad(regime_name(r), w);
  out << "\n";
  for (int cl = 0; cl < classes; ++cl) {
    out << detail::pad(std::to_string(cl), 9);
    for (std::size_t k = 0; k < cols.size(); ++k)
      out << detail::pad(fmt_fixed(class_mean[k][cl] * 100.0, 1), w);
    out << "\n";
  }
  // Average row, then the gain of each regime over the baseline average,
  // both computed on the rounded display values.
  std::vector<double> ave(cols.size(), 0.0);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    double s = 0.0;
    for (int cl = 0; cl < classes; ++cl) s += detail::pct1(class_mean[k][cl]);
    ave[k] = std::stod(fmt_fixed(classes > 0 ? s / classes : 0.0, 1));
  }
  double base_ave = 0.0;
  for (std::size_t k = 0; k < cols.size(); ++k)
    if (cols[k] == Regime::Baseline) base_ave = ave[k];
  out << detail::pad("Ave.", 9);
  for (std::size_t k = 0; k < cols.size(); ++k) out << detail::pad(fmt_fixed(ave[k], 1), w);
  out << "\n" << detail::pad("vs base", 9);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] == Regime::Baseline) {
      out << detail::pad("-", w);
    } else {
      const double d = ave[k] - base_ave;
      // One rounding step can leave artifacts like -0.0; normalize.
      const double dr = std::stod(fmt_fixed(d, 1)) + 0.0;
      std::string cell = "(";
      cell += dr >= 0.0 ? "+" : "";
      cell += fmt_fixed(dr, 1) + ")";
      out << detail::pad(cell, w);
    }
  }
  out << "\n";
  return out.str();
}

// --- configuration keys --------------------------------------------------------

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // data generation
      "num_classes", "dim", "nuisance_dims", "source_per_class", "target_train_per_class",
      "target_eval_per_class", "class_separation", "domain_shift", "noise",
      // training
      "hidden_dims", "embed_dim", "epochs", "steps_per_epoch", "lr", "lambda", "p",
      "finetune_epochs", "finetune_lr", "regime",
      // evaluation and sweep
      "rule", "p_values", "n_seeds", "regimes", "jobs",
      // shared
      "seed",
  };
  return keys;
}

namespace detail {

inline int cfg_int(const ConfigMap& cfg, const std::string& key, int fallback) {
  const long long v = cfg.get_int(key, fallback);
  if (v < -(1LL << 31) || v > (1LL << 31))
    throw std::invalid_argument("config: key '" + key + "' out of range");
  return static_cast<int>(v);
}

}  // namespace detail

inline SynthConfig synth_from_config(const ConfigMap& cfg) {
  SynthConfig s;
  s.num_classes = detail::cfg_int(cfg, "num_classes", s.num_classes);
  s.dim = detail::cfg_int(cfg, "dim", s.dim);
  s.nuisance_dims = detail::cfg_int(cfg, "nuisance_dims", s.nuisance_dims);
  s.source_per_class = detail::cfg_int(cfg, "source_per_class", s.source_per_class);
  s.target_train_per_class = detail::cfg_int(cfg, "target_train_per_class", s.target_train_per_class);
  s.target_eval_per_class = detail::cfg_int(cfg, "target_eval_per_class", s.target_eval_per_class);
  s.class_separation = cfg.get_double("class_separation", s.class_separation);
  s.domain_shift = cfg.get_double("domain_shift", s.domain_shift);
  s.noise = cfg.get_double("noise", s.noise);
  s.seed = cfg.get_u64("seed", s.seed);
  s.validate();
  return s;
}

inline TrainConfig train_from_config(const ConfigMap& cfg) {
  TrainConfig t;
  std::vector<long long> hidden;
  for (int h : t.hidden_dims) hidden.push_back(h);
  hidden = cfg.get_int_list("hidden_dims", hidden);
  t.hidden_dims.clear();
  for (long long h : hidden) t.hidden_dims.push_back(static_cast<int>(h));
  t.embed_dim = detail::cfg_int(cfg, "embed_dim", t.embed_dim);
  t.epochs = detail::cfg_int(cfg, "epochs", t.epochs);
  t.steps_per_epoch = detail::cfg_int(cfg, "steps_per_epoch", t.steps_per_epoch);
  t.lr = cfg.get_double("lr", t.lr);
  t.lambda = cfg.get_double("lambda", t.lambda);
  t.p = cfg.get_double("p", t.p);
  t.finetune_epochs = detail::cfg_int(cfg, "finetune_epochs", t.finetune_epochs);
  t.finetune_lr = cfg.get_double("finetune_lr", t.finetune_lr);
  t.seed = cfg.get_u64("seed", t.seed);
  t.validate();
  return t;
}

inline SweepSpec sweep_from_config(const ConfigMap& cfg) {
  SweepSpec spec;
  spec.synth = synth_from_config(cfg);
  spec.train = train_from_config(cfg);
  spec.p_values = cfg.get_double_list("p_values", spec.p_values);
  spec.n_seeds = detail::cfg_int(cfg, "n_seeds", spec.n_seeds);
  if (cfg.has("regimes")) {
    spec.regimes.clear();
    for (const std::string& name : cfg.get_string_list("regimes", {}))
      spec.regimes.push_back(parse_regime(name));
  }
  spec.rule = parse_inference_rule(cfg.get_string("rule", inference_rule_name(spec.rule)));
  spec.jobs = detail::cfg_int(cfg, "jobs", spec.jobs);
  spec.master_seed = cfg.get_u64("seed", spec.master_seed);
  spec.validate();
  return spec;
}

}  // namespace tmps
