#include "tmps/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "tmps/config.hpp"

namespace {

using tmps::Regime;
using tmps::SweepAggregate;
using tmps::SweepCell;
using tmps::SweepResult;
using tmps::SweepSpec;

SweepSpec small_spec() {
  SweepSpec spec;
  spec.synth.num_classes = 2;
  spec.synth.dim = 4;
  spec.synth.nuisance_dims = 1;
  spec.synth.source_per_class = 25;
  spec.synth.target_train_per_class = 4;
  spec.synth.target_eval_per_class = 16;
  spec.synth.class_separation = 5.0;
  spec.synth.domain_shift = 3.0;
  spec.train.hidden_dims = {6};
  spec.train.embed_dim = 3;
  spec.train.epochs = 2;
  spec.p_values = {0.0, 0.5, 1.0};
  spec.n_seeds = 2;
  spec.master_seed = 42;
  return spec;
}

std::vector<double> macros(const SweepResult& r) {
  std::vector<double> out;
  for (const SweepCell& c : r.cells) out.push_back(c.macro_f1);
  return out;
}

TEST(CellSeed, DependsOnExactlyTheCellIdentity) {
  const std::uint64_t a = tmps::detail::cell_seed(42, Regime::Tmps, true, 0.5, 3);
  EXPECT_EQ(a, tmps::detail::cell_seed(42, Regime::Tmps, true, 0.5, 3));
  EXPECT_NE(a, tmps::detail::cell_seed(43, Regime::Tmps, true, 0.5, 3));
  EXPECT_NE(a, tmps::detail::cell_seed(42, Regime::Metric, false, 0.0, 3));
  EXPECT_NE(a, tmps::detail::cell_seed(42, Regime::Tmps, true, 0.25, 3));
  EXPECT_NE(a, tmps::detail::cell_seed(42, Regime::Tmps, true, 0.5, 4));
}

TEST(Sweep, ExtendingThePGridKeepsExistingCellsByteIdentical) {
  SweepSpec coarse = small_spec();
  coarse.regimes = {Regime::Baseline, Regime::Tmps};
  coarse.p_values = {0.0, 1.0};
  SweepSpec fine = coarse;
  fine.p_values = {0.0, 0.5, 1.0};
  const SweepResult a = tmps::run_sweep(coarse);
  const SweepResult b = tmps::run_sweep(fine);
  ASSERT_FALSE(a.any_failed);
  ASSERT_FALSE(b.any_failed);
  for (const SweepCell& ca : a.cells) {
    bool found = false;
    for (const SweepCell& cb : b.cells) {
      if (cb.regime != ca.regime || cb.has_p != ca.has_p || cb.seed_index != ca.seed_index)
        continue;
      if (ca.has_p && cb.p != ca.p) continue;
      found = true;
      EXPECT_EQ(cb.train_seed, ca.train_seed);
      EXPECT_EQ(cb.macro_f1, ca.macro_f1);  // bit-equal: same data, same seed
    }
    EXPECT_TRUE(found);
  }
}

TEST(Sweep, CellGridShapeAndSharedDatasets) {
  const SweepSpec spec = small_spec();
  const SweepResult r = tmps::run_sweep(spec);
  // 4 plain regimes + 3 p values for the prioritized one, times 2 seeds.
  ASSERT_EQ(r.cells.size(), (4u + 3u) * 2u);
  EXPECT_FALSE(r.any_failed);
  EXPECT_EQ(r.num_classes, 2);
  EXPECT_EQ(r.n_seeds, 2);
  for (const SweepCell& c : r.cells) {
    EXPECT_TRUE(c.ok);
    EXPECT_GE(c.macro_f1, 0.0);
    EXPECT_LE(c.macro_f1, 1.0);
    ASSERT_EQ(c.class_f1.size(), 2u);
    // dataset identity is part of the eval provenance string
    EXPECT_EQ(c.report.dataset_id, "synth seed_index=" + std::to_string(c.seed_index));
  }
  // Aggregates: one group per plain regime plus one per p value.
  ASSERT_EQ(r.aggregates.size(), 4u + 3u);
  for (const SweepAggregate& a : r.aggregates) EXPECT_EQ(a.n, 2);
}

TEST(Sweep, RegimeSubsetLeavesSharedCellsUntouched) {
  SweepSpec all = small_spec();
  SweepSpec only = small_spec();
  only.regimes = {Regime::Baseline};
  const SweepResult ra = tmps::run_sweep(all);
  const SweepResult rb = tmps::run_sweep(only);
  for (const SweepCell& cb : rb.cells) {
    for (const SweepCell& ca : ra.cells)
      if (ca.regime == Regime::Baseline && ca.seed_index == cb.seed_index)
        EXPECT_EQ(ca.macro_f1, cb.macro_f1);
  }
}

TEST(Sweep, ThreadedRunMatchesSerialRun) {
  SweepSpec spec = small_spec();
  spec.jobs = 1;
  const SweepResult serial = tmps::run_sweep(spec);
  spec.jobs = 4;
  const SweepResult threaded = tmps::run_sweep(spec);
  EXPECT_EQ(macros(serial), macros(threaded));
  ASSERT_EQ(serial.aggregates.size(), threaded.aggregates.size());
  for (std::size_t i = 0; i < serial.aggregates.size(); ++i) {
    EXPECT_EQ(serial.aggregates[i].mean_macro_f1, threaded.aggregates[i].mean_macro_f1);
    EXPECT_EQ(serial.aggregates[i].std_macro_f1, threaded.aggregates[i].std_macro_f1);
  }
}

TEST(Sweep, AggregatesMatchAnIndependentRecount) {
  const SweepResult r = tmps::run_sweep(small_spec());
  for (const SweepAggregate& a : r.aggregates) {
    double sum = 0.0;
    int n = 0;
    for (const SweepCell& c : r.cells) {
      if (c.regime != a.regime || c.has_p != a.has_p || (a.has_p && c.p != a.p) || !c.ok) continue;
      sum += c.macro_f1;
      ++n;
    }
    ASSERT_GT(n, 0);
    const double mean = sum / n;
    double ss = 0.0;
    for (const SweepCell& c : r.cells) {
      if (c.regime != a.regime || c.has_p != a.has_p || (a.has_p && c.p != a.p) || !c.ok) continue;
      ss += (c.macro_f1 - mean) * (c.macro_f1 - mean);
    }
    EXPECT_EQ(a.n, n);
    EXPECT_NEAR(a.mean_macro_f1, mean, 1e-15);
    EXPECT_NEAR(a.std_macro_f1, std::sqrt(ss / n), 1e-15);
  }
}

TEST(Sweep, CallbackSeesEveryCellExactlyOnce) {
  SweepSpec spec = small_spec();
  spec.jobs = 3;
  int calls = 0;
  const SweepResult r = tmps::run_sweep(spec, [&](const SweepCell&) { ++calls; });
  EXPECT_EQ(calls, static_cast<int>(r.cells.size()));
}

TEST(Sweep, FailedCellsAreRecordedNotFatal) {
  SweepSpec spec = small_spec();
  spec.synth.target_train_per_class = 0;  // fine_tuned cannot train on nothing
  spec.regimes = {Regime::Baseline, Regime::FineTuned};
  const SweepResult r = tmps::run_sweep(spec);
  EXPECT_TRUE(r.any_failed);
  int failed = 0;
  for (const SweepCell& c : r.cells) {
    if (c.regime == Regime::Baseline) {
      EXPECT_TRUE(c.ok);
    } else {
      EXPECT_FALSE(c.ok);
      EXPECT_FALSE(c.error.empty());
      ++failed;
    }
  }
  EXPECT_EQ(failed, 2);
  for (const SweepAggregate& a : r.aggregates)
    EXPECT_EQ(a.n, a.regime == Regime::Baseline ? 2 : 0);
}

TEST(SweepFiles, WriteThenLoadRoundTrips) {
  const auto dir = std::filesystem::temp_directory_path() / "tmps_sweep_roundtrip";
  std::filesystem::remove_all(dir);
  SweepResult written = tmps::run_sweep(small_spec());
  tmps::write_sweep_outputs(dir.string(), written);
  EXPECT_TRUE(std::filesystem::exists(dir / "cells.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
  for (const SweepCell& c : written.cells) {
    ASSERT_FALSE(c.metrics_file.empty());
    EXPECT_TRUE(std::filesystem::exists(dir / c.metrics_file)) << c.metrics_file;
  }

  const SweepResult loaded = tmps::load_sweep_dir(dir.string());
  ASSERT_EQ(loaded.cells.size(), written.cells.size());
  for (std::size_t i = 0; i < written.cells.size(); ++i) {
    EXPECT_EQ(loaded.cells[i].regime, written.cells[i].regime);
    EXPECT_EQ(loaded.cells[i].has_p, written.cells[i].has_p);
    EXPECT_EQ(loaded.cells[i].p, written.cells[i].p);
    EXPECT_EQ(loaded.cells[i].seed_index, written.cells[i].seed_index);
    EXPECT_EQ(loaded.cells[i].train_seed, written.cells[i].train_seed);
    EXPECT_EQ(loaded.cells[i].macro_f1, written.cells[i].macro_f1);  // bit-exact
    EXPECT_EQ(loaded.cells[i].class_f1, written.cells[i].class_f1);
  }
  ASSERT_EQ(loaded.aggregates.size(), written.aggregates.size());
  for (std::size_t i = 0; i < written.aggregates.size(); ++i)
    EXPECT_EQ(loaded.aggregates[i].mean_macro_f1, written.aggregates[i].mean_macro_f1);
  EXPECT_EQ(loaded.num_classes, written.num_classes);
  EXPECT_EQ(loaded.n_seeds, written.n_seeds);
  EXPECT_FALSE(loaded.any_failed);
  std::filesystem::remove_all(dir);
}

// Hand-built result with known per-class values, so the rendered numbers can
// be checked to the digit.
SweepResult fixture_result() {
  SweepResult r;
  r.num_classes = 2;
  r.n_seeds = 2;
  auto add = [&](Regime reg, bool has_p, double p, int s, std::vector<double> f1) {
    SweepCell c;
    c.regime = reg;
    c.has_p = has_p;
    c.p = p;
    c.seed_index = s;
    c.ok = true;
    c.macro_f1 = (f1[0] + f1[1]) / 2;
    c.class_f1 = std::move(f1);
    r.cells.push_back(std::move(c));
  };
  add(Regime::Baseline, false, 0.0, 0, {0.50, 0.70});
  add(Regime::Baseline, false, 0.0, 1, {0.52, 0.72});
  add(Regime::Tmps, true, 0.7, 0, {0.90, 0.80});
  add(Regime::Tmps, true, 0.7, 1, {0.88, 0.82});
  r.aggregates = tmps::detail::aggregate_cells(r.cells);
  return r;
}

TEST(Report, RendersExactRoundedAveragesAndDeltas) {
  const std::string text = tmps::render_report(fixture_result());
  // Class means: baseline 51.0 / 71.0, prioritized 89.0 / 81.0.
  EXPECT_NE(text.find("51.0"), std::string::npos) << text;
  EXPECT_NE(text.find("89.0"), std::string::npos) << text;
  // Averages of the displayed values and the delta between them.
  EXPECT_NE(text.find("61.0"), std::string::npos) << text;
  EXPECT_NE(text.find("85.0"), std::string::npos) << text;
  EXPECT_NE(text.find("(+24.0)"), std::string::npos) << text;
  EXPECT_NE(text.find("tmps at p=0.7"), std::string::npos) << text;
  EXPECT_NE(text.find("vs base"), std::string::npos) << text;
}

TEST(Report, PrefersExactPSevenElseArgmax) {
  SweepResult r = fixture_result();
  // Shift the p values away from 0.7: 0.3 scores lower than 0.5.
  for (SweepCell& c : r.cells)
    if (c.regime == Regime::Tmps) c.p = c.seed_index == 0 ? 0.3 : 0.3;
  // Duplicate the tmps cells at p = 0.5 with higher scores.
  SweepCell hi = r.cells[2];
  hi.p = 0.5;
  hi.class_f1 = {0.95, 0.93};
  hi.macro_f1 = 0.94;
  SweepCell hi2 = r.cells[3];
  hi2.p = 0.5;
  hi2.class_f1 = {0.95, 0.95};
  hi2.macro_f1 = 0.95;
  r.cells.push_back(hi);
  r.cells.push_back(hi2);
  r.aggregates = tmps::detail::aggregate_cells(r.cells);
  const std::string text = tmps::render_report(r);
  EXPECT_NE(text.find("tmps at p=0.5"), std::string::npos) << text;
}

TEST(Report, MissingBaselineIsAnError) {
  SweepResult r = fixture_result();
  std::vector<SweepCell> tmps_only;
  for (const SweepCell& c : r.cells)
    if (c.regime == Regime::Tmps) tmps_only.push_back(c);
  r.cells = tmps_only;
  r.aggregates = tmps::detail::aggregate_cells(r.cells);
  EXPECT_THROW(tmps::render_report(r), std::runtime_error);
}

TEST(Sweep, ValidationCatchesBadSpecs) {
  SweepSpec spec = small_spec();
  spec.p_values = {0.5, 0.5};
  EXPECT_THROW(tmps::run_sweep(spec), std::invalid_argument);
  spec = small_spec();
  spec.p_values = {0.2, 1.4};
  EXPECT_THROW(tmps::run_sweep(spec), std::invalid_argument);
  spec = small_spec();
  spec.jobs = 0;
  EXPECT_THROW(tmps::run_sweep(spec), std::invalid_argument);
  spec = small_spec();
  spec.regimes = {Regime::Baseline, Regime::Baseline};
  EXPECT_THROW(tmps::run_sweep(spec), std::invalid_argument);
  spec = small_spec();
  spec.regimes = {};
  EXPECT_THROW(tmps::run_sweep(spec), std::invalid_argument);
  // Without the prioritized regime the p grid is not consulted.
  spec = small_spec();
  spec.regimes = {Regime::Baseline};
  spec.p_values = {9.0};
  EXPECT_NO_THROW(tmps::run_sweep(spec));
}

TEST(SweepConfig, KeysMapOntoTheSpec) {
  const tmps::ConfigMap cfg = tmps::ConfigMap::parse(
      "num_classes = 3\n"
      "dim = 6\n"
      "nuisance_dims = 2\n"
      "source_per_class = 30\n"
      "target_train_per_class = 4\n"
      "target_eval_per_class = 10\n"
      "domain_shift = 2.5\n"
      "hidden_dims = 10, 8\n"
      "embed_dim = 5\n"
      "epochs = 7\n"
      "lr = 0.01\n"
      "p_values = 0, 0.5\n"
      "n_seeds = 3\n"
      "regimes = baseline, tmps\n"
      "rule = anchor\n"
      "seed = 99\n",
      "sweep.cfg");
  cfg.require_known(tmps::known_config_keys());
  const SweepSpec spec = tmps::sweep_from_config(cfg);
  EXPECT_EQ(spec.synth.num_classes, 3);
  EXPECT_EQ(spec.synth.dim, 6);
  EXPECT_DOUBLE_EQ(spec.synth.domain_shift, 2.5);
  EXPECT_EQ(spec.train.hidden_dims, (std::vector<int>{10, 8}));
  EXPECT_EQ(spec.train.embed_dim, 5);
  EXPECT_EQ(spec.train.epochs, 7);
  EXPECT_DOUBLE_EQ(spec.train.lr, 0.01);
  EXPECT_EQ(spec.p_values, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(spec.n_seeds, 3);
  ASSERT_EQ(spec.regimes.size(), 2u);
  EXPECT_EQ(spec.regimes[0], Regime::Baseline);
  EXPECT_EQ(spec.regimes[1], Regime::Tmps);
  EXPECT_EQ(spec.rule, tmps::InferenceRule::NearestAnchor);
  EXPECT_EQ(spec.master_seed, 99u);
  EXPECT_THROW(tmps::parse_regime("bogus"), std::invalid_argument);
}

}  // namespace
