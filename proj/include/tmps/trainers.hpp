#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tmps/dataset.hpp"
#include "tmps/embedding.hpp"
#include "tmps/metric_loss.hpp"
#include "tmps/rng.hpp"
#include "tmps/sampler.hpp"
#include "tmps/util.hpp"

namespace tmps {

// The five training regimes compared by the harness.
//   Baseline   source-only classification
//   Metric     classification + similarity loss, anchors uniform over the
//              pooled source/target-train union
//   AllTrain   classification over the source/target-train union
//   FineTuned  Baseline, then head-only training on target-train with the
//              embedding frozen
//   Tmps       classification + similarity loss with target-prioritized
//              anchor sampling
enum class Regime { Baseline, Metric, AllTrain, FineTuned, Tmps };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::Metric: return "metric";
    case Regime::AllTrain: return "alltrain";
    case Regime::FineTuned: return "finetuned";
    case Regime::Tmps: return "tmps";
  }
  throw std::invalid_argument("regime_name: unknown regime");
}

inline Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::Baseline;
  if (s == "metric") return Regime::Metric;
  if (s == "alltrain") return Regime::AllTrain;
  if (s == "finetuned") return Regime::FineTuned;
  if (s == "tmps") return Regime::Tmps;
  throw std::invalid_argument("unknown regime '" + s +
                              "' (expected baseline|metric|alltrain|finetuned|tmps)");
}

inline const std::vector<Regime>& all_regimes() {
  static const std::vector<Regime> r = {Regime::Baseline, Regime::Metric, Regime::AllTrain,
                                        Regime::FineTuned, Regime::Tmps};
  return r;
}

struct TrainConfig {
  std::vector<int> hidden_dims = {32};
  int embed_dim = 16;
  int epochs = 30;
  // Steps per epoch; 0 means one step per eligible query, i.e. one pass
  // worth of updates (queries are still drawn with replacement).
  int steps_per_epoch = 0;
  // Defaults tuned on the default synthetic benchmark: larger rates or a
  // heavier similarity weight let the embedding scale run away when the
  // domain offset is large (the anchor pull grows with embedding distance).
  double lr = 0.005;
  // Weight of the similarity term in the combined objective.
  double lambda = 0.25;
  // Probability that an anchor comes from target-train (Tmps only).
  double p = 0.7;
  // Head-only phase of FineTuned; negative means inherit epochs / lr.
  int finetune_epochs = -1;
  double finetune_lr = -1.0;
  std::uint64_t seed = 42;

  int resolved_finetune_epochs() const { return finetune_epochs < 0 ? epochs : finetune_epochs; }
  double resolved_finetune_lr() const { return finetune_lr < 0.0 ? lr : finetune_lr; }

  void validate() const {
    if (hidden_dims.empty()) throw std::invalid_argument("config: need at least one hidden dim");
    for (int h : hidden_dims)
      if (h < 1) throw std::invalid_argument("config: hidden dims must be positive");
    if (embed_dim < 1) throw std::invalid_argument("config: embed_dim must be positive");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (steps_per_epoch < 0) throw std::invalid_argument("config: steps_per_epoch must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("config: lambda must be >= 0");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("config: p must lie in [0, 1]");
    // finetune overrides: negative sentinels inherit, otherwise same rules
    // except lr = 0 is allowed (a frozen second phase is meaningful).
    if (finetune_lr >= 0.0 && !std::isfinite(finetune_lr))
      throw std::invalid_argument("config: finetune_lr must be finite");
  }
};

struct TrainedModel {
  EmbeddingModel model;
  ClassifierHead head;
  Regime regime = Regime::Baseline;
  TrainConfig config;
  // Mean loss per epoch, in execution order. For FineTuned the head-only
  // epochs are appended after the source epochs.
  std::vector<double> loss_trace;
  double final_loss = 0.0;
};

// Called after every SGD step; lets tests watch query selection and losses
// without changing the training stream.
using StepObserver = std::function<void(int epoch, int step, const Sample& query, double loss)>;

// Scalar loss plus the gradient of every trainable parameter.
struct LossBundle {
  double loss = 0.0;
  Gradients grads;
};

// Cross-entropy of the head's prediction for x, with gradients through the
// head and the embedding network.
inline LossBundle classification_loss(const EmbeddingModel& m, const ClassifierHead& h,
                                      std::span<const double> x, int label) {
  const ForwardTrace trace = forward_trace(m, std::vector<double>(x.begin(), x.end()));
  const std::vector<double>& e = trace.embedding();
  const std::vector<double> logits = head_logits(h, e);
  std::vector<double> g_logits;
  LossBundle out;
  out.loss = cross_entropy_logits(logits, label, g_logits);
  out.grads = make_gradients(m, h);
  // Head: dL/dW = g_logits outer e, dL/db = g_logits; embedding sees W^T g.
  std::vector<double> g_e(e.size(), 0.0);
  for (int r = 0; r < h.w.rows; ++r) {
    const double d = g_logits[r];
    const double* wr = &h.w.a[static_cast<std::size_t>(r) * h.w.cols];
    double* gr = &out.grads.head.w.a[static_cast<std::size_t>(r) * h.w.cols];
    for (int c = 0; c < h.w.cols; ++c) {
      gr[c] += d * e[c];
      g_e[c] += wr[c] * d;
    }
    out.grads.head.b[r] += d;
  }
  detail::backward_accumulate(m, trace, g_e, 1.0, out.grads.model, nullptr);
  return out;
}

// Similarity loss of x against one anchor input per class, with gradients
// flowing through the embedding via the query and every anchor. The head is
// untouched by this term.
inline LossBundle similarity_loss(const EmbeddingModel& m, const ClassifierHead& h,
                                  std::span<const double> x, int label,
                                  const std::vector<std::span<const double>>& anchor_inputs) {
  const ForwardTrace q_trace = forward_trace(m, std::vector<double>(x.begin(), x.end()));
  std::vector<ForwardTrace> a_traces;
  a_traces.reserve(anchor_inputs.size());
  std::vector<std::vector<double>> a_embeds;
  a_embeds.reserve(anchor_inputs.size());
  for (const auto& a : anchor_inputs) {
    a_traces.push_back(forward_trace(m, std::vector<double>(a.begin(), a.end())));
    a_embeds.push_back(a_traces.back().embedding());
  }
  const MetricLossValue ml = metric_loss(q_trace.embedding(), a_embeds, label);
  LossBundle out;
  out.loss = ml.loss;
  out.grads = make_gradients(m, h);
  detail::backward_accumulate(m, q_trace, ml.grad_query, 1.0, out.grads.model, nullptr);
  for (std::size_t i = 0; i < a_traces.size(); ++i)
    detail::backward_accumulate(m, a_traces[i], ml.grad_anchors[i], 1.0, out.grads.model, nullptr);
  return out;
}

// total = classification + lambda * similarity, gradients included.
inline LossBundle combined_loss(const LossBundle& cls, const LossBundle& sim, double lambda) {
  LossBundle out = cls;
  out.loss += lambda * sim.loss;
  for (std::size_t l = 0; l < out.grads.model.layers.size(); ++l) {
    auto& ow = out.grads.model.layers[l].w.a;
    const auto& sw = sim.grads.model.layers[l].w.a;
    for (std::size_t i = 0; i < ow.size(); ++i) ow[i] += lambda * sw[i];
    auto& ob = out.grads.model.layers[l].b;
    const auto& sb = sim.grads.model.layers[l].b;
    for (std::size_t i = 0; i < ob.size(); ++i) ob[i] += lambda * sb[i];
  }
  for (std::size_t i = 0; i < out.grads.head.w.a.size(); ++i)
    out.grads.head.w.a[i] += lambda * sim.grads.head.w.a[i];
  for (std::size_t i = 0; i < out.grads.head.b.size(); ++i)
    out.grads.head.b[i] += lambda * sim.grads.head.b[i];
  return out;
}

// The full per-step objective the metric regimes optimize, exposed in one
// call so tests can check its gradients numerically.
inline LossBundle compute_combined_loss(const EmbeddingModel& m, const ClassifierHead& h,
                                        std::span<const double> x, int label,
                                        const std::vector<std::span<const double>>& anchor_inputs,
                                        double lambda) {
  return combined_loss(classification_loss(m, h, x, label),
                       similarity_loss(m, h, x, label, anchor_inputs), lambda);
}

// Loss value only, no gradient work; what finite differencing perturbs.
inline double compute_combined_loss_value(const EmbeddingModel& m, const ClassifierHead& h,
                                          std::span<const double> x, int label,
                                          const std::vector<std::span<const double>>& anchor_inputs,
                                          double lambda) {
  const std::vector<double> e = forward(m, std::vector<double>(x.begin(), x.end()));
  const std::vector<double> logits = head_logits(h, e);
  std::vector<double> scratch;
  const double cls = cross_entropy_logits(logits, label, scratch);
  std::vector<std::vector<double>> a_embeds;
  a_embeds.reserve(anchor_inputs.size());
  for (const auto& a : anchor_inputs)
    a_embeds.push_back(forward(m, std::vector<double>(a.begin(), a.end())));
  double shift = 0.0;
  std::vector<double> d2(a_embeds.size());
  for (std::size_t i = 0; i < a_embeds.size(); ++i) {
    d2[i] = detail::squared_distance(e, a_embeds[i]);
    shift = i == 0 ? d2[i] : std::min(shift, d2[i]);
  }
  double z = 0.0;
  for (double d : d2) z += std::exp(-(d - shift));
  const double sim = (d2[label] - shift) + std::log(z);
  return cls + lambda * sim;
}

namespace detail {

inline std::vector<const Sample*> flatten_pools(const ClassPools& pools) {
  std::vector<const Sample*> out;
  for (const auto& pool : pools)
    for (const Sample& s : pool) out.push_back(&s);
  return out;
}

// Union query pool: all source samples in class order, then all
// target-train samples in class order. The order matters because query
// selection indexes into it with the shared training stream.
inline std::vector<const Sample*> flatten_union(const ClassPools& a, const ClassPools& b) {
  std::vector<const Sample*> out = flatten_pools(a);
  for (const auto& pool : b)
    for (const Sample& s : pool) out.push_back(&s);
  return out;
}

inline void check_source_nonempty(const DomainDataset& ds, const char* who) {
  for (int c = 0; c < ds.num_classes; ++c)
    if (ds.source_pool[c].empty())
      throw std::invalid_argument(std::string(who) + ": class " + std::to_string(c) +
                                  " has no source samples");
}

inline double epoch_mean(const std::vector<double>& losses) {
  if (losses.empty()) return 0.0;
  const double s = std::accumulate(losses.begin(), losses.end(), 0.0);
  return s / static_cast<double>(losses.size());
}

// Classification-only epochs over `queries`. With head_only set, the
// embedding is left untouched and no gradient flows through it.
inline void run_classification_epochs(EmbeddingModel& model, ClassifierHead& head,
                                      const std::vector<const Sample*>& queries, int epochs,
                                      int steps_per_epoch, double lr, Rng& rng,
                                      std::vector<double>& trace, const StepObserver& obs,
                                      bool head_only, int epoch_offset) {
  if (queries.empty()) throw std::invalid_argument("training: query pool is empty");
  const int steps = steps_per_epoch > 0 ? steps_per_epoch : static_cast<int>(queries.size());
  std::vector<double> losses(steps);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int step = 0; step < steps; ++step) {
      const Sample& q = *queries[rng.uniform_index(queries.size())];
      double loss;
      if (head_only) {
        const std::vector<double> e = forward(model, q.features);
        const std::vector<double> logits = head_logits(head, e);
        std::vector<double> g_logits;
        loss = cross_entropy_logits(logits, q.label, g_logits);
        HeadGrad g;
        g.w = Mat(head.w.rows, head.w.cols);
        g.b.assign(head.b.size(), 0.0);
        for (int r = 0; r < head.w.rows; ++r) {
          const double d = g_logits[r];
          double* gr = &g.w.a[static_cast<std::size_t>(r) * head.w.cols];
          for (int c = 0; c < head.w.cols; ++c) gr[c] = d * e[c];
          g.b[r] = d;
        }
        sgd_step_head(head, g, lr);
      } else {
        const LossBundle b = classification_loss(model, head, q.features, q.label);
        loss = b.loss;
        sgd_step(model, head, b.grads, lr);
      }
      losses[step] = loss;
      if (obs) obs(epoch_offset + epoch, step, q, loss);
    }
    const double mean = epoch_mean(losses);
    if (!std::isfinite(mean))
      throw std::runtime_error("training diverged: non-finite loss in epoch " +
                               std::to_string(epoch_offset + epoch));
    trace.push_back(mean);
  }
}

// Combined-objective epochs: per step, one query from `queries` (trainer
// stream), one anchor set from `sampler` (its own stream), one SGD step on
// classification + lambda * similarity.
template <class Sampler>
inline void run_metric_epochs(EmbeddingModel& model, ClassifierHead& head,
                              const std::vector<const Sample*>& queries, Sampler& sampler,
                              double lambda, int epochs, int steps_per_epoch, double lr, Rng& rng,
                              std::vector<double>& trace, const StepObserver& obs) {
  if (queries.empty()) throw std::invalid_argument("training: query pool is empty");
  const int steps = steps_per_epoch > 0 ? steps_per_epoch : static_cast<int>(queries.size());
  std::vector<double> losses(steps);
  std::vector<std::span<const double>> anchor_inputs(sampler.num_classes());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int step = 0; step < steps; ++step) {
      const Sample& q = *queries[rng.uniform_index(queries.size())];
      const std::vector<const Sample*> anchors = sampler.sample_anchor_set();
      for (std::size_t i = 0; i < anchors.size(); ++i)
        anchor_inputs[i] = anchors[i]->features;
      const LossBundle b =
          compute_combined_loss(model, head, q.features, q.label, anchor_inputs, lambda);
      sgd_step(model, head, b.grads, lr);
      losses[step] = b.loss;
      if (obs) obs(epoch, step, q, b.loss);
    }
    const double mean = epoch_mean(losses);
    if (!std::isfinite(mean))
      throw std::runtime_error("training diverged: non-finite loss in epoch " +
                               std::to_string(epoch));
    trace.push_back(mean);
  }
}

// Shared setup: validate, seed the stream, initialize parameters. The
// initialization draw order is identical across regimes, so models with the
// same seed and shape start from identical parameters.
inline TrainedModel init_trained(const DomainDataset& ds, const TrainConfig& cfg, Regime regime,
                                 Rng& rng) {
  cfg.validate();
  if (ds.num_classes < 2) throw std::invalid_argument("training: need at least 2 classes");
  check_source_nonempty(ds, "training");
  TrainedModel tm;
  tm.regime = regime;
  tm.config = cfg;
  std::vector<int> dims;
  dims.push_back(ds.dim);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(cfg.embed_dim);
  tm.model = init_embedding(dims, rng);
  tm.head = init_head(cfg.embed_dim, ds.num_classes, rng);
  return tm;
}

inline void finish(TrainedModel& tm) {
  tm.final_loss = tm.loss_trace.empty() ? 0.0 : tm.loss_trace.back();
}

}  // namespace detail

// Source-only classification training.
inline TrainedModel train_baseline(const DomainDataset& ds, const TrainConfig& cfg,
                                   const StepObserver& obs = {}) {
  Rng rng(cfg.seed);
  TrainedModel tm = detail::init_trained(ds, cfg, Regime::Baseline, rng);
  const auto queries = detail::flatten_pools(ds.source_pool);
  detail::run_classification_epochs(tm.model, tm.head, queries, cfg.epochs, cfg.steps_per_epoch,
                                    cfg.lr, rng, tm.loss_trace, obs, false, 0);
  detail::finish(tm);
  return tm;
}

// Classification over the source/target-train union; no similarity term.
// With an empty target-train pool the query pool equals the source pool and
// the run is byte-identical to train_baseline at the same seed.
inline TrainedModel train_alltrain(const DomainDataset& ds, const TrainConfig& cfg,
                                   const StepObserver& obs = {}) {
  Rng rng(cfg.seed);
  TrainedModel tm = detail::init_trained(ds, cfg, Regime::AllTrain, rng);
  const auto queries = detail::flatten_union(ds.source_pool, ds.target_train_pool);
  detail::run_classification_epochs(tm.model, tm.head, queries, cfg.epochs, cfg.steps_per_epoch,
                                    cfg.lr, rng, tm.loss_trace, obs, false, 0);
  detail::finish(tm);
  return tm;
}

// Combined objective with anchors drawn uniformly from the pooled union, so
// the scarce domain carries no extra weight. lambda = 0 skips anchor
// sampling entirely and reduces to train_alltrain, byte for byte.
inline TrainedModel train_metric(const DomainDataset& ds, const TrainConfig& cfg,
                                 const StepObserver& obs = {}) {
  Rng rng(cfg.seed);
  TrainedModel tm = detail::init_trained(ds, cfg, Regime::Metric, rng);
  const auto queries = detail::flatten_union(ds.source_pool, ds.target_train_pool);
  if (cfg.lambda == 0.0) {
    detail::run_classification_epochs(tm.model, tm.head, queries, cfg.epochs, cfg.steps_per_epoch,
                                      cfg.lr, rng, tm.loss_trace, obs, false, 0);
  } else {
    PooledSampler sampler(ds.source_pool, ds.target_train_pool,
                          seed_chain(cfg.seed, kSeedTagAnchors));
    detail::run_metric_epochs(tm.model, tm.head, queries, sampler, cfg.lambda, cfg.epochs,
                              cfg.steps_per_epoch, cfg.lr, rng, tm.loss_trace, obs);
  }
  detail::finish(tm);
  return tm;
}

// Baseline training, then a head-only phase on target-train with the
// embedding frozen. The head-only phase touches no embedding parameter, so
// the embedding of the result is byte-identical to the phase-one model.
inline TrainedModel train_finetuned(const DomainDataset& ds, const TrainConfig& cfg,
                                    const StepObserver& obs = {}) {
  Rng rng(cfg.seed);
  TrainedModel tm = detail::init_trained(ds, cfg, Regime::FineTuned, rng);
  const auto src_queries = detail::flatten_pools(ds.source_pool);
  detail::run_classification_epochs(tm.model, tm.head, src_queries, cfg.epochs,
                                    cfg.steps_per_epoch, cfg.lr, rng, tm.loss_trace, obs, false,
                                    0);
  const auto tt_queries = detail::flatten_pools(ds.target_train_pool);
  if (tt_queries.empty())
    throw std::invalid_argument("train_finetuned: target-train pool is empty");
  // steps_per_epoch = 0 resolves against the small target pool here, not the
  // source pool, so a head-only epoch is one pass over target-train.
  detail::run_classification_epochs(tm.model, tm.head, tt_queries, cfg.resolved_finetune_epochs(),
                                    cfg.steps_per_epoch, cfg.resolved_finetune_lr(), rng,
                                    tm.loss_trace, obs, true, cfg.epochs);
  detail::finish(tm);
  return tm;
}

// Combined objective with target-prioritized anchors: each anchor comes from
// target-train with probability p, otherwise from source. Queries come from
// the source/target-train union. lambda = 0 reduces to train_alltrain.
inline TrainedModel train_tmps(const DomainDataset& ds, const TrainConfig& cfg,
                               const StepObserver& obs = {}) {
  Rng rng(cfg.seed);
  TrainedModel tm = detail::init_trained(ds, cfg, Regime::Tmps, rng);
  const auto queries = detail::flatten_union(ds.source_pool, ds.target_train_pool);
  if (cfg.lambda == 0.0) {
    detail::run_classification_epochs(tm.model, tm.head, queries, cfg.epochs, cfg.steps_per_epoch,
                                      cfg.lr, rng, tm.loss_trace, obs, false, 0);
  } else {
    if (cfg.p > 0.0)
      for (int c = 0; c < ds.num_classes; ++c)
        if (ds.target_train_pool[c].empty())
          throw std::invalid_argument("train_tmps: class " + std::to_string(c) +
                                      " has no target-train samples but p > 0");
    PrioritizedSampler sampler(ds.source_pool, ds.target_train_pool, cfg.p,
                               seed_chain(cfg.seed, kSeedTagAnchors));
    detail::run_metric_epochs(tm.model, tm.head, queries, sampler, cfg.lambda, cfg.epochs,
                              cfg.steps_per_epoch, cfg.lr, rng, tm.loss_trace, obs);
  }
  detail::finish(tm);
  return tm;
}

inline TrainedModel train(const DomainDataset& ds, const TrainConfig& cfg, Regime regime,
                          const StepObserver& obs = {}) {
  switch (regime) {
    case Regime::Baseline: return train_baseline(ds, cfg, obs);
    case Regime::Metric: return train_metric(ds, cfg, obs);
    case Regime::AllTrain: return train_alltrain(ds, cfg, obs);
    case Regime::FineTuned: return train_finetuned(ds, cfg, obs);
    case Regime::Tmps: return train_tmps(ds, cfg, obs);
  }
  throw std::invalid_argument("train: unknown regime");
}

// Text manifest of one training run: resolved configuration, seed, and final
// loss, as flat key=value lines. Callers append run-specific entries
// (dataset path, checksums, timings) via `extra`.
inline std::string run_manifest(const TrainedModel& tm,
                                const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  std::ostringstream out;
  out << "tmps-run v1\n";
  out << "regime=" << regime_name(tm.regime) << "\n";
  out << "seed=" << tm.config.seed << "\n";
  out << "hidden_dims=";
  for (std::size_t i = 0; i < tm.config.hidden_dims.size(); ++i)
    out << (i ? "," : "") << tm.config.hidden_dims[i];
  out << "\n";
  out << "embed_dim=" << tm.config.embed_dim << "\n";
  out << "epochs=" << tm.config.epochs << "\n";
  out << "steps_per_epoch=" << tm.config.steps_per_epoch << "\n";
  out << "lr=" << fmt_double(tm.config.lr) << "\n";
  out << "lambda=" << fmt_double(tm.config.lambda) << "\n";
  out << "p=" << fmt_double(tm.config.p) << "\n";
  out << "finetune_epochs=" << tm.config.resolved_finetune_epochs() << "\n";
  out << "finetune_lr=" << fmt_double(tm.config.resolved_finetune_lr()) << "\n";
  out << "final_loss=" << fmt_double(tm.final_loss) << "\n";
  for (const auto& [k, v] : extra) out << k << "=" << v << "\n";
  return out.str();
}

}  // namespace tmps
