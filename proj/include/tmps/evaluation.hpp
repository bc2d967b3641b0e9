#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmps/dataset.hpp"
#include "tmps/embedding.hpp"
#include "tmps/trainers.hpp"
#include "tmps/util.hpp"

namespace tmps {

// c x c confusion counts; rows index the true class, columns the predicted.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int c = 0)
      : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

  std::int64_t& at(int true_cls, int pred_cls) {
    return counts[static_cast<std::size_t>(true_cls) * num_classes + pred_cls];
  }
  std::int64_t at(int true_cls, int pred_cls) const {
    return counts[static_cast<std::size_t>(true_cls) * num_classes + pred_cls];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

enum class InferenceRule {
  Head,          // argmax of the classifier head
  NearestAnchor  // nearest per-class centroid of target-train embeddings
};

inline const char* inference_rule_name(InferenceRule r) {
  return r == InferenceRule::Head ? "head" : "anchor";
}

inline InferenceRule parse_inference_rule(const std::string& s) {
  if (s == "head") return InferenceRule::Head;
  if (s == "anchor") return InferenceRule::NearestAnchor;
  throw std::invalid_argument("unknown inference rule '" + s + "' (expected head|anchor)");
}

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  InferenceRule rule = InferenceRule::Head;
  std::string dataset_id;
  std::string checkpoint_id;
};

// Classes that never occur and are never predicted get 0/0 ratios; those are
// defined as 0 here so a degenerate class drags the macro average down
// instead of being skipped.
inline double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw std::invalid_argument("f1_from_counts: negative count");
  const double denom = static_cast<double>(2 * tp + fp + fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

// Metrics from a finished confusion matrix. Macro F1 averages over all
// classes, including ones with no support.
inline EvalReport report_from_confusion(const ConfusionMatrix& cm) {
  EvalReport rep;
  rep.confusion = cm;
  rep.per_class.resize(cm.num_classes);
  double f1_sum = 0.0;
  for (int c = 0; c < cm.num_classes; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.num_classes; ++o) {
      if (o == c) continue;
      fn += cm.at(c, o);  // true c, predicted elsewhere
      fp += cm.at(o, c);  // predicted c, truly elsewhere
    }
    ClassMetrics& m = rep.per_class[c];
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = f1_from_counts(tp, fp, fn);
    f1_sum += m.f1;
  }
  rep.macro_f1 = cm.num_classes == 0 ? 0.0 : f1_sum / cm.num_classes;
  return rep;
}

inline EvalReport report_from_pairs(int num_classes,
                                    const std::vector<std::pair<int, int>>& true_pred) {
  ConfusionMatrix cm(num_classes);
  for (const auto& [t, p] : true_pred) {
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("report_from_pairs: label outside [0, " +
                                  std::to_string(num_classes) + ")");
    ++cm.at(t, p);
  }
  return report_from_confusion(cm);
}

// Which samples to score. TargetEval is the held-out pool the benchmark is
// about; Source exists for sanity checks (a broken run usually still
// classifies its own training domain).
enum class EvalPool { TargetEval, Source };

namespace detail {

inline int argmax_index(const std::vector<double>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;  // ties resolve to the lowest index
  return best;
}

// Per-class centroids of target-train embeddings, the reference points for
// NearestAnchor inference.
inline std::vector<std::vector<double>> anchor_centroids(const EmbeddingModel& m,
                                                         const DomainDataset& ds) {
  std::vector<std::vector<double>> cent(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) {
    const auto& pool = ds.target_train_pool[c];
    if (pool.empty())
      throw std::invalid_argument("evaluate: NearestAnchor needs target-train samples, class " +
                                  std::to_string(c) + " has none");
    cent[c].assign(m.embed_dim(), 0.0);
    for (const Sample& s : pool) {
      const std::vector<double> e = forward(m, s.features);
      for (int k = 0; k < m.embed_dim(); ++k) cent[c][k] += e[k];
    }
    for (double& v : cent[c]) v /= static_cast<double>(pool.size());
  }
  return cent;
}

}  // namespace detail

// Scores a model on one pool of the dataset. Samples are visited in class
// order, then pool order; evaluation draws no randomness.
inline EvalReport evaluate(const EmbeddingModel& model, const ClassifierHead& head,
                           const DomainDataset& ds, InferenceRule rule,
                           EvalPool pool = EvalPool::TargetEval, const std::string& dataset_id = "",
                           const std::string& checkpoint_id = "") {
  if (model.input_dim() != ds.dim)
    throw std::invalid_argument("evaluate: model expects " + std::to_string(model.input_dim()) +
                                " input dims, dataset has " + std::to_string(ds.dim));
  if (head.num_classes() != ds.num_classes)
    throw std::invalid_argument("evaluate: head has " + std::to_string(head.num_classes()) +
                                " classes, dataset has " + std::to_string(ds.num_classes));
  const ClassPools& pools = pool == EvalPool::TargetEval ? ds.target_eval_pool : ds.source_pool;
  bool any = false;
  for (const auto& cp : pools) any = any || !cp.empty();
  if (!any) throw std::invalid_argument("evaluate: evaluation pool is empty");

  std::vector<std::vector<double>> centroids;
  if (rule == InferenceRule::NearestAnchor) centroids = detail::anchor_centroids(model, ds);

  std::vector<std::pair<int, int>> pairs;
  for (int c = 0; c < ds.num_classes; ++c)
    for (const Sample& s : pools[c]) {
      int pred;
      if (rule == InferenceRule::Head) {
        pred = detail::argmax_index(classify(model, head, s.features));
      } else {
        const std::vector<double> e = forward(model, s.features);
        int best = 0;
        double best_d = 0.0;
        for (int k = 0; k < ds.num_classes; ++k) {
          double d = 0.0;
          for (int j = 0; j < model.embed_dim(); ++j) {
            const double diff = e[j] - centroids[k][j];
            d += diff * diff;
          }
          if (k == 0 || d < best_d) {  // ties resolve to the lowest index
            best = k;
            best_d = d;
          }
        }
        pred = best;
      }
      pairs.emplace_back(s.label, pred);
    }
  EvalReport rep = report_from_pairs(ds.num_classes, pairs);
  rep.rule = rule;
  rep.dataset_id = dataset_id;
  rep.checkpoint_id = checkpoint_id;
  return rep;
}

inline EvalReport evaluate(const TrainedModel& tm, const DomainDataset& ds, InferenceRule rule,
                           EvalPool pool = EvalPool::TargetEval, const std::string& dataset_id = "",
                           const std::string& checkpoint_id = "") {
  return evaluate(tm.model, tm.head, ds, rule, pool, dataset_id, checkpoint_id);
}

// --- report files ----------------------------------------------------------
//
// Metrics:   class,precision,recall,f1   one row per class, then a final
//            row  macro,,,<macro_f1>. Values carry full precision.
// Confusion: header  true,0,1,...  then one row per true class with raw
//            counts.

inline std::string eval_report_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "class,precision,recall,f1\n";
  for (std::size_t c = 0; c < rep.per_class.size(); ++c)
    out << c << ',' << fmt_double(rep.per_class[c].precision) << ','
        << fmt_double(rep.per_class[c].recall) << ',' << fmt_double(rep.per_class[c].f1) << "\n";
  out << "macro,,," << fmt_double(rep.macro_f1) << "\n";
  return out.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true";
  for (int c = 0; c < cm.num_classes; ++c) out << ',' << c;
  out << "\n";
  for (int t = 0; t < cm.num_classes; ++t) {
    out << t;
    for (int p = 0; p < cm.num_classes; ++p) out << ',' << cm.at(t, p);
    out << "\n";
  }
  return out.str();
}

inline void write_eval_report(const std::string& path, const EvalReport& rep) {
  write_text_file(path, eval_report_csv(rep));
}

inline void write_confusion(const std::string& path, const ConfusionMatrix& cm) {
  write_text_file(path, confusion_csv(cm));
}

// Reads back a metrics CSV written by eval_report_csv. Only the per-class F1
// column and the macro row are recovered; that is what downstream reporting
// needs.
struct LoadedEval {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_f1 = 0.0;
};

inline LoadedEval read_eval_report(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "class,precision,recall,f1")
    throw std::runtime_error(path + ": not a metrics csv");
  LoadedEval out;
  bool saw_macro = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cls, prec, rec, f1;
    std::getline(ls, cls, ',');
    std::getline(ls, prec, ',');
    std::getline(ls, rec, ',');
    std::getline(ls, f1, ',');
    double pv = 0.0, rv = 0.0, fv = 0.0;
    if (cls == "macro") {
      if (!parse_double(f1, fv))
        throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": bad macro row");
      out.macro_f1 = fv;
      saw_macro = true;
    } else {
      if (!parse_double(prec, pv) || !parse_double(rec, rv) || !parse_double(f1, fv))
        throw std::runtime_error(path + ": line " + std::to_string(lineno) + ": bad metrics row");
      out.precision.push_back(pv);
      out.recall.push_back(rv);
      out.f1.push_back(fv);
    }
  }
  if (!saw_macro) throw std::runtime_error(path + ": missing macro row");
  return out;
}

}  // namespace tmps
