#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tmps {

// Similarity of a query embedding to one anchor embedding per class,
// expressed as a probability distribution: a softmax over negative squared
// Euclidean distances. probs[i] is large when the query sits close to class
// i's anchor.
struct SimilarityDistribution {
  std::vector<double> probs;
  std::vector<double> squared_distances;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline void check_similarity_inputs(std::span<const double> query,
                                    const std::vector<std::vector<double>>& anchors) {
  if (anchors.size() < 2)
    throw std::invalid_argument("similarity_distribution: need at least 2 anchors, got " +
                                std::to_string(anchors.size()));
  for (std::size_t i = 0; i < anchors.size(); ++i)
    if (anchors[i].size() != query.size())
      throw std::invalid_argument("similarity_distribution: anchor " + std::to_string(i) +
                                  " has " + std::to_string(anchors[i].size()) +
                                  " dims, query has " + std::to_string(query.size()));
  auto finite = [](std::span<const double> v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (!finite(query)) throw std::invalid_argument("similarity_distribution: non-finite query");
  for (std::size_t i = 0; i < anchors.size(); ++i)
    if (!finite(anchors[i]))
      throw std::invalid_argument("similarity_distribution: non-finite anchor " +
                                  std::to_string(i));
}

}  // namespace detail

// The smallest squared distance is subtracted before exponentiation, so the
// largest exponent is exactly 0 and huge distances cannot overflow. The
// shift cancels in the normalization, leaving the distribution unchanged.
inline SimilarityDistribution similarity_distribution(
    std::span<const double> query, const std::vector<std::vector<double>>& anchors) {
  detail::check_similarity_inputs(query, anchors);
  SimilarityDistribution out;
  out.squared_distances.resize(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i)
    out.squared_distances[i] = detail::squared_distance(query, anchors[i]);
  double shift = out.squared_distances[0];
  for (double d : out.squared_distances) shift = std::min(shift, d);
  out.probs.resize(anchors.size());
  double z = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    out.probs[i] = std::exp(-(out.squared_distances[i] - shift));
    z += out.probs[i];
  }
  for (double& p : out.probs) p /= z;
  return out;
}

// Cross-entropy of the similarity distribution against the true class, with
// closed-form gradients for the query and every anchor.
struct MetricLossValue {
  double loss = 0.0;
  std::vector<double> grad_query;
  std::vector<std::vector<double>> grad_anchors;
};

// With p = probs and t the one-hot true class:
//   dL/d(query)     = sum_i 2 (p_i - t_i) (anchor_i - query)
//   dL/d(anchor_i)  =       2 (p_i - t_i) (query - anchor_i)
// The loss itself is evaluated in shifted form, (d_t^2 - min_d2) + ln Z, so
// it stays finite even when probs[true_class] underflows to zero.
inline MetricLossValue metric_loss(std::span<const double> query,
                                   const std::vector<std::vector<double>>& anchors,
                                   int true_class) {
  if (true_class < 0 || true_class >= static_cast<int>(anchors.size()))
    throw std::invalid_argument("metric_loss: true_class " + std::to_string(true_class) +
                                " outside [0, " + std::to_string(anchors.size()) + ")");
  const SimilarityDistribution sim = similarity_distribution(query, anchors);

  double shift = sim.squared_distances[0];
  for (double d : sim.squared_distances) shift = std::min(shift, d);
  double z = 0.0;
  for (double d : sim.squared_distances) z += std::exp(-(d - shift));

  MetricLossValue out;
  out.loss = (sim.squared_distances[true_class] - shift) + std::log(z);
  out.grad_query.assign(query.size(), 0.0);
  out.grad_anchors.resize(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const double coef = 2.0 * (sim.probs[i] - (static_cast<int>(i) == true_class ? 1.0 : 0.0));
    out.grad_anchors[i].resize(query.size());
    for (std::size_t k = 0; k < query.size(); ++k) {
      const double diff = anchors[i][k] - query[k];
      out.grad_query[k] += coef * diff;
      out.grad_anchors[i][k] = -coef * diff;
    }
  }
  return out;
}

}  // namespace tmps
