#include "tmps/metric_loss.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tmps/rng.hpp"

namespace {

std::vector<std::vector<double>> random_anchors(tmps::Rng& rng, int c, int dim, double scale) {
  std::vector<std::vector<double>> a(c, std::vector<double>(dim));
  for (auto& v : a)
    for (double& x : v) x = scale * rng.normal();
  return a;
}

std::vector<double> random_vec(tmps::Rng& rng, int dim, double scale) {
  std::vector<double> v(dim);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

TEST(Similarity, ProbsNormalizedPositiveAndAlignedWithDistances) {
  tmps::Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(6));
    const int dim = 1 + static_cast<int>(rng.uniform_index(8));
    const auto anchors = random_anchors(rng, c, dim, 2.0);
    const auto query = random_vec(rng, dim, 2.0);
    const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
    ASSERT_EQ(sim.probs.size(), static_cast<std::size_t>(c));
    double sum = 0.0;
    for (double p : sim.probs) {
      EXPECT_GT(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    // Strictly smaller squared distance must give strictly larger mass.
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j)
        if (sim.squared_distances[i] < sim.squared_distances[j])
          EXPECT_GT(sim.probs[i], sim.probs[j]);
  }
}

TEST(Similarity, MatchesDirectFormulaOnModerateInputs) {
  tmps::Rng rng(102);
  const auto anchors = random_anchors(rng, 4, 3, 1.0);
  const auto query = random_vec(rng, 3, 1.0);
  const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
  // Unshifted textbook form, safe at this scale.
  double z = 0.0;
  std::vector<double> direct(4);
  for (int i = 0; i < 4; ++i) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = query[k] - anchors[i][k];
      d2 += d * d;
    }
    direct[i] = std::exp(-d2);
    z += direct[i];
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(sim.probs[i], direct[i] / z, 1e-12);
}

TEST(Similarity, EquidistantAnchorsGiveUniformMass) {
  // Query at the origin, anchors on the unit axes: all distances equal.
  const std::vector<double> query = {0.0, 0.0, 0.0};
  const std::vector<std::vector<double>> anchors = {
      {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
  for (double p : sim.probs) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
}

TEST(Similarity, SurvivesHugeDistancesViaShift) {
  // Raw exp(-d2) underflows to zero for every anchor here; the shifted form
  // must still produce a normalized distribution.
  const std::vector<double> query = {1000.0, -1000.0};
  const std::vector<std::vector<double>> anchors = {{-1000.0, 1000.0}, {-1000.0, 999.0}};
  const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
  double sum = 0.0;
  for (double p : sim.probs) {
    EXPECT_TRUE(std::isfinite(p));
    sum += p;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_GT(sim.probs[1], sim.probs[0]);  // the closer of two far anchors wins
}

TEST(Similarity, SelfComparisonIsLegal) {
  const std::vector<double> query = {0.5, 0.5};
  const std::vector<std::vector<double>> anchors = {{0.5, 0.5}, {2.0, 2.0}};
  const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
  EXPECT_EQ(sim.squared_distances[0], 0.0);
  EXPECT_GT(sim.probs[0], sim.probs[1]);
  EXPECT_NEAR(sim.probs[0] + sim.probs[1], 1.0, 1e-12);
}

TEST(Similarity, InputValidation) {
  const std::vector<double> q2 = {0.0, 0.0};
  EXPECT_THROW(tmps::similarity_distribution(q2, {{1.0, 0.0}}), std::invalid_argument);
  EXPECT_THROW(tmps::similarity_distribution(q2, {{1.0}, {0.0, 1.0}}), std::invalid_argument);
  const std::vector<double> bad_query = {std::numeric_limits<double>::infinity(), 0.0};
  EXPECT_THROW(tmps::similarity_distribution(bad_query, {{1.0, 0.0}, {0.0, 1.0}}),
               std::invalid_argument);
  EXPECT_THROW(tmps::similarity_distribution(q2, {{1.0, std::nan("")}, {0.0, 1.0}}),
               std::invalid_argument);
}

TEST(MetricLoss, EqualsNegLogTrueProbOnModerateInputs) {
  tmps::Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(5));
    const int dim = 1 + static_cast<int>(rng.uniform_index(6));
    const auto anchors = random_anchors(rng, c, dim, 1.5);
    const auto query = random_vec(rng, dim, 1.5);
    const int t = static_cast<int>(rng.uniform_index(c));
    const tmps::SimilarityDistribution sim = tmps::similarity_distribution(query, anchors);
    const tmps::MetricLossValue ml = tmps::metric_loss(query, anchors, t);
    EXPECT_NEAR(ml.loss, -std::log(sim.probs[t]), 1e-12);
    // Mathematically positive for c >= 2; in floats it collapses to exactly
    // zero once every rival's mass rounds away (distance gap ~37), so demand
    // strict positivity only while the distribution still sees a rival.
    EXPECT_GE(ml.loss, 0.0);
    if (sim.probs[t] < 1.0) EXPECT_GT(ml.loss, 0.0);
  }
}

TEST(MetricLoss, StaysFiniteWhenTrueProbUnderflows) {
  // The true anchor is ~sqrt(2000) away while a rival is on top of the
  // query; probs[true] underflows, but the shifted loss is exact and finite.
  const std::vector<double> query = {0.0};
  const std::vector<std::vector<double>> anchors = {{0.0}, {45.0}};
  const tmps::MetricLossValue ml = tmps::metric_loss(query, anchors, 1);
  EXPECT_TRUE(std::isfinite(ml.loss));
  EXPECT_NEAR(ml.loss, 45.0 * 45.0, 1e-9);  // ln Z adds ~exp(-2025), invisible
}

TEST(MetricLoss, GradientsMatchCentralFiniteDifferences) {
  tmps::Rng rng(104);
  const double h = 1e-5;
  for (int trial = 0; trial < 25; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(4));
    const int dim = 1 + static_cast<int>(rng.uniform_index(5));
    auto anchors = random_anchors(rng, c, dim, 1.0);
    auto query = random_vec(rng, dim, 1.0);
    const int t = static_cast<int>(rng.uniform_index(c));
    const tmps::MetricLossValue ml = tmps::metric_loss(query, anchors, t);
    auto loss_at = [&]() { return tmps::metric_loss(query, anchors, t).loss; };
    for (int k = 0; k < dim; ++k) {
      const double keep = query[k];
      query[k] = keep + h;
      const double up = loss_at();
      query[k] = keep - h;
      const double down = loss_at();
      query[k] = keep;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(ml.grad_query[k], numeric, 1e-6 + 1e-4 * std::abs(numeric));
    }
    for (int i = 0; i < c; ++i)
      for (int k = 0; k < dim; ++k) {
        const double keep = anchors[i][k];
        anchors[i][k] = keep + h;
        const double up = loss_at();
        anchors[i][k] = keep - h;
        const double down = loss_at();
        anchors[i][k] = keep;
        const double numeric = (up - down) / (2 * h);
        EXPECT_NEAR(ml.grad_anchors[i][k], numeric, 1e-6 + 1e-4 * std::abs(numeric));
      }
  }
}

TEST(MetricLoss, TranslationInvarianceMakesGradientsSumToZero) {
  // The loss depends only on query - anchor differences, so shifting
  // everything together changes nothing: the gradients must cancel.
  tmps::Rng rng(105);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng.uniform_index(5));
    const int dim = 1 + static_cast<int>(rng.uniform_index(6));
    const auto anchors = random_anchors(rng, c, dim, 2.0);
    const auto query = random_vec(rng, dim, 2.0);
    const tmps::MetricLossValue ml =
        tmps::metric_loss(query, anchors, static_cast<int>(rng.uniform_index(c)));
    for (int k = 0; k < dim; ++k) {
      double total = ml.grad_query[k];
      for (int i = 0; i < c; ++i) total += ml.grad_anchors[i][k];
      EXPECT_NEAR(total, 0.0, 1e-12);
    }
  }
}

TEST(MetricLoss, GradientDescentOnQueryReducesLoss) {
  // Frozen instance; small steps on the query alone should walk the loss
  // down monotonically and finish closer to the true-class anchor.
  tmps::Rng rng(12345);
  const auto anchors = random_anchors(rng, 4, 3, 2.0);
  auto query = random_vec(rng, 3, 2.0);
  const int t = 2;
  auto dist_to_true = [&]() {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = query[k] - anchors[t][k];
      d2 += d * d;
    }
    return d2;
  };
  const double start_dist = dist_to_true();
  const double start_loss = tmps::metric_loss(query, anchors, t).loss;
  double prev = start_loss;
  const double lr = 1e-2;
  for (int step = 0; step < 100; ++step) {
    const tmps::MetricLossValue ml = tmps::metric_loss(query, anchors, t);
    for (int k = 0; k < 3; ++k) query[k] -= lr * ml.grad_query[k];
    const double cur = tmps::metric_loss(query, anchors, t).loss;
    EXPECT_LE(cur, prev + 1e-12) << "step " << step;
    prev = cur;
  }
  EXPECT_LT(prev, start_loss);
  EXPECT_LT(dist_to_true(), start_dist);
}

TEST(MetricLoss, RejectsBadTrueClass) {
  const std::vector<double> q = {0.0};
  const std::vector<std::vector<double>> anchors = {{1.0}, {2.0}};
  EXPECT_THROW(tmps::metric_loss(q, anchors, -1), std::invalid_argument);
  EXPECT_THROW(tmps::metric_loss(q, anchors, 2), std::invalid_argument);
}

}  // namespace
