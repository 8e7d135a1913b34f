#include <gtest/gtest.h>

#include "oracles.hpp"
#include "reformat/linear_models.hpp"
#include "test_util.hpp"

using namespace reformat;

namespace {

LinearConfig config(Task task, Penalty p, double C, bool intercept = true) {
  LinearConfig c;
  c.task = task;
  c.penalty = p;
  c.inverse_reg_C = C;
  c.fit_intercept = intercept;
  return c;
}

/// Labels from a noisy linear rule so classes overlap.
Vector noisy_labels(Rng& rng, const Matrix& X) {
  const Vector w = testutil::random_vector(rng, X.cols());
  Vector y(X.rows());
  for (Index i = 0; i < X.rows(); ++i) y[i] = X.row(i).dot(w) + 1.5 * normal01(rng) > 0 ? 1.0 : 0.0;
  y[0] = 0.0;
  y[1] = 1.0;
  return y;
}

LinearModel at(const LinearConfig& cfg, const Vector& weights) {
  LinearModel m;
  m.config = cfg;
  m.weights = weights;
  return m;
}

}  // namespace

TEST(FitLinear, ClosedFormExample) {
  const Matrix X = Matrix::Identity(2, 2);
  const Vector y = to_eigen({1.0, 2.0});
  // Effective ridge 1/(2C) = 1.
  const auto m = fit_linear(X, y, config(Task::REGRESS, Penalty::L2, 0.5, false));
  EXPECT_NEAR(m.coef()[0], 0.5, 1e-12);
  EXPECT_NEAR(m.coef()[1], 1.0, 1e-12);
  EXPECT_EQ(m.intercept(), 0.0);
}

TEST(FitLinear, InterpolatesDeterminedSystem) {
  Rng rng(1);
  const Matrix X = testutil::random_matrix(rng, 4, 3);
  const Vector y = testutil::random_vector(rng, 4);
  const auto m = fit_linear(X, y, config(Task::REGRESS, Penalty::NONE, 1.0));
  EXPECT_LE((predict_value(m, X) - y).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FitLinear, ZeroTargetGivesZeroWeights) {
  Rng rng(2);
  const Matrix X = testutil::random_matrix(rng, 8, 3);
  for (auto p : {Penalty::L1, Penalty::L2, Penalty::NONE}) {
    const auto m = fit_linear(X, Vector::Zero(8), config(Task::REGRESS, p, 1.0));
    EXPECT_LE(m.weights.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FitLinear, RidgeMatchesClosedFormOracle) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Index n = 1 + static_cast<Index>(uniform_index(rng, 10));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 10));
    const Matrix X = testutil::random_matrix(rng, std::max<Index>(n, 2), d);
    const Vector y = testutil::random_vector(rng, X.rows());
    const double C = std::pow(10.0, -2.0 + 3.0 * uniform01(rng));
    const double lambda = 1.0 / (2.0 * C);
    const auto m0 = fit_linear(X, y, config(Task::REGRESS, Penalty::L2, C, false));
    EXPECT_LE((m0.coef() - oracle::ridge_closed_form(X, y, lambda)).cwiseAbs().maxCoeff(), 1e-6);
    Matrix Xa(X.rows(), d + 1);
    Xa << X, Vector::Ones(X.rows());
    const auto m1 = fit_linear(X, y, config(Task::REGRESS, Penalty::L2, C, true));
    EXPECT_LE((m1.weights - oracle::ridge_closed_form(Xa, y, lambda, true)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FitLinear, LassoOptimality) {
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const Matrix X = testutil::random_matrix(rng, 20, 6);
    const Vector y = X.col(0) - 2.0 * X.col(3) + 0.3 * testutil::random_vector(rng, 20);
    const auto m = fit_linear(X, y, config(Task::REGRESS, Penalty::L1, 0.05 + uniform01(rng)));
    EXPECT_TRUE(m.converged);
    EXPECT_LE(optimality_norm(X, y, m), 1e-6);
  }
}

TEST(FitLogistic, SeparableOneDimensionalAgainstGrid) {
  const Matrix X = to_eigen({-1.0, 1.0});
  const Vector y = to_eigen({0.0, 1.0});
  const auto m = fit_logistic(X, y, config(Task::CLASSIFY, Penalty::L2, 10.0));
  const Vector p = predict_proba(m, X);
  EXPECT_LT(p[0], 0.5);
  EXPECT_GT(p[1], 0.5);
  const auto g = oracle::logistic_grid_1d({-1, 1}, {0, 1}, 10.0, 0.0, 8.0, -1.0, 1.0, 1e-3);
  EXPECT_NEAR(m.coef()[0], g.w, 1e-3);
  EXPECT_NEAR(m.intercept(), g.b, 1e-3);
  EXPECT_LE(objective(X, y, m), g.value + 1e-12);
}

TEST(FitLogistic, L2GradientNormAndDescent) {
  Rng rng(5);
  for (int t = 0; t < 60; ++t) {
    const Index n = 4 + static_cast<Index>(uniform_index(rng, 40));
    const Index d = 1 + static_cast<Index>(uniform_index(rng, 12));  // covers d+1 > n
    const Matrix X = testutil::random_matrix(rng, n, d);
    const Vector y = noisy_labels(rng, X);
    const auto cfg = config(Task::CLASSIFY, Penalty::L2, std::pow(10.0, -2.0 + 3.0 * uniform01(rng)));
    const auto m = fit_logistic(X, y, cfg);
    EXPECT_TRUE(m.converged);
    EXPECT_LE(objective_gradient(X, y, m).norm(), 1e-6);
    EXPECT_LE(objective(X, y, m), objective(X, y, at(cfg, Vector::Zero(d + 1))));
  }
}

TEST(FitLogistic, GramPathMatchesPrimal) {
  Rng rng(6);
  const Matrix X = testutil::random_matrix(rng, 30, 4);
  const Vector y = noisy_labels(rng, X);
  const auto cfg = config(Task::CLASSIFY, Penalty::L2, 1.0);
  const Matrix K = X * X.transpose();
  const auto a = fit_logistic(X, y, cfg), b = fit_logistic(X, y, cfg, &K);
  EXPECT_LE((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitLogistic, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const Matrix X = testutil::random_matrix(rng, 15, 5);
    const Vector y = noisy_labels(rng, X);
    for (auto task : {Task::CLASSIFY, Task::REGRESS}) {
      const auto cfg = config(task, Penalty::L2, 0.3);
      const Vector w0 = testutil::random_vector(rng, 6);
      const Vector fd = oracle::fd_gradient([&](const Vector& w) { return objective(X, y, at(cfg, w)); }, w0);
      const Vector g = objective_gradient(X, y, at(cfg, w0));
      EXPECT_LE((g - fd).norm() / std::max(1.0, fd.norm()), 1e-6);
    }
  }
}

TEST(FitLogistic, L1ShrinksToZeroAtTinyC) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const Matrix X = testutil::random_matrix(rng, 25, 8);
    const Vector y = noisy_labels(rng, X);
    const auto m = fit_logistic(X, y, config(Task::CLASSIFY, Penalty::L1, 1e-6));
    EXPECT_LE(m.coef().cwiseAbs().maxCoeff(), 1e-3);
  }
}

TEST(FitLogistic, L1Optimality) {
  Rng rng(9);
  for (int t = 0; t < 30; ++t) {
    const Matrix X = testutil::random_matrix(rng, 30, 6);
    const Vector y = noisy_labels(rng, X);
    const auto cfg = config(Task::CLASSIFY, Penalty::L1, 0.05 + uniform01(rng));
    const auto m = fit_logistic(X, y, cfg);
    EXPECT_TRUE(m.converged);
    EXPECT_LE(optimality_norm(X, y, m), 1e-6);
    EXPECT_LE(objective(X, y, m), objective(X, y, at(cfg, Vector::Zero(7))));
  }
}

TEST(FitLogistic, Errors) {
  const Matrix X = Matrix::Ones(3, 1);
  EXPECT_THROW(fit_logistic(X, Vector::Ones(3), config(Task::CLASSIFY, Penalty::L2, 1)), DataError);
  EXPECT_THROW(fit_logistic(X, to_eigen({0.0, 2.0, 1.0}), config(Task::CLASSIFY, Penalty::L2, 1)), DataError);
  Matrix bad = X;
  bad(0, 0) = NAN;
  EXPECT_THROW(fit_logistic(bad, to_eigen({0.0, 1.0, 1.0}), config(Task::CLASSIFY, Penalty::L2, 1)), DataError);
  EXPECT_THROW(fit_logistic(X, to_eigen({0.0, 1.0, 1.0}), config(Task::CLASSIFY, Penalty::L2, 0)), ConfigError);
  EXPECT_THROW(fit_linear(X, to_eigen({0.0, 1.0, 1.0}), config(Task::CLASSIFY, Penalty::L2, 1)), ConfigError);
}

TEST(Predict, Examples) {
  const auto zero = at(config(Task::CLASSIFY, Penalty::L2, 1), Vector::Zero(3));
  Rng rng(10);
  const Matrix X = testutil::random_matrix(rng, 5, 2);
  EXPECT_EQ(predict_proba(zero, X), Vector::Constant(5, 0.5));
  auto c = at(config(Task::REGRESS, Penalty::L2, 1), to_eigen({0.0, 0.0, 3.5}));
  EXPECT_EQ(predict_value(c, X), Vector::Constant(5, 3.5));
  const auto m = at(config(Task::CLASSIFY, Penalty::L2, 1), to_eigen({1.0, -2.0, 0.1}));
  const Vector z = decision_function(m, X), p = predict_proba(m, X);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j)
      if (z[i] > z[j]) EXPECT_GT(p[i], p[j]);
  EXPECT_THROW(predict(m, testutil::random_matrix(rng, 2, 3)), ConfigError);
}

TEST(LinearModelJson, RoundTrip) {
  Rng rng(11);
  const Matrix X = testutil::random_matrix(rng, 12, 3);
  const auto m = fit_logistic(X, noisy_labels(rng, X), config(Task::CLASSIFY, Penalty::L1, 2.0));
  const auto back = linear_model_from_json(to_json(m));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.config.penalty, Penalty::L1);
  EXPECT_EQ(back.trace, m.trace);
}
