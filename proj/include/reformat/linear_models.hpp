#pragma once

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"

namespace reformat {

enum class Task { CLASSIFY, REGRESS };
enum class Penalty { L1, L2, NONE };

inline std::string_view to_string(Task t) { return t == Task::CLASSIFY ? "classify" : "regress"; }
inline std::string_view to_string(Penalty p) {
  return p == Penalty::L1 ? "l1" : p == Penalty::L2 ? "l2" : "none";
}
inline Penalty parse_penalty(std::string_view s) {
  if (s == "l1" || s == "L1") return Penalty::L1;
  if (s == "l2" || s == "L2") return Penalty::L2;
  if (s == "none" || s == "NONE") return Penalty::NONE;
  throw ConfigError("unknown penalty '" + std::string(s) + "'");
}
inline Task parse_task(std::string_view s) {
  if (s == "classify") return Task::CLASSIFY;
  if (s == "regress") return Task::REGRESS;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

/// Objective: mean loss + (1/(C·n))·penalty(w), with penalty ½‖w‖² (L2) or
/// ‖w‖₁ (L1). Loss is log-loss for CLASSIFY and squared error for REGRESS.
/// The intercept is never penalized.
struct LinearConfig {
  Task task = Task::CLASSIFY;
  Penalty penalty = Penalty::L2;
  double inverse_reg_C = 1.0;
  int max_iter = 10000;
  double tol = 1e-6;
  bool fit_intercept = true;

  void validate() const {
    if (!(inverse_reg_C > 0.0)) throw ConfigError("C must be positive");
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  }

  /// Penalty weight λ = 1/(C·n).
  double lambda(Index n) const { return 1.0 / (inverse_reg_C * static_cast<double>(n)); }
};

struct LinearModel {
  Vector weights;  // feature weights followed by the intercept
  LinearConfig config;
  bool converged = false;
  double final_grad_norm = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // objective after each outer iteration

  Index dim() const { return weights.size() - 1; }
  auto coef() const { return weights.head(weights.size() - 1); }
  double intercept() const { return weights[weights.size() - 1]; }
};

namespace detail {

inline double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double mean_loss(Task task, const Vector& z, const Vector& y) {
  double s = 0.0;
  if (task == Task::CLASSIFY)
    for (Index i = 0; i < z.size(); ++i) s += log1pexp(z[i]) - y[i] * z[i];
  else
    for (Index i = 0; i < z.size(); ++i) s += (y[i] - z[i]) * (y[i] - z[i]);
  return s / static_cast<double>(z.size());
}

/// d(mean loss)/dz_i.
inline Vector loss_residual(Task task, const Vector& z, const Vector& y) {
  const double n = static_cast<double>(z.size());
  Vector r(z.size());
  for (Index i = 0; i < z.size(); ++i)
    r[i] = task == Task::CLASSIFY ? (sigmoid(z[i]) - y[i]) / n : 2.0 * (z[i] - y[i]) / n;
  return r;
}

inline double penalty_value(Penalty p, const Eigen::Ref<const Vector>& w) {
  switch (p) {
    case Penalty::L2: return 0.5 * w.squaredNorm();
    case Penalty::L1: return w.lpNorm<1>();
    case Penalty::NONE: return 0.0;
  }
  return 0.0;
}

inline void check_inputs(const Matrix& X, const Vector& y) {
  if (X.rows() != y.size()) throw ConfigError("X rows and y length differ");
  if (X.rows() < 2) throw DataError("need at least 2 samples");
  if (!X.allFinite()) throw DataError("X contains non-finite values");
  if (!y.allFinite()) throw DataError("y contains non-finite values");
}

/// Minimum-norm subgradient of the full objective (features then intercept).
inline Vector optimality_vector(const LinearConfig& cfg, const Vector& grad_loss, const Vector& w, double lambda) {
  const Index d = w.size() - 1;
  Vector g = grad_loss;
  for (Index j = 0; j < d; ++j) {
    switch (cfg.penalty) {
      case Penalty::L2: g[j] += lambda * w[j]; break;
      case Penalty::NONE: break;
      case Penalty::L1:
        if (w[j] != 0.0) g[j] += lambda * (w[j] > 0 ? 1.0 : -1.0);
        else g[j] = std::copysign(std::max(0.0, std::abs(g[j]) - lambda), g[j]);
        break;
    }
  }
  if (!cfg.fit_intercept) g[d] = 0.0;
  return g;
}

}  // namespace detail

/// Objective at the model's weights.
inline double objective(const Matrix& X, const Vector& y, const LinearModel& m) {
  const Vector z = (X * m.coef()).array() + m.intercept();
  return detail::mean_loss(m.config.task, z, y) +
         m.config.lambda(X.rows()) * detail::penalty_value(m.config.penalty, m.coef());
}

/// Gradient of the smooth part (mean loss + L2 term when present), length d+1.
inline Vector objective_gradient(const Matrix& X, const Vector& y, const LinearModel& m) {
  const Vector z = (X * m.coef()).array() + m.intercept();
  const Vector r = detail::loss_residual(m.config.task, z, y);
  Vector g(X.cols() + 1);
  g.head(X.cols()) = X.transpose() * r;
  if (m.config.penalty == Penalty::L2) g.head(X.cols()) += m.config.lambda(X.rows()) * m.coef();
  g[X.cols()] = m.config.fit_intercept ? r.sum() : 0.0;
  return g;
}

/// Norm of the minimum-norm subgradient at the model's weights.
inline double optimality_norm(const Matrix& X, const Vector& y, const LinearModel& m) {
  const Vector z = (X * m.coef()).array() + m.intercept();
  const Vector r = detail::loss_residual(m.config.task, z, y);
  Vector g(X.cols() + 1);
  g.head(X.cols()) = X.transpose() * r;
  g[X.cols()] = r.sum();
  return detail::optimality_vector(m.config, g, m.weights, m.config.lambda(X.rows())).norm();
}

namespace detail {

/// Damped Newton on the primal (d+1 unknowns) for smooth objectives.
inline void newton_primal(const Matrix& X, const Vector& y, LinearModel& m) {
  const auto& cfg = m.config;
  const Index n = X.rows(), d = X.cols();
  const double lambda = cfg.penalty == Penalty::L2 ? cfg.lambda(n) : 0.0;
  const Index k = cfg.fit_intercept ? d + 1 : d;

  auto eval = [&](const Vector& w) {
    const Vector z = (X * w.head(d)).array() + w[d];
    return mean_loss(cfg.task, z, y) + 0.5 * lambda * w.head(d).squaredNorm();
  };

  double f = eval(m.weights);
  for (m.iterations = 0; m.iterations < cfg.max_iter; ++m.iterations) {
    const Vector z = (X * m.coef()).array() + m.intercept();
    const Vector r = loss_residual(cfg.task, z, y);
    Vector g(k);
    g.head(d) = X.transpose() * r + lambda * m.coef();
    if (cfg.fit_intercept) g[d] = r.sum();
    m.final_grad_norm = g.norm();
    if (m.final_grad_norm <= cfg.tol) {
      m.converged = true;
      return;
    }
    Vector curv(n);
    for (Index i = 0; i < n; ++i) {
      if (cfg.task == Task::CLASSIFY) {
        const double p = sigmoid(z[i]);
        curv[i] = p * (1.0 - p) / static_cast<double>(n);
      } else {
        curv[i] = 2.0 / static_cast<double>(n);
      }
    }
    Matrix H(k, k);
    const Matrix WX = curv.asDiagonal() * X;
    H.topLeftCorner(d, d).noalias() = X.transpose() * WX;
    H.topLeftCorner(d, d).diagonal().array() += lambda;
    if (cfg.fit_intercept) {
      H.col(d).head(d) = WX.colwise().sum().transpose();
      H.row(d).head(d) = H.col(d).head(d).transpose();
      H(d, d) = curv.sum();
    }
    Vector step;
    double damping = 0.0;
    const double scale = std::max(1e-300, H.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 30; ++attempt) {
      Matrix Hd = H;
      Hd.diagonal().array() += damping;
      Eigen::LDLT<Matrix> ldlt(Hd);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        step = -ldlt.solve(g);
        if (step.allFinite() && step.dot(g) < 0) break;
      }
      damping = damping == 0.0 ? 1e-12 * scale : damping * 10.0;
      step.resize(0);
    }
    if (step.size() == 0) throw NumericalError("Newton system could not be solved");

    Vector full_step = Vector::Zero(d + 1);
    full_step.head(k) = step;
    const double slope = step.dot(g);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand = m.weights + t * full_step;
      const double fc = eval(cand);
      if (fc <= f + 1e-4 * t * slope) {
        m.weights = cand;
        f = fc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    m.trace.push_back(f);
    if (!accepted) break;  // no further progress at machine precision
  }
  const Vector z = (X * m.coef()).array() + m.intercept();
  const Vector r = loss_residual(cfg.task, z, y);
  Vector g(k);
  g.head(d) = X.transpose() * r + lambda * m.coef();
  if (cfg.fit_intercept) g[d] = r.sum();
  m.final_grad_norm = g.norm();
  m.converged = m.final_grad_norm <= cfg.tol;
}

/// L2 logistic regression in representer form w = Xᵀα, for d > n. `K` is
/// X·Xᵀ. Returns α (length n) with the intercept stored in m.
inline Vector newton_logistic_dual(const Matrix& K, const Vector& y, LinearModel& m) {
  const auto& cfg = m.config;
  const Index n = K.rows();
  const double lambda = cfg.lambda(n);
  const Index k = cfg.fit_intercept ? n + 1 : n;
  Vector alpha = Vector::Zero(n);
  double b = 0.0;

  auto eval = [&](const Vector& a, double bb, Vector* z_out) {
    const Vector Ka = K * a;
    const Vector z = Ka.array() + bb;
    if (z_out) *z_out = z;
    return mean_loss(Task::CLASSIFY, z, y) + 0.5 * lambda * a.dot(Ka);
  };

  Vector z;
  double f = eval(alpha, b, &z);
  for (m.iterations = 0; m.iterations < cfg.max_iter; ++m.iterations) {
    const Vector r = loss_residual(Task::CLASSIFY, z, y);
    const Vector v = r + lambda * alpha;  // primal gradient is Xᵀv
    const double gb = cfg.fit_intercept ? r.sum() : 0.0;
    m.final_grad_norm = std::sqrt(std::max(0.0, v.dot(K * v)) + gb * gb);
    if (m.final_grad_norm <= cfg.tol) {
      m.converged = true;
      break;
    }
    Vector curv(n);
    for (Index i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      curv[i] = p * (1.0 - p) / static_cast<double>(n);
    }
    Matrix A(k, k);
    A.topLeftCorner(n, n).noalias() = curv.asDiagonal() * K;
    A.topLeftCorner(n, n).diagonal().array() += lambda;
    Vector rhs(k);
    rhs.head(n) = -v;
    if (cfg.fit_intercept) {
      A.col(n).head(n) = curv;
      A.row(n).head(n) = (K * curv).transpose();
      A(n, n) = curv.sum();
      rhs[n] = -gb;
    }
    const Vector step = Eigen::PartialPivLU<Matrix>(A).solve(rhs);
    if (!step.allFinite()) throw NumericalError("dual Newton step is not finite");
    const Vector da = step.head(n);
    const double db = cfg.fit_intercept ? step[n] : 0.0;
    // Directional derivative of the objective along (Xᵀda, db).
    const double slope = v.dot(K * da) + gb * db;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vector zc;
      const double fc = eval(alpha + t * da, b + t * db, &zc);
      if (fc <= f + 1e-4 * t * std::min(slope, 0.0)) {
        alpha += t * da;
        b += t * db;
        f = fc;
        z = zc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    m.trace.push_back(f);
    if (!accepted) break;
  }
  m.weights.resize(1);
  m.weights[0] = b;
  return alpha;
}

/// Proximal Newton with coordinate descent on the quadratic model (the
/// glmnet/newGLMNET scheme), for L1-penalized logistic regression.
inline void prox_newton_l1_logistic(const Matrix& X, const Vector& y, LinearModel& m) {
  const auto& cfg = m.config;
  const Index n = X.rows(), d = X.cols();
  const double lambda = cfg.lambda(n);
  Vector w = Vector::Zero(d);
  double b = 0.0;
  if (cfg.fit_intercept) {
    const double p = std::clamp(y.mean(), 1e-12, 1.0 - 1e-12);
    b = std::log(p / (1.0 - p));
  }
  Vector z = Vector::Constant(n, b);
  auto full_obj = [&](const Vector& zz, const Vector& ww) {
    return mean_loss(Task::CLASSIFY, zz, y) + lambda * ww.lpNorm<1>();
  };
  double f = full_obj(z, w);
  const Vector col_sq = X.colwise().squaredNorm();
  for (m.iterations = 0; m.iterations < cfg.max_iter; ++m.iterations) {
    const Vector r = loss_residual(Task::CLASSIFY, z, y);
    Vector grad(d + 1);
    grad.head(d) = X.transpose() * r;
    grad[d] = r.sum();
    Vector wb(d + 1);
    wb << w, b;
    const Vector opt = optimality_vector(cfg, grad, wb, lambda);
    m.final_grad_norm = opt.norm();
    if (m.final_grad_norm <= cfg.tol) {
      m.converged = true;
      break;
    }
    Vector curv(n);
    for (Index i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      curv[i] = std::max(p * (1.0 - p), 1e-10) / static_cast<double>(n);
    }
    // Inner coordinate descent on the quadratic model; q = X·Δw + Δb.
    Vector delta = Vector::Zero(d);
    double delta_b = 0.0;
    Vector q = Vector::Zero(n);
    const double inner_tol = std::max(1e-3 * m.final_grad_norm, 0.1 * cfg.tol);
    for (int pass = 0; pass < 100; ++pass) {
      double max_change = 0.0;
      for (Index j = 0; j < d; ++j) {
        const auto xj = X.col(j);
        const double h = (curv.array() * xj.array().square()).sum() + 1e-12;
        const double gj = grad[j] + (curv.array() * xj.array() * q.array()).sum();
        const double cur = w[j] + delta[j];
        const double u = cur - gj / h;
        const double thr = lambda / h;
        const double nxt = u > thr ? u - thr : (u < -thr ? u + thr : 0.0);
        const double step = nxt - cur;
        if (step != 0.0) {
          delta[j] += step;
          q += step * xj;
          max_change = std::max(max_change, std::abs(step) * std::sqrt(h));
        }
      }
      if (cfg.fit_intercept) {
        const double h = curv.sum() + 1e-12;
        const double gb = grad[d] + curv.dot(q);
        const double step = -gb / h;
        delta_b += step;
        q.array() += step;
        max_change = std::max(max_change, std::abs(step) * std::sqrt(h));
      }
      if (max_change <= inner_tol) break;
    }
    (void)col_sq;
    // Line search with the composite sufficient-decrease condition.
    const double l1_now = w.lpNorm<1>();
    const double pred = grad.head(d).dot(delta) + grad[d] * delta_b + lambda * ((w + delta).lpNorm<1>() - l1_now);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector wc = w + t * delta;
      const Vector zc = z + t * q;
      const double fc = full_obj(zc, wc);
      if (fc <= f + 1e-4 * t * std::min(pred, 0.0)) {
        w = wc;
        b += t * delta_b;
        z = zc;
        f = fc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    m.trace.push_back(f);
    if (!accepted) break;
  }
  m.weights.resize(d + 1);
  m.weights << w, b;
  const Vector r = loss_residual(Task::CLASSIFY, z, y);
  Vector grad(d + 1);
  grad.head(d) = X.transpose() * r;
  grad[d] = r.sum();
  m.final_grad_norm = optimality_vector(cfg, grad, m.weights, lambda).norm();
  m.converged = m.final_grad_norm <= cfg.tol;
}

/// Cyclic coordinate descent for the lasso on centred data.
inline void lasso_cd(const Matrix& Xc, const Vector& yc, LinearModel& m, Vector& w) {
  const auto& cfg = m.config;
  const Index n = Xc.rows(), d = Xc.cols();
  const double lambda = cfg.lambda(n);
  const Vector col_sq = Xc.colwise().squaredNorm();
  Vector r = yc - Xc * w;
  for (m.iterations = 0; m.iterations < cfg.max_iter; ++m.iterations) {
    for (Index j = 0; j < d; ++j) {
      if (col_sq[j] <= 0.0) continue;
      const double rho = Xc.col(j).dot(r) + col_sq[j] * w[j];
      const double thr = 0.5 * lambda * static_cast<double>(n);
      const double nxt = (rho > thr ? rho - thr : (rho < -thr ? rho + thr : 0.0)) / col_sq[j];
      const double step = nxt - w[j];
      if (step != 0.0) {
        r -= step * Xc.col(j);
        w[j] = nxt;
      }
    }
    const double mse = r.squaredNorm() / static_cast<double>(n);
    m.trace.push_back(mse + lambda * w.lpNorm<1>());
    Vector grad(d + 1);
    grad.head(d) = -2.0 / static_cast<double>(n) * (Xc.transpose() * r);
    grad[d] = 0.0;
    Vector wb(d + 1);
    wb << w, 0.0;
    m.final_grad_norm = optimality_vector(cfg, grad, wb, lambda).norm();
    if (m.final_grad_norm <= cfg.tol) {
      m.converged = true;
      ++m.iterations;
      return;
    }
  }
}

}  // namespace detail

/// Regularized logistic regression, y ∈ {0,1}. `gram`, when given, must be
/// X·Xᵀ and lets the L2 solver work in representer form.
inline LinearModel fit_logistic(const Matrix& X, const Vector& y, const LinearConfig& config,
                                const Matrix* gram = nullptr) {
  config.validate();
  if (config.task != Task::CLASSIFY) throw ConfigError("fit_logistic requires task CLASSIFY");
  detail::check_inputs(X, y);
  bool has0 = false, has1 = false;
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) has0 = true;
    else if (y[i] == 1.0) has1 = true;
    else throw DataError("logistic labels must be 0 or 1");
  }
  if (!has0 || !has1) throw DataError("logistic regression needs both classes present");

  LinearModel m;
  m.config = config;
  m.weights = Vector::Zero(X.cols() + 1);
  const Index n = X.rows(), d = X.cols();
  if (config.penalty == Penalty::L1) {
    detail::prox_newton_l1_logistic(X, y, m);
  } else if (config.penalty == Penalty::L2 && (d + 1 > n || gram != nullptr)) {
    Matrix local;
    if (!gram) {
      local.resize(n, n);
      local.setZero();
      local.selfadjointView<Eigen::Lower>().rankUpdate(X);
      local = local.selfadjointView<Eigen::Lower>();
      gram = &local;
    }
    if (gram->rows() != n || gram->cols() != n) throw ConfigError("gram matrix must be n x n");
    const Vector alpha = detail::newton_logistic_dual(*gram, y, m);
    const double b = m.weights[0];
    m.weights.resize(d + 1);
    m.weights.head(d) = X.transpose() * alpha;
    m.weights[d] = b;
    // Report the primal optimality measure.
    m.final_grad_norm = objective_gradient(X, y, m).norm();
    m.converged = m.final_grad_norm <= config.tol;
  } else {
    detail::newton_primal(X, y, m);
  }
  if (!m.weights.allFinite()) throw NumericalError("logistic fit produced non-finite weights");
  return m;
}

/// Regularized least squares. L2 and NONE are solved in closed form
/// (effective ridge λ = 1/(2C) on XᵀX), L1 by coordinate descent.
inline LinearModel fit_linear(const Matrix& X, const Vector& y, const LinearConfig& config,
                              const Matrix* gram = nullptr) {
  config.validate();
  if (config.task != Task::REGRESS) throw ConfigError("fit_linear requires task REGRESS");
  detail::check_inputs(X, y);
  const Index n = X.rows(), d = X.cols();
  LinearModel m;
  m.config = config;
  m.weights = Vector::Zero(d + 1);

  Eigen::RowVectorXd x_mean = Eigen::RowVectorXd::Zero(d);
  double y_mean = 0.0;
  if (config.fit_intercept) {
    x_mean = X.colwise().mean();
    y_mean = y.mean();
  }
  const Matrix Xc = X.rowwise() - x_mean;
  const Vector yc = y.array() - y_mean;
  Vector w = Vector::Zero(d);

  switch (config.penalty) {
    case Penalty::L2: {
      const double ridge = 1.0 / (2.0 * config.inverse_reg_C);
      if (d <= n && gram == nullptr) {
        Matrix A = Xc.transpose() * Xc;
        A.diagonal().array() += ridge;
        w = Eigen::LDLT<Matrix>(A).solve(Xc.transpose() * yc);
      } else {
        Matrix Kc;
        if (gram) {
          if (gram->rows() != n || gram->cols() != n) throw ConfigError("gram matrix must be n x n");
          // Centre the supplied Gram matrix to match Xc·Xcᵀ.
          const Vector row_mean = gram->rowwise().mean();
          const double all_mean = row_mean.mean();
          Kc = *gram;
          if (config.fit_intercept) {
            Kc.colwise() -= row_mean;
            Kc.rowwise() -= row_mean.transpose();
            Kc.array() += all_mean;
          }
        } else {
          Kc = Xc * Xc.transpose();
        }
        Kc.diagonal().array() += ridge;
        const Vector alpha = Eigen::LDLT<Matrix>(Kc).solve(yc);
        w = Xc.transpose() * alpha;
      }
      m.iterations = 1;
      break;
    }
    case Penalty::NONE:
      w = Eigen::CompleteOrthogonalDecomposition<Matrix>(Xc).solve(yc);
      m.iterations = 1;
      break;
    case Penalty::L1:
      detail::lasso_cd(Xc, yc, m, w);
      break;
  }
  m.weights.head(d) = w;
  m.weights[d] = config.fit_intercept ? y_mean - x_mean.dot(w) : 0.0;
  if (!m.weights.allFinite()) throw NumericalError("linear fit produced non-finite weights");
  if (config.penalty != Penalty::L1) {
    m.final_grad_norm = optimality_norm(X, y, m);
    // Closed-form solutions are exact up to rounding; report convergence
    // relative to the problem scale.
    const double scale = std::max(1.0, 2.0 * (X.transpose() * y).norm() / static_cast<double>(n));
    m.converged = m.final_grad_norm <= config.tol * scale;
    m.trace.push_back(objective(X, y, m));
  } else {
    m.final_grad_norm = optimality_norm(X, y, m);
    m.converged = m.final_grad_norm <= config.tol;
  }
  return m;
}

inline LinearModel fit(const Matrix& X, const Vector& y, const LinearConfig& config, const Matrix* gram = nullptr) {
  return config.task == Task::CLASSIFY ? fit_logistic(X, y, config, gram) : fit_linear(X, y, config, gram);
}

inline Vector decision_function(const LinearModel& m, const Matrix& X) {
  if (X.cols() != m.dim())
    throw ConfigError("feature dimension " + std::to_string(X.cols()) + " does not match model dimension " +
                      std::to_string(m.dim()));
  return (X * m.coef()).array() + m.intercept();
}

inline Vector predict_proba(const LinearModel& m, const Matrix& X) {
  Vector z = decision_function(m, X);
  for (Index i = 0; i < z.size(); ++i) z[i] = detail::sigmoid(z[i]);
  return z;
}

inline Vector predict_value(const LinearModel& m, const Matrix& X) { return decision_function(m, X); }

/// Class probability for CLASSIFY, value for REGRESS.
inline Vector predict(const LinearModel& m, const Matrix& X) {
  return m.config.task == Task::CLASSIFY ? predict_proba(m, X) : predict_value(m, X);
}

// ---- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const LinearConfig& c) {
  return {{"task", std::string(to_string(c.task))},
          {"penalty", std::string(to_string(c.penalty))},
          {"C", c.inverse_reg_C},
          {"max_iter", c.max_iter},
          {"tol", c.tol},
          {"fit_intercept", c.fit_intercept}};
}

inline LinearConfig linear_config_from_json(const nlohmann::json& j) {
  LinearConfig c;
  c.task = parse_task(j.at("task").get<std::string>());
  c.penalty = parse_penalty(j.at("penalty").get<std::string>());
  c.inverse_reg_C = j.at("C").get<double>();
  c.max_iter = j.value("max_iter", 10000);
  c.tol = j.value("tol", 1e-6);
  c.fit_intercept = j.value("fit_intercept", true);
  return c;
}

inline nlohmann::json to_json(const LinearModel& m) {
  return {{"kind", "linear"},
          {"config", to_json(m.config)},
          {"weights", to_std(m.weights)},
          {"converged", m.converged},
          {"final_grad_norm", m.final_grad_norm},
          {"iterations", m.iterations},
          {"trace", m.trace}};
}

inline LinearModel linear_model_from_json(const nlohmann::json& j) {
  LinearModel m;
  m.config = linear_config_from_json(j.at("config"));
  m.weights = to_eigen(j.at("weights").get<std::vector<double>>());
  m.converged = j.value("converged", false);
  m.final_grad_norm = j.value("final_grad_norm", 0.0);
  m.iterations = j.value("iterations", 0);
  m.trace = j.value("trace", std::vector<double>{});
  return m;
}

}  // namespace reformat
