#pragma once

#include "msfs/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace msfs {

struct SolverParams {
  double alpha = 0.0;  // manifold weight
  double beta = 1.0;   // joint sparsity weight
  double rho = 0.5;    // l2,1 share of the joint penalty; 1 - rho goes to Frobenius
  int max_iters = 50;
  double tol = 1e-6;
  double epsilon = 1e-64;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw UsageError("alpha must be >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("beta must be > 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("rho must lie in [0, 1]");
    if (max_iters < 1) throw UsageError("max_iters must be >= 1");
    if (!(tol > 0.0)) throw UsageError("tol must be > 0");
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be > 0");
  }
};

inline nlohmann::ordered_json to_json(const SolverParams& p) {
  return {{"alpha", p.alpha},         {"beta", p.beta}, {"rho", p.rho},
          {"max_iters", p.max_iters}, {"tol", p.tol},   {"epsilon", p.epsilon}};
}

struct SolverState {
  Matrix w;
  RowVector b;
  Vector u_diag;        // U recomputed from the final W
  Vector u_solve_diag;  // U that produced the final W
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

struct FeatureRanking {
  Vector scores;
  std::vector<Index> order;
};

inline double l21_norm(const Matrix& w) { return w.rowwise().norm().sum(); }

namespace detail {

inline void check_shapes(const Matrix& x, const Matrix& y, const Matrix& l, const Matrix& w) {
  if (x.rows() != y.rows()) throw UsageError("X and Y row counts differ");
  if (l.rows() != x.rows() || l.cols() != x.rows()) throw UsageError("L must be n x n");
  if (w.rows() != x.cols() || w.cols() != y.cols()) throw UsageError("W must be p x m");
}

// Index of the first non-positive pivot met by a plain Cholesky sweep.
inline Index failing_pivot(const Matrix& a) {
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) return j;
    l(j, j) = std::sqrt(d);
    for (Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return -1;
}

inline Matrix spd_solve(const Matrix& a, const Matrix& rhs) {
  if (!a.allFinite()) throw SolverError("system matrix has non-finite entries");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw SolverError("Cholesky factorization failed at pivot " +
                      std::to_string(failing_pivot(a)));
  }
  Matrix sol = llt.solve(rhs);
  const double scale = a.norm() * sol.norm() + rhs.norm();
  const double resid = (a * sol - rhs).norm();
  if (!sol.allFinite() || resid > 1e-8 * std::max(scale, 1e-300)) {
    throw SolverError("linear solve residual " + std::to_string(resid) +
                      " exceeds tolerance (scale " + std::to_string(scale) + ")");
  }
  return sol;
}

}  // namespace detail

/// b = (1/n)(1'Y - 1'XW): the bias minimizing the data loss for fixed W.
inline RowVector update_b(const Matrix& x, const Matrix& y, const Matrix& w) {
  return (y - x * w).colwise().mean();
}

/// U_ii = 1 / max(2 ||w_i||, epsilon).
inline Vector update_u(const Matrix& w, double epsilon) {
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be > 0");
  Vector u(w.rows());
  for (Index i = 0; i < w.rows(); ++i) u(i) = 1.0 / std::max(2.0 * w.row(i).norm(), epsilon);
  return u;
}

/// Objective with the exact l2,1 norm:
///   1/2 ||XW + 1b - Y||_F^2 + alpha/2 tr(W'X'LXW)
///   + beta/2 (rho ||W||_{2,1} + (1 - rho) ||W||_F^2)
/// The beta > 0 guard is not applied here so that degenerate settings can be
/// evaluated.
inline double objective(const Matrix& x, const Matrix& y, const Matrix& l, const Matrix& w,
                        const RowVector& b, const SolverParams& p) {
  detail::check_shapes(x, y, l, w);
  if (b.size() != y.cols()) throw UsageError("b must be 1 x m");
  const Matrix xw = x * w;
  const double data = 0.5 * ((xw.rowwise() + b) - y).squaredNorm();
  const double manifold = 0.5 * p.alpha * (xw.transpose() * l * xw).trace();
  const double penalty =
      0.5 * p.beta * (p.rho * l21_norm(w) + (1.0 - p.rho) * w.squaredNorm());
  return data + manifold + penalty;
}

/// The same objective expanded into traces term by term, with the l2,1 norm
/// written through the reweighting matrix: ||W||_{2,1} = 2 tr(W'UW) for
/// U_ii = 1 / (2 ||w_i||) on nonzero rows.
inline double objective_expanded(const Matrix& x, const Matrix& y, const Matrix& l,
                                 const Matrix& w, const RowVector& b, const SolverParams& p) {
  detail::check_shapes(x, y, l, w);
  const auto n = static_cast<double>(x.rows());
  const Matrix xw = x * w;
  const Vector ones = Vector::Ones(x.rows());
  const Matrix one_b = ones * b;
  Vector u = Vector::Zero(w.rows());
  for (Index i = 0; i < w.rows(); ++i) {
    const double r = w.row(i).norm();
    if (r > 0.0) u(i) = 1.0 / (2.0 * r);
  }
  double f = 0.5 * (w.transpose() * x.transpose() * xw).trace();
  f += (b.transpose() * ones.transpose() * xw).trace();
  f -= (y.transpose() * xw).trace();
  f += 0.5 * n * b.squaredNorm();
  f -= (y.transpose() * one_b).trace();
  f += 0.5 * y.squaredNorm();
  f += 0.5 * p.alpha * (w.transpose() * x.transpose() * l * xw).trace();
  f += 0.5 * p.beta * p.rho * 2.0 * (w.transpose() * u.asDiagonal() * w).trace();
  f += 0.5 * p.beta * (1.0 - p.rho) * (w.transpose() * w).trace();
  return f;
}

/// Precomputed pieces of the W update that do not change across iterations.
class WUpdate {
 public:
  WUpdate(const Matrix& x, const Matrix& y, const Matrix& l, const SolverParams& p)
      : beta_rho_(p.beta * p.rho) {
    if (x.rows() != y.rows()) throw UsageError("X and Y row counts differ");
    if (l.rows() != x.rows() || l.cols() != x.rows()) throw UsageError("L must be n x n");
    const Matrix xc = x.rowwise() - x.colwise().mean();
    base_ = xc.transpose() * xc;
    if (p.alpha != 0.0) base_ += p.alpha * (x.transpose() * l * x);
    base_.diagonal().array() += p.beta * (1.0 - p.rho);
    rhs_ = xc.transpose() * y;
  }

  /// Solves (X'(H + alpha L)X + beta(1-rho) I + beta rho U) W = X'HY.
  Matrix operator()(const Vector& u_diag) const {
    if (u_diag.size() != base_.rows()) throw UsageError("U must be p x p");
    Matrix a = base_;
    a.diagonal() += beta_rho_ * u_diag;
    return detail::spd_solve(a, rhs_);
  }

 private:
  Matrix base_;
  Matrix rhs_;
  double beta_rho_;
};

inline Matrix update_w(const Matrix& x, const Matrix& y, const Matrix& l, const Vector& u_diag,
                       const SolverParams& p) {
  return WUpdate(x, y, l, p)(u_diag);
}

/// Alternates W and U updates from U = I until the relative objective change
/// drops below tol or max_iters is reached. Throws SolverError if the
/// objective ever increases beyond rounding slack.
inline SolverState fit(const Matrix& x, const Matrix& y, const Matrix& l, const SolverParams& p,
                       const Vector* u_init = nullptr) {
  p.validate();
  const WUpdate solve_w(x, y, l, p);
  SolverState st;
  Vector u = u_init ? *u_init : Vector::Ones(x.cols());
  for (int t = 0; t < p.max_iters; ++t) {
    st.w = solve_w(u);
    st.u_solve_diag = u;
    u = update_u(st.w, p.epsilon);
    st.b = update_b(x, y, st.w);
    const double f = objective(x, y, l, st.w, st.b, p);
    st.iterations = t + 1;
    if (!st.objective_trace.empty()) {
      const double prev = st.objective_trace.back();
      if (f > prev + 1e-9 * std::max(1.0, std::abs(prev))) {
        throw SolverError("objective increased from " + std::to_string(prev) + " to " +
                          std::to_string(f) + " at iteration " + std::to_string(t + 1));
      }
      st.objective_trace.push_back(f);
      if (std::abs(prev - f) / std::max(std::abs(prev), 1.0) < p.tol) {
        st.converged = true;
        break;
      }
    } else {
      st.objective_trace.push_back(f);
    }
  }
  st.u_diag = u;
  return st;
}

/// Scores are row norms of W; order is descending score, ties by lower index.
inline FeatureRanking rank_features(const Matrix& w) {
  FeatureRanking r;
  r.scores = w.rowwise().norm();
  r.order.resize(static_cast<std::size_t>(w.rows()));
  std::iota(r.order.begin(), r.order.end(), Index{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](Index a, Index b) { return r.scores(a) > r.scores(b); });
  return r;
}

inline FeatureRanking rank_features(const SolverState& st) { return rank_features(st.w); }

inline std::vector<Index> select_top(const FeatureRanking& r, Index l) {
  if (l < 1 || l > static_cast<Index>(r.order.size())) {
    throw UsageError("feature count " + std::to_string(l) + " outside [1, " +
                     std::to_string(r.order.size()) + "]");
  }
  return {r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(l)};
}

inline nlohmann::ordered_json selection_json(const SolverState& st, const FeatureRanking& r,
                                             const std::vector<Index>& selected,
                                             const SolverParams& p) {
  std::vector<double> scores(r.scores.data(), r.scores.data() + r.scores.size());
  return {{"selected_indices", selected},
          {"scores", scores},
          {"objective_trace", st.objective_trace},
          {"iterations", st.iterations},
          {"converged", st.converged},
          {"params", to_json(p)}};
}

}  // namespace msfs
