#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "adabatch/data.hpp"
#include "adabatch/error.hpp"

namespace adabatch {

enum class Model { ridge, logistic };

/// Sign inside the logistic exponent: `verbatim` is log(1 + exp(+b a^T x)),
/// `conventional` is log(1 + exp(-b a^T x)).
enum class LogisticSign { verbatim, conventional };

/// f(x) = (1/n) sum_i f_i(x), where each f_i carries the full (lambda/2)||x||^2.
///   ridge:    f_i(x) = 1/2 (a_i^T x - b_i)^2 + lambda/2 ||x||^2
///   logistic: f_i(x) = 1/2 log(1 + exp(s b_i a_i^T x)) + lambda/2 ||x||^2
struct Objective {
  Model model = Model::ridge;
  double lambda = 0.0;
  LogisticSign sign = LogisticSign::verbatim;

  double sign_factor() const { return sign == LogisticSign::verbatim ? 1.0 : -1.0; }

  /// Data-fit part of f_i as a function of the margin z = a_i^T x.
  double loss(double z, double b) const {
    if (model == Model::ridge) return 0.5 * (z - b) * (z - b);
    const double t = sign_factor() * b * z;
    const double softplus = t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    return 0.5 * softplus;
  }

  /// d loss / dz
  double loss_slope(double z, double b) const {
    if (model == Model::ridge) return z - b;
    const double s = sign_factor() * b;
    return 0.5 * s * sigmoid(s * z);
  }

  /// d^2 loss / dz^2
  double loss_curvature(double z, double b) const {
    if (model == Model::ridge) return 1.0;
    const double p = sigmoid(sign_factor() * b * z);
    return 0.5 * b * b * p * (1.0 - p);
  }

  /// Upper bound on loss_curvature over all z; L_i = bound * ||a_i||^2 + lambda.
  double curvature_bound(double b) const {
    return model == Model::ridge ? 1.0 : b * b / 8.0;
  }

  static double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  }
};

namespace detail {
inline void check_dimension(const Dataset& data, const Vector& x) {
  if (x.size() != data.cols()) {
    throw RangeError("dimension mismatch: x has " + std::to_string(x.size()) +
                     " entries, data has " + std::to_string(data.cols()) + " columns");
  }
}
}  // namespace detail

inline double value(const Objective& obj, const Dataset& data, const Vector& x) {
  detail::check_dimension(data, x);
  double acc = 0.0;
  for (int i = 0; i < data.rows(); ++i) acc += obj.loss(data.row_dot(i, x), data.label(i));
  return acc / data.rows() + 0.5 * obj.lambda * x.squaredNorm();
}

/// out = grad f_i(x); `out` must already have size d.
inline void grad_i_into(const Objective& obj, const Dataset& data, int i, const Vector& x,
                        Vector& out) {
  out = obj.lambda * x;
  data.add_row(i, obj.loss_slope(data.row_dot(i, x), data.label(i)), out);
}

inline Vector grad_i(const Objective& obj, const Dataset& data, int i, const Vector& x) {
  detail::check_dimension(data, x);
  require(i >= 0 && i < data.rows(), "example index out of range");
  Vector out(x.size());
  grad_i_into(obj, data, i, x, out);
  return out;
}

/// Gradient of f_C = (1/|C|) sum_{i in C} f_i.
inline Vector subset_grad(const Objective& obj, const Dataset& data, std::span<const int> subset,
                          const Vector& x) {
  detail::check_dimension(data, x);
  require(!subset.empty(), "subset must be non-empty");
  Vector out = Vector::Zero(x.size());
  for (const int i : subset) data.add_row(i, obj.loss_slope(data.row_dot(i, x), data.label(i)), out);
  out /= static_cast<double>(subset.size());
  out += obj.lambda * x;
  return out;
}

inline Vector grad(const Objective& obj, const Dataset& data, const Vector& x) {
  detail::check_dimension(data, x);
  Vector out = Vector::Zero(x.size());
  for (int i = 0; i < data.rows(); ++i) {
    data.add_row(i, obj.loss_slope(data.row_dot(i, x), data.label(i)), out);
  }
  out /= static_cast<double>(data.rows());
  out += obj.lambda * x;
  return out;
}

struct PowerIterationOptions {
  double relative_tolerance = 1e-10;
  int max_iterations = 10000;
  std::uint64_t seed = 0x5eedULL;
};

/// Largest eigenvalue of a symmetric PSD operator given as apply(v, out): out = M v.
/// Stops when the Rayleigh quotient changes by less than the relative tolerance.
template <typename Apply>
double largest_eigenvalue(int dim, Apply&& apply, const PowerIterationOptions& options = {}) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int j = 0; j < dim; ++j) v[j] = normal(rng);
  v.normalize();
  Vector w(dim);
  double rayleigh = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    apply(v, w);
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (it > 0 && std::abs(next - rayleigh) <= options.relative_tolerance * std::abs(next)) {
      return next;
    }
    rayleigh = next;
  }
  return rayleigh;
}

/// Largest eigenvalue of (1/|C|) sum_{i in C} c(b_i) a_i a_i^T with c the
/// objective's curvature bound.
inline double subset_curvature(const Objective& obj, const Dataset& data,
                               std::span<const int> subset,
                               const PowerIterationOptions& options = {}) {
  const double scale = 1.0 / static_cast<double>(subset.size());
  return largest_eigenvalue(
      data.cols(),
      [&](const Vector& v, Vector& out) {
        out.setZero();
        for (const int i : subset) {
          const double weight = obj.curvature_bound(data.label(i)) * data.row_dot(i, v);
          data.add_row(i, scale * weight, out);
        }
      },
      options);
}

struct SmoothnessConstants {
  double L = 0.0;        // smoothness of f
  Vector L_i;            // per example
  Vector L_cell;         // smoothness of f_{C_j}
  Vector Lbar_cell;      // mean of L_i over C_j
  Vector Lmax_cell;      // max of L_i over C_j
  std::optional<double> mu;

  double strong_convexity() const {
    if (!mu) throw RangeError("strong convexity constant undefined for lambda = 0");
    return *mu;
  }
};

inline SmoothnessConstants smoothness_constants(const Objective& obj, const Dataset& data,
                                                const Partitioning& partitioning,
                                                const PowerIterationOptions& options = {}) {
  require(partitioning.n() == data.rows(), "partitioning does not match dataset size");
  SmoothnessConstants c;
  const int n = data.rows();
  c.L_i.resize(n);
  for (int i = 0; i < n; ++i) {
    c.L_i[i] = obj.curvature_bound(data.label(i)) * data.row_squared_norm(i) + obj.lambda;
  }
  const int k = partitioning.num_cells();
  c.L_cell.resize(k);
  c.Lbar_cell.resize(k);
  c.Lmax_cell.resize(k);
  for (int j = 0; j < k; ++j) {
    const auto cell = partitioning.cell(j);
    double sum = 0.0;
    double mx = 0.0;
    for (const int i : cell) {
      sum += c.L_i[i];
      mx = std::max(mx, c.L_i[i]);
    }
    c.Lbar_cell[j] = sum / static_cast<double>(cell.size());
    c.Lmax_cell[j] = mx;
    c.L_cell[j] = subset_curvature(obj, data, cell, options) + obj.lambda;
  }
  if (k == 1) {
    c.L = c.L_cell[0];
  } else {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    c.L = subset_curvature(obj, data, all, options) + obj.lambda;
  }
  if (obj.lambda > 0.0) c.mu = obj.lambda;
  return c;
}

struct ReferenceOptions {
  double tolerance = 1e-12;
  int max_iterations = 200;
};

/// Minimizer of f. Ridge solves the stationarity system directly (with a few
/// refinement sweeps); logistic runs damped Newton with Armijo backtracking.
/// Throws ConvergenceError when ||grad f(x*)|| > tolerance at the end.
inline Vector solve_reference(const Objective& obj, const Dataset& data,
                              const ReferenceOptions& options = {}) {
  const int n = data.rows();
  const int d = data.cols();
  auto hessian_at = [&](const Vector& x) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
    Vector row(d);
    for (int i = 0; i < n; ++i) {
      row.setZero();
      data.add_row(i, 1.0, row);
      const double w = obj.loss_curvature(data.row_dot(i, x), data.label(i));
      h.selfadjointView<Eigen::Lower>().rankUpdate(row, w / n);
    }
    h = h.selfadjointView<Eigen::Lower>();
    h.diagonal().array() += obj.lambda;
    return h;
  };

  Vector x = Vector::Zero(d);
  if (obj.model == Model::ridge) {
    const Eigen::MatrixXd h = hessian_at(x);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw ConvergenceError("ridge system is singular (lambda = 0 with rank-deficient data)",
                             std::numeric_limits<double>::infinity());
    }
    double best = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < 5; ++sweep) {
      const Vector g = grad(obj, data, x);
      const double norm = g.norm();
      if (norm >= best) break;
      best = norm;
      if (norm <= options.tolerance && sweep > 0) break;
      x -= ldlt.solve(g);
    }
    const double final_norm = grad(obj, data, x).norm();
    if (final_norm > options.tolerance) {
      throw ConvergenceError("ridge solve residual above tolerance", final_norm);
    }
    return x;
  }

  double fx = value(obj, data, x);
  Vector g = grad(obj, data, x);
  for (int it = 0; it < options.max_iterations; ++it) {
    if (g.norm() <= options.tolerance) return x;
    const Vector step = hessian_at(x).ldlt().solve(g);
    const double slope = g.dot(step);
    double t = 1.0;
    Vector trial = x - step;
    double ftrial = value(obj, data, trial);
    // Near the optimum the predicted decrease drops below the rounding of f;
    // accept the full step on gradient decrease alone.
    if (slope <= 1e-10 * (1.0 + std::abs(fx))) {
      const Vector gfull = grad(obj, data, trial);
      if (gfull.norm() < g.norm()) {
        x = trial;
        fx = ftrial;
        g = gfull;
        continue;
      }
    }
    while (ftrial > fx - 1e-4 * t * slope && t > 1e-12) {
      t *= 0.5;
      trial = x - t * step;
      ftrial = value(obj, data, trial);
    }
    const Vector gtrial = grad(obj, data, trial);
    // no progress in f or in the gradient
    if (ftrial > fx && gtrial.norm() >= g.norm()) break;
    x = trial;
    fx = ftrial;
    g = gtrial;
  }
  if (g.norm() > options.tolerance) {
    throw ConvergenceError("logistic reference solver did not reach tolerance", g.norm());
  }
  return x;
}

}  // namespace adabatch
