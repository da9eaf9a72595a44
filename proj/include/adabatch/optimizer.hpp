#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "adabatch/data.hpp"
#include "adabatch/error.hpp"
#include "adabatch/objectives.hpp"
#include "adabatch/rates.hpp"
#include "adabatch/sampling.hpp"

namespace adabatch {

/// Everything about a problem instance that does not change between runs.
/// Holds references to the dataset and partitioning; both must outlive it.
struct Problem {
  Objective objective;
  const Dataset* data = nullptr;
  const Partitioning* partitioning = nullptr;
  SmoothnessConstants constants;

  double mu() const { return constants.strong_convexity(); }
  int n() const { return data->rows(); }
  int d() const { return data->cols(); }
};

inline Problem make_problem(const Objective& obj, const Dataset& data, const Partitioning& partitioning) {
  return {obj, &data, &partitioning, smoothness_constants(obj, data, partitioning)};
}

/// x0 ~ N(0, I), seeded.
inline Vector initial_point(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x(d);
  for (int j = 0; j < d; ++j) x[j] = normal(rng);
  return x;
}

enum class StopRule { relative_error, none };

struct RunConfig {
  double eps = 1e-2;
  /// Cap C on 2 sigma^k in the adaptive step size. Unset means 2 sigma(x0, tau0);
  /// +infinity disables the cap.
  std::optional<double> variance_cap;
  double max_epochs = 100.0;
  std::optional<long> max_iterations;
  SamplingKind kind = SamplingKind::partition_nice;
  StopRule stop_rule = StopRule::relative_error;
  /// relative_error stops once ||x^k - x*||^2 <= stop_factor * eps * ||x0 - x*||^2.
  double stop_factor = 0.1;
  bool keep_records = true;
};

struct TraceRecord {
  long k = 0;
  double epoch = 0.0;
  int tau = 0;
  double gamma = 0.0;
  double L_hat = 0.0;
  double sigma_hat = 0.0;
  double sq_dist = 0.0;
  double rel_err = 0.0;
};

enum class RunStatus { converged, max_epochs, max_iterations, diverged };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_epochs: return "max_epochs";
    case RunStatus::max_iterations: return "max_iterations";
    case RunStatus::diverged: return "diverged";
  }
  return "unknown";
}

struct Trace {
  std::vector<TraceRecord> records;  // empty when keep_records is off
  TraceRecord last;
  RunStatus status = RunStatus::max_epochs;
  double variance_cap = std::numeric_limits<double>::infinity();
  Vector x;  // final iterate

  bool converged() const { return status == RunStatus::converged; }
  /// Epoch count when the stop rule fired, NaN otherwise.
  double epochs_to_target() const {
    return converged() ? last.epoch : std::numeric_limits<double>::quiet_NaN();
  }
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, Trace trace) : Error(what), trace_(std::move(trace)) {}
  const Trace& trace() const noexcept { return trace_; }

 private:
  Trace trace_;
};

/// Stale per-example gradients from each example's last touch, with per-cell
/// running sums so the statistics feeding L(tau), sigma and tau* cost O(K d).
class GradientCache {
 public:
  static constexpr long kRefreshInterval = 10000;

  GradientCache(const Objective& obj, const Dataset& data, const Partitioning& partitioning,
                const Vector& x0)
      : partitioning_(&partitioning),
        grads_(data.cols(), data.rows()),
        cell_sums_(data.cols(), partitioning.num_cells()),
        h_sums_(partitioning.num_cells()) {
    Vector g(data.cols());
    stats_.h.resize(data.rows());
    for (int i = 0; i < data.rows(); ++i) {
      grad_i_into(obj, data, i, x0, g);
      grads_.col(i) = g;
      stats_.h[i] = g.squaredNorm();
    }
    stats_.hbar_cell.resize(partitioning.num_cells());
    stats_.h_cell.resize(partitioning.num_cells());
    refresh();
  }

  /// Replaces the cached gradient of example i.
  void update(int i, const Vector& g) {
    const int j = partitioning_->cell_of(i);
    cell_sums_.col(j) += g - grads_.col(i);
    const double h = g.squaredNorm();
    h_sums_[j] += h - stats_.h[i];
    grads_.col(i) = g;
    stats_.h[i] = h;
    sync_cell(j);
    if (++updates_ >= kRefreshInterval) refresh();
  }

  /// Recomputes every running sum from the stored vectors.
  void refresh() {
    cell_sums_.setZero();
    h_sums_.setZero();
    for (int j = 0; j < partitioning_->num_cells(); ++j) {
      for (const int i : partitioning_->cell(j)) {
        cell_sums_.col(j) += grads_.col(i);
        h_sums_[j] += stats_.h[i];
      }
      sync_cell(j);
    }
    updates_ = 0;
  }

  const GradNormStats& stats() const { return stats_; }
  double h(int i) const { return stats_.h[i]; }
  auto gradient(int i) const { return grads_.col(i); }
  auto cell_sum(int j) const { return cell_sums_.col(j); }

 private:
  void sync_cell(int j) {
    const double m = partitioning_->cell_size(j);
    stats_.hbar_cell[j] = h_sums_[j] / m;
    stats_.h_cell[j] = cell_sums_.col(j).squaredNorm() / (m * m);
  }

  const Partitioning* partitioning_;
  Eigen::MatrixXd grads_;      // column i = cached grad f_i
  Eigen::MatrixXd cell_sums_;  // column j = sum of cached grads over C_j
  Vector h_sums_;
  GradNormStats stats_;
  long updates_ = 0;
};

struct StepSizeBounds {
  double gamma_min = 0.0;
  double gamma_max = 0.0;
};

/// gamma_max = 1/2 max_tau 1/L(tau); gamma_min = 1/2 min{min_tau 1/L(tau), eps mu / C}
/// over feasible tau in [1, min_j n_j].
inline StepSizeBounds step_size_bounds(const SmoothnessConstants& c, const Partitioning& p,
                                       SamplingKind kind, double mu, double eps, double cap) {
  double inv_min = std::numeric_limits<double>::infinity();
  double inv_max = 0.0;
  for (int tau = 1; tau <= p.min_cell_size(); ++tau) {
    const double inv = 1.0 / expected_smoothness(c, p, kind, tau);
    inv_min = std::min(inv_min, inv);
    inv_max = std::max(inv_max, inv);
  }
  return {0.5 * std::min(inv_min, eps * mu / cap), 0.5 * inv_max};
}

/// 1/2 min{1/L, eps mu / min(C, 2 sigma)}; a zero denominator drops that branch.
inline double adaptive_step_size(double L_hat, double sigma_hat, double eps, double mu, double cap) {
  const double noise = std::min(cap, 2.0 * sigma_hat);
  const double smooth = 1.0 / L_hat;
  if (noise <= 0.0) return 0.5 * smooth;
  return 0.5 * std::min(smooth, eps * mu / noise);
}

/// Expected-distance bound for the adaptive method:
///   E||x^k - x*||^2 <= (1 - gamma_min mu)^k r0 + 2 gamma_max^2 sigma* / (gamma_min mu).
struct ConvergenceBound {
  StepSizeBounds steps;
  double mu = 0.0;
  double residual = 0.0;

  double operator()(long k, double r0) const {
    return std::pow(1.0 - steps.gamma_min * mu, static_cast<double>(k)) * r0 + residual;
  }
};

inline ConvergenceBound convergence_bound(const StepSizeBounds& steps, double mu, double sigma_star) {
  return {steps, mu, 2.0 * steps.gamma_max * steps.gamma_max * sigma_star / (steps.gamma_min * mu)};
}

/// The alternative neighborhood radius that is O(eps):
///   R' = eps mu (max{1/C, 1/(2 eta sigma*)})^2 max{eps max_tau L(tau), C/mu} sigma*.
inline double residual_linear_in_eps(double eps, double mu, double cap, double eta,
                                     double sigma_star, double max_L_tau) {
  require(sigma_star > 0.0 && eta > 0.0, "residual needs sigma* > 0 and eta > 0");
  const double inv = std::max(1.0 / cap, 1.0 / (2.0 * eta * sigma_star));
  return eps * mu * inv * inv * std::max(eps * max_L_tau, cap / mu) * sigma_star;
}

/// Read-only view handed to an iteration observer after each SGD step.
struct IterationView {
  long k;                     // index of the iteration just taken
  const Vector& x_before;     // x^k
  const Vector& x_after;      // x^{k+1}
  const DrawnBatch& batch;
  const GradientCache* cache;  // null for fixed-batch runs
  double gamma;
};

using IterationObserver = std::function<void(const IterationView&)>;

namespace detail {

inline bool finite(const Vector& x) { return x.allFinite(); }

inline bool should_stop(const RunConfig& config, const TraceRecord& rec, double r0) {
  return config.stop_rule == StopRule::relative_error &&
         rec.sq_dist <= config.stop_factor * config.eps * r0;
}

class TraceBuilder {
 public:
  explicit TraceBuilder(bool keep) : keep_(keep) {}

  void push(const TraceRecord& rec) {
    trace_.last = rec;
    if (keep_) trace_.records.push_back(rec);
  }
  Trace& trace() { return trace_; }

 private:
  bool keep_;
  Trace trace_;
};

}  // namespace detail

/// SGD with adaptive batch size. Each iteration recomputes tau^k from cached
/// gradient statistics, sets L^k = L(tau^k), sigma^k = sigma(x^k, tau^k) and
/// gamma^k = 1/2 min{1/L^k, eps mu / min(C, 2 sigma^k)}, then takes one step and
/// refreshes the cache for the sampled examples. x_ref only drives the error
/// columns and the stop rule.
inline Trace run_adaptive(const Problem& problem, const RunConfig& config, const Vector& x0,
                          const Vector& x_ref, Rng& rng, const IterationObserver& observer = {}) {
  require(config.eps > 0.0, "eps must be positive");
  require(config.max_epochs > 0.0, "max_epochs must be positive");
  const auto& obj = problem.objective;
  const auto& data = *problem.data;
  const auto& part = *problem.partitioning;
  const auto& c = problem.constants;
  const double mu = problem.mu();
  const double eps = config.eps;
  const SamplingKind kind = config.kind;
  const int n = data.rows();

  GradientCache cache(obj, data, part, x0);
  BatchSampler sampler(part);
  DrawnBatch batch;
  Vector x = x0;
  Vector next(x.size());
  Vector g(x.size());
  Vector direction(x.size());

  double cap;
  if (config.variance_cap) {
    require(*config.variance_cap > 0.0, "variance cap must be positive");
    cap = *config.variance_cap;
  } else {
    const int tau0 = optimal_batch(c, cache.stats(), part, kind, mu, eps);
    cap = 2.0 * gradient_noise(cache.stats(), part, kind, tau0);
    if (!(cap > 0.0)) cap = std::numeric_limits<double>::infinity();
  }

  detail::TraceBuilder out(config.keep_records);
  out.trace().variance_cap = cap;
  const double r0 = (x0 - x_ref).squaredNorm();
  double epoch = 1.0;  // the cache initialization pass
  for (long k = 0;; ++k) {
    const auto& stats = cache.stats();
    TraceRecord rec;
    rec.k = k;
    rec.epoch = epoch;
    rec.tau = optimal_batch(c, stats, part, kind, mu, eps);
    rec.L_hat = expected_smoothness(c, part, kind, rec.tau);
    rec.sigma_hat = gradient_noise(stats, part, kind, rec.tau);
    rec.gamma = adaptive_step_size(rec.L_hat, rec.sigma_hat, eps, mu, cap);
    rec.sq_dist = (x - x_ref).squaredNorm();
    rec.rel_err = r0 > 0.0 ? rec.sq_dist / r0 : 0.0;
    out.push(rec);

    if (!std::isfinite(rec.sq_dist)) {
      out.trace().status = RunStatus::diverged;
      out.trace().x = x;
      throw DivergenceError("adaptive SGD produced a non-finite iterate", std::move(out.trace()));
    }
    if (detail::should_stop(config, rec, r0)) {
      out.trace().status = RunStatus::converged;
      break;
    }
    if (epoch >= config.max_epochs) {
      out.trace().status = RunStatus::max_epochs;
      break;
    }
    if (config.max_iterations && k >= *config.max_iterations) {
      out.trace().status = RunStatus::max_iterations;
      break;
    }

    const SamplingLaw law(part, kind, rec.tau);
    sampler.draw(law, rng, batch);
    direction.setZero();
    for (std::size_t t = 0; t < batch.indices.size(); ++t) {
      const int i = batch.indices[t];
      grad_i_into(obj, data, i, x, g);
      direction += batch.weights[t] * g;
      cache.update(i, g);
    }
    direction /= static_cast<double>(n);
    next = x - rec.gamma * direction;
    epoch += static_cast<double>(batch.indices.size()) / n;
    if (observer) observer({k, x, next, batch, &cache, rec.gamma});
    x.swap(next);
  }
  out.trace().x = x;
  return std::move(out.trace());
}

/// Fixed-batch SGD with the constant step 1/2 min{1/L(tau), eps mu / (2 sigma*)};
/// sigma* = 0 gives 1/(2 L(tau)).
inline Trace run_fixed(const Problem& problem, int tau, const RunConfig& config, double sigma_star,
                       const Vector& x0, const Vector& x_ref, Rng& rng,
                       const IterationObserver& observer = {}) {
  require(config.eps > 0.0, "eps must be positive");
  require(config.max_epochs > 0.0, "max_epochs must be positive");
  require(sigma_star >= 0.0, "sigma* must be non-negative");
  const auto& obj = problem.objective;
  const auto& data = *problem.data;
  const auto& part = *problem.partitioning;
  const double mu = problem.mu();
  const int n = data.rows();

  const SamplingLaw law(part, config.kind, tau);
  const double L_tau = expected_smoothness(problem.constants, part, config.kind, tau);
  const double gamma = adaptive_step_size(L_tau, sigma_star, config.eps, mu,
                                          std::numeric_limits<double>::infinity());
  BatchSampler sampler(part);
  DrawnBatch batch;
  Vector x = x0;
  Vector next(x.size());

  detail::TraceBuilder out(config.keep_records);
  const double r0 = (x0 - x_ref).squaredNorm();
  double epoch = 0.0;
  for (long k = 0;; ++k) {
    TraceRecord rec;
    rec.k = k;
    rec.epoch = epoch;
    rec.tau = tau;
    rec.gamma = gamma;
    rec.L_hat = L_tau;
    rec.sigma_hat = sigma_star;
    rec.sq_dist = (x - x_ref).squaredNorm();
    rec.rel_err = r0 > 0.0 ? rec.sq_dist / r0 : 0.0;
    out.push(rec);

    if (!std::isfinite(rec.sq_dist)) {
      out.trace().status = RunStatus::diverged;
      out.trace().x = x;
      throw DivergenceError("fixed-batch SGD produced a non-finite iterate", std::move(out.trace()));
    }
    if (detail::should_stop(config, rec, r0)) {
      out.trace().status = RunStatus::converged;
      break;
    }
    if (epoch >= config.max_epochs) {
      out.trace().status = RunStatus::max_epochs;
      break;
    }
    if (config.max_iterations && k >= *config.max_iterations) {
      out.trace().status = RunStatus::max_iterations;
      break;
    }

    sampler.draw(law, rng, batch);
    next = x - gamma * stochastic_grad(obj, data, batch, x);
    epoch += static_cast<double>(batch.indices.size()) / n;
    if (observer) observer({k, x, next, batch, nullptr, gamma});
    x.swap(next);
  }
  out.trace().x = x;
  return std::move(out.trace());
}

}  // namespace adabatch
