#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "adabatch/data.hpp"
#include "adabatch/error.hpp"
#include "adabatch/objectives.hpp"
#include "adabatch/sampling.hpp"

namespace adabatch {

/// Per-example and per-cell squared gradient norms at one point x.
struct GradNormStats {
  Vector h;          // ||grad f_i(x)||^2
  Vector hbar_cell;  // mean of h_i over C_j
  Vector h_cell;     // ||grad f_{C_j}(x)||^2
};

inline GradNormStats grad_norm_stats(const Objective& obj, const Dataset& data,
                                     const Partitioning& partitioning, const Vector& x) {
  require(partitioning.n() == data.rows(), "partitioning does not match dataset size");
  GradNormStats s;
  s.h.resize(data.rows());
  s.hbar_cell = Vector::Zero(partitioning.num_cells());
  s.h_cell.resize(partitioning.num_cells());
  Vector g(x.size());
  for (int j = 0; j < partitioning.num_cells(); ++j) {
    Vector sum = Vector::Zero(x.size());
    for (const int i : partitioning.cell(j)) {
      grad_i_into(obj, data, i, x, g);
      s.h[i] = g.squaredNorm();
      s.hbar_cell[j] += s.h[i];
      sum += g;
    }
    const double m = partitioning.cell_size(j);
    s.hbar_cell[j] /= m;
    s.h_cell[j] = (sum / m).squaredNorm();
  }
  return s;
}

/// An affine function slope * t + intercept.
struct Line {
  double slope = 0.0;
  double intercept = 0.0;
  double operator()(double t) const { return slope * t + intercept; }
};

namespace detail {

inline void check_batch_size(const Partitioning& p, SamplingKind kind, int tau) {
  if (tau < 1 || tau > p.min_cell_size()) {
    throw RangeError("batch size " + std::to_string(tau) + " outside [1, " +
                     std::to_string(p.min_cell_size()) + "]");
  }
  if (kind == SamplingKind::partition_nice) {
    for (int j = 0; j < p.num_cells(); ++j) {
      if (p.cell_size(j) < 2) {
        throw RangeError("nice sampling needs every cell to hold at least 2 examples");
      }
    }
  }
}

}  // namespace detail

/// Upper bound L(tau) on the expected smoothness constant.
///   nice:        (1/(n tau)) max_j n_j/(q_j(n_j-1)) [(tau-1) L_Cj n_j + (n_j-tau) Lmax_j]
///   independent: (1/n) max_j [n_j L_Cj/q_j + Lmax_j (1-p_j)/(q_j p_j)],  p_j = tau/n_j
inline double expected_smoothness(const SmoothnessConstants& c, const Partitioning& p,
                                  SamplingKind kind, int tau) {
  detail::check_batch_size(p, kind, tau);
  const double n = p.n();
  double best = 0.0;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    const double q = p.prob(j);
    double term;
    if (kind == SamplingKind::partition_nice) {
      term = m / (q * (m - 1.0)) * ((tau - 1.0) * c.L_cell[j] * m + (m - tau) * c.Lmax_cell[j]);
    } else {
      const double pj = tau / m;
      term = m * c.L_cell[j] / q + c.Lmax_cell[j] * (1.0 - pj) / (q * pj);
    }
    best = std::max(best, term);
  }
  return kind == SamplingKind::partition_nice ? best / (n * tau) : best / n;
}

/// L(tau) for an explicit law; independent laws may carry arbitrary p_i.
inline double expected_smoothness(const SmoothnessConstants& c, const SamplingLaw& law) {
  if (!law.has_custom_inclusion()) {
    return expected_smoothness(c, law.partitioning(), law.kind(), law.tau());
  }
  const auto& p = law.partitioning();
  double best = 0.0;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double q = p.prob(j);
    double worst = 0.0;
    for (const int i : p.cell(j)) {
      const double pi = law.inclusion(i);
      worst = std::max(worst, c.L_i[i] * (1.0 - pi) / (q * pi));
    }
    best = std::max(best, p.cell_size(j) * c.L_cell[j] / q + worst);
  }
  return best / p.n();
}

/// Gradient noise sigma(x, tau) = E||grad f_v(x)||^2, exact for both laws.
///   nice:        (1/(n^2 tau)) sum_j n_j^2/(q_j(n_j-1)) [(tau-1) h_Cj n_j + (n_j-tau) hbar_j]
///   independent: (1/n^2) sum_j [n_j^2 h_Cj + sum_{i in C_j} (1-p_i)/p_i h_i] / q_j
inline double gradient_noise(const GradNormStats& s, const Partitioning& p, SamplingKind kind,
                             int tau) {
  detail::check_batch_size(p, kind, tau);
  const double n = p.n();
  double total = 0.0;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    const double q = p.prob(j);
    if (kind == SamplingKind::partition_nice) {
      total += m * m / (q * (m - 1.0)) *
               ((tau - 1.0) * s.h_cell[j] * m + (m - tau) * s.hbar_cell[j]);
    } else {
      total += (m * m * s.h_cell[j] + (m - tau) / tau * m * s.hbar_cell[j]) / q;
    }
  }
  return kind == SamplingKind::partition_nice ? total / (n * n * tau) : total / (n * n);
}

inline double gradient_noise(const GradNormStats& s, const SamplingLaw& law) {
  if (!law.has_custom_inclusion()) return gradient_noise(s, law.partitioning(), law.kind(), law.tau());
  const auto& p = law.partitioning();
  const double n = p.n();
  double total = 0.0;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    double inner = m * m * s.h_cell[j];
    for (const int i : p.cell(j)) {
      const double pi = law.inclusion(i);
      inner += (1.0 - pi) / pi * s.h[i];
    }
    total += inner / p.prob(j);
  }
  return total / (n * n);
}

/// The per-cell affine pieces of tau * L(tau); their pointwise max is tau * L(tau).
inline std::vector<Line> smoothness_lines(const SmoothnessConstants& c, const Partitioning& p,
                                          SamplingKind kind) {
  const double n = p.n();
  std::vector<Line> lines;
  lines.reserve(p.num_cells());
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    const double q = p.prob(j);
    const double L = c.L_cell[j];
    const double Lmax = c.Lmax_cell[j];
    if (kind == SamplingKind::partition_nice) {
      const double e = q * (m - 1.0);
      lines.push_back({m / e * (m * L - Lmax) / n, m * m / e * (Lmax - L) / n});
    } else {
      lines.push_back({(m * L - Lmax) / (q * n), m * Lmax / (q * n)});
    }
  }
  return lines;
}

/// tau * sigma(x, tau) as an affine function of tau.
inline Line noise_line(const GradNormStats& s, const Partitioning& p, SamplingKind kind) {
  const double n2 = static_cast<double>(p.n()) * p.n();
  Line line;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    const double q = p.prob(j);
    const double h = s.h_cell[j];
    const double hbar = s.hbar_cell[j];
    if (kind == SamplingKind::partition_nice) {
      const double e = q * (m - 1.0);
      line.slope += m * m / e * (m * h - hbar);
      line.intercept += m * m * m / e * (hbar - h);
    } else {
      line.slope += (m * m * h - m * hbar) / q;
      line.intercept += m * m * hbar / q;
    }
  }
  line.slope /= n2;
  line.intercept /= n2;
  return line;
}

/// T(tau) = (2/mu) max{tau L(tau), (2/(eps mu)) tau sigma*} log(2 r0 / eps).
inline double total_complexity(int tau, double L_tau, double sigma_star, double mu, double eps,
                               double r0) {
  require(eps > 0.0 && mu > 0.0 && r0 > 0.0, "total_complexity needs eps, mu, r0 > 0");
  const double smooth = tau * L_tau;
  const double noise = 2.0 / (eps * mu) * tau * sigma_star;
  return 2.0 / mu * std::max(smooth, noise) * std::log(2.0 * r0 / eps);
}

/// Minimizer of max(l_1, ..., l_k, r) for increasing l_i and decreasing r:
/// the smallest crossing point of r with any l_i.
inline double minimize_max_linear(std::span<const Line> increasing, const Line& decreasing) {
  require(!increasing.empty(), "need at least one increasing line");
  if (!(decreasing.slope < 0.0)) throw DegenerateError("right-hand line is not strictly decreasing");
  double best = std::numeric_limits<double>::infinity();
  for (const Line& l : increasing) {
    if (!(l.slope > 0.0)) throw DegenerateError("left-hand line is not strictly increasing");
    best = std::min(best, (decreasing.intercept - l.intercept) / (l.slope - decreasing.slope));
  }
  return best;
}

/// max{tau L(tau), (2/(eps mu)) tau sigma(x, tau)}, the tau-dependent part of T(tau).
inline double batch_objective(const SmoothnessConstants& c, const GradNormStats& s,
                              const Partitioning& p, SamplingKind kind, double mu, double eps,
                              int tau) {
  const double smooth = tau * expected_smoothness(c, p, kind, tau);
  const double noise = 2.0 / (eps * mu) * tau * gradient_noise(s, p, kind, tau);
  return std::max(smooth, noise);
}

/// True when tau * sigma(x, tau) is non-increasing in tau; otherwise the optimal
/// batch size is 1.
inline bool noise_nonincreasing(const GradNormStats& s, const Partitioning& p, SamplingKind kind) {
  return noise_line(s, p, kind).slope <= 0.0;
}

/// Real-valued minimizer in closed form, min over cells r of
///   nice:  [n n_r^2/e_r (L_r - Lmax_r) + k sum_j n_j^3/e_j (hbar_j - h_j)]
///        / [n n_r/e_r (n_r L_r - Lmax_r) + k sum_j n_j^2/e_j (hbar_j - n_j h_j)]
///   indep: [k sum_j n_j^2/q_j hbar_j - n n_r/q_r Lmax_r]
///        / [k sum_j n_j/q_j (hbar_j - n_j h_j) + n/q_r (n_r L_r - Lmax_r)]
/// with k = 2/(eps mu) and e_j = q_j (n_j - 1). Not clamped, not rounded.
inline double optimal_batch_closed_form(const SmoothnessConstants& c, const GradNormStats& s,
                                        const Partitioning& p, SamplingKind kind, double mu,
                                        double eps) {
  const double n = p.n();
  const double k = 2.0 / (eps * mu);
  double num_sum = 0.0;
  double den_sum = 0.0;
  for (int j = 0; j < p.num_cells(); ++j) {
    const double m = p.cell_size(j);
    const double q = p.prob(j);
    const double h = s.h_cell[j];
    const double hbar = s.hbar_cell[j];
    if (kind == SamplingKind::partition_nice) {
      const double e = q * (m - 1.0);
      num_sum += m * m * m / e * (hbar - h);
      den_sum += m * m / e * (hbar - m * h);
    } else {
      num_sum += m * m / q * hbar;
      den_sum += m / q * (hbar - m * h);
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < p.num_cells(); ++r) {
    const double m = p.cell_size(r);
    const double q = p.prob(r);
    const double L = c.L_cell[r];
    const double Lmax = c.Lmax_cell[r];
    double value;
    if (kind == SamplingKind::partition_nice) {
      const double e = q * (m - 1.0);
      value = (n * m * m / e * (L - Lmax) + k * num_sum) / (n * m / e * (m * L - Lmax) + k * den_sum);
    } else {
      value = (k * num_sum - n * m / q * Lmax) / (k * den_sum + n / q * (m * L - Lmax));
    }
    best = std::min(best, value);
  }
  return best;
}

/// Integer batch size minimizing max{tau L(tau), (2/(eps mu)) tau sigma(x, tau)}
/// over tau in [1, min_j n_j]. Uses the min-of-max-of-lines solution, clamps it,
/// and keeps whichever of floor/ceil scores lower (ties go to the smaller tau).
/// Returns 1 when tau * sigma increases with tau.
inline int optimal_batch(const SmoothnessConstants& c, const GradNormStats& s,
                         const Partitioning& p, SamplingKind kind, double mu, double eps) {
  require(mu > 0.0 && eps > 0.0, "optimal_batch needs mu > 0 and eps > 0");
  const int tau_max = p.min_cell_size();
  detail::check_batch_size(p, kind, 1);
  const Line noise = noise_line(s, p, kind);
  if (noise.slope > 0.0) return 1;

  const double k = 2.0 / (eps * mu);
  const Line r{k * noise.slope, k * noise.intercept};
  const auto lines = smoothness_lines(c, p, kind);
  const bool regular =
      r.slope < 0.0 && std::all_of(lines.begin(), lines.end(), [](const Line& l) { return l.slope > 0.0; });

  auto objective = [&](int tau) { return batch_objective(c, s, p, kind, mu, eps, tau); };
  if (!regular) {
    // Flat noise line or a non-increasing smoothness piece: scan the convex objective.
    int best_tau = 1;
    double best = objective(1);
    for (int tau = 2; tau <= tau_max; ++tau) {
      const double v = objective(tau);
      if (v < best) {
        best = v;
        best_tau = tau;
      }
    }
    return best_tau;
  }

  const double real = minimize_max_linear(lines, r);
  if (std::isnan(real)) throw DegenerateError("optimal batch size is NaN");
  const double clamped = std::clamp(real, 1.0, static_cast<double>(tau_max));
  const int lo = static_cast<int>(std::floor(clamped));
  const int hi = std::min(lo + 1, tau_max);
  if (lo == hi || clamped == lo) return lo;
  return objective(hi) < objective(lo) ? hi : lo;
}

/// eta with sigma(x) >= eta * sigma(x*) for all x:
///   eta = (sqrt(L_exp L + mu^2) - sqrt(L_exp L))^2 / mu^2
/// evaluated as mu^2 / (sqrt(L_exp L + mu^2) + sqrt(L_exp L))^2.
inline double sigma_lower_bound_factor(double L_exp, double L, double mu) {
  require(L_exp >= 0.0 && L >= 0.0 && mu > 0.0, "sigma_lower_bound_factor needs mu > 0");
  const double a = L_exp * L;
  const double denom = std::sqrt(a + mu * mu) + std::sqrt(a);
  return mu * mu / (denom * denom);
}

}  // namespace adabatch
