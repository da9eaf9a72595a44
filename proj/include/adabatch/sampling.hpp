#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adabatch/data.hpp"
#include "adabatch/error.hpp"
#include "adabatch/objectives.hpp"

namespace adabatch {

using Rng = std::mt19937_64;

/// partition_nice: pick C_j w.p. q_j, then a uniform tau-subset of C_j.
/// partition_independent: pick C_j w.p. q_j, then keep each i in C_j w.p. p_i.
enum class SamplingKind { partition_nice, partition_independent };

inline const char* to_string(SamplingKind kind) {
  return kind == SamplingKind::partition_nice ? "nice" : "independent";
}

/// A sampling law over a partitioning. Holds a reference to the partitioning,
/// which must outlive the law.
class SamplingLaw {
 public:
  /// Batch size tau; for the independent kind p_i = tau / n_{C_j}.
  SamplingLaw(const Partitioning& partitioning, SamplingKind kind, int tau)
      : partitioning_(&partitioning), kind_(kind), tau_(tau) {
    if (tau < 1 || tau > partitioning.min_cell_size()) {
      throw RangeError("batch size " + std::to_string(tau) + " outside [1, " +
                       std::to_string(partitioning.min_cell_size()) + "]");
    }
  }

  /// Independent kind with arbitrary within-cell inclusion probabilities.
  SamplingLaw(const Partitioning& partitioning, std::vector<double> inclusion)
      : partitioning_(&partitioning),
        kind_(SamplingKind::partition_independent),
        tau_(0),
        inclusion_(std::move(inclusion)) {
    require(static_cast<int>(inclusion_.size()) == partitioning.n(),
            "one inclusion probability per example required");
    for (const double p : inclusion_) require(p > 0.0 && p <= 1.0, "inclusion probabilities must lie in (0, 1]");
  }

  const Partitioning& partitioning() const { return *partitioning_; }
  SamplingKind kind() const { return kind_; }
  /// 0 when the law was built from explicit inclusion probabilities.
  int tau() const { return tau_; }
  bool has_custom_inclusion() const { return !inclusion_.empty(); }

  /// Probability that i is included given its cell was chosen.
  double inclusion(int i) const {
    if (!inclusion_.empty()) return inclusion_[i];
    return static_cast<double>(tau_) / partitioning_->cell_size(partitioning_->cell_of(i));
  }

  /// Unconditional probability that example i is in the batch.
  double marginal(int i) const { return partitioning_->prob(partitioning_->cell_of(i)) * inclusion(i); }

  double expected_batch_size() const {
    double total = 0.0;
    for (int j = 0; j < partitioning_->num_cells(); ++j) {
      double inner = 0.0;
      for (const int i : partitioning_->cell(j)) inner += inclusion(i);
      total += partitioning_->prob(j) * inner;
    }
    return total;
  }

 private:
  const Partitioning* partitioning_;
  SamplingKind kind_;
  int tau_;
  std::vector<double> inclusion_;
};

/// Sampled indices with unbiasing weights v_i = 1 / marginal(i); unsampled
/// examples implicitly carry weight 0.
struct DrawnBatch {
  int cell = -1;
  std::vector<int> indices;
  std::vector<double> weights;
};

/// Reusable sampler. Keeps one scratch permutation per cell so a nice draw
/// costs O(tau) via a partial Fisher-Yates shuffle.
class BatchSampler {
 public:
  explicit BatchSampler(const Partitioning& partitioning) : cell_choice_(probs(partitioning)) {
    scratch_.reserve(partitioning.num_cells());
    for (int j = 0; j < partitioning.num_cells(); ++j) {
      const auto cell = partitioning.cell(j);
      scratch_.emplace_back(cell.begin(), cell.end());
    }
  }

  void draw(const SamplingLaw& law, Rng& rng, DrawnBatch& out) {
    const auto& part = law.partitioning();
    const int j = cell_choice_(rng);
    const double q = part.prob(j);
    out.cell = j;
    out.indices.clear();
    out.weights.clear();
    if (law.kind() == SamplingKind::partition_nice) {
      auto& perm = scratch_[j];
      const int size = static_cast<int>(perm.size());
      const int tau = law.tau();
      const double weight = static_cast<double>(size) / (q * tau);
      for (int t = 0; t < tau; ++t) {
        std::uniform_int_distribution<int> pick(t, size - 1);
        std::swap(perm[t], perm[pick(rng)]);
        out.indices.push_back(perm[t]);
        out.weights.push_back(weight);
      }
      return;
    }
    const auto cell = part.cell(j);
    if (!law.has_custom_inclusion()) {
      // equal inclusion probabilities: jump between successes with geometric gaps
      const int size = static_cast<int>(cell.size());
      const double p = static_cast<double>(law.tau()) / size;
      const double weight = 1.0 / (q * p);
      if (p >= 1.0) {
        for (const int i : cell) {
          out.indices.push_back(i);
          out.weights.push_back(weight);
        }
        return;
      }
      std::geometric_distribution<int> gap(p);
      for (long pos = gap(rng); pos < size; pos += 1 + gap(rng)) {
        out.indices.push_back(cell[pos]);
        out.weights.push_back(weight);
      }
      return;
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const int i : cell) {
      const double p = law.inclusion(i);
      if (unit(rng) < p) {
        out.indices.push_back(i);
        out.weights.push_back(1.0 / (q * p));
      }
    }
  }

  DrawnBatch draw(const SamplingLaw& law, Rng& rng) {
    DrawnBatch out;
    draw(law, rng, out);
    return out;
  }

 private:
  static std::discrete_distribution<int> probs(const Partitioning& p) {
    std::vector<double> q(p.num_cells());
    for (int j = 0; j < p.num_cells(); ++j) q[j] = p.prob(j);
    return std::discrete_distribution<int>(q.begin(), q.end());
  }

  std::discrete_distribution<int> cell_choice_;
  std::vector<std::vector<int>> scratch_;
};

inline DrawnBatch draw(const SamplingLaw& law, Rng& rng) {
  BatchSampler sampler(law.partitioning());
  return sampler.draw(law, rng);
}

struct Outcome {
  DrawnBatch batch;
  double probability = 0.0;
};

inline constexpr double kMaxEnumeratedOutcomes = 1e6;

/// Every outcome of the law with its probability. Only for small instances:
/// throws RangeError when the outcome count exceeds `max_outcomes`.
inline std::vector<Outcome> enumerate_distribution(const SamplingLaw& law,
                                                   double max_outcomes = kMaxEnumeratedOutcomes) {
  const auto& part = law.partitioning();
  const bool nice = law.kind() == SamplingKind::partition_nice;
  double count = 0.0;
  for (int j = 0; j < part.num_cells(); ++j) {
    const int m = part.cell_size(j);
    if (nice) {
      double c = 1.0;
      for (int t = 0; t < law.tau(); ++t) c = c * (m - t) / (t + 1);
      count += std::round(c);
    } else {
      count += std::ldexp(1.0, m);
    }
  }
  if (count > max_outcomes) {
    throw RangeError("distribution has " + std::to_string(count) +
                     " outcomes, more than the enumeration limit");
  }

  std::vector<Outcome> outcomes;
  outcomes.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < part.num_cells(); ++j) {
    const auto cell = part.cell(j);
    const int m = static_cast<int>(cell.size());
    const double q = part.prob(j);
    if (nice) {
      const int tau = law.tau();
      double subsets = 1.0;
      for (int t = 0; t < tau; ++t) subsets = subsets * (m - t) / (t + 1);
      subsets = std::round(subsets);
      const double weight = static_cast<double>(m) / (q * tau);
      std::vector<int> pos(tau);
      std::iota(pos.begin(), pos.end(), 0);
      while (true) {
        Outcome o;
        o.batch.cell = j;
        for (const int p : pos) {
          o.batch.indices.push_back(cell[p]);
          o.batch.weights.push_back(weight);
        }
        o.probability = q / subsets;
        outcomes.push_back(std::move(o));
        int t = tau - 1;
        while (t >= 0 && pos[t] == m - tau + t) --t;
        if (t < 0) break;
        ++pos[t];
        for (int u = t + 1; u < tau; ++u) pos[u] = pos[u - 1] + 1;
      }
    } else {
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        Outcome o;
        o.batch.cell = j;
        double prob = q;
        for (int t = 0; t < m; ++t) {
          const int i = cell[t];
          const double p = law.inclusion(i);
          if (mask & (std::uint64_t{1} << t)) {
            prob *= p;
            o.batch.indices.push_back(i);
            o.batch.weights.push_back(1.0 / (q * p));
          } else {
            prob *= 1.0 - p;
          }
        }
        o.probability = prob;
        outcomes.push_back(std::move(o));
      }
    }
  }
  return outcomes;
}

/// grad f_v(x) = (1/n) sum_{i in S} v_i grad f_i(x); the empty batch gives zero.
inline Vector stochastic_grad(const Objective& obj, const Dataset& data, const DrawnBatch& batch,
                              const Vector& x) {
  detail::check_dimension(data, x);
  Vector out = Vector::Zero(x.size());
  double weight_sum = 0.0;
  for (std::size_t t = 0; t < batch.indices.size(); ++t) {
    const int i = batch.indices[t];
    const double v = batch.weights[t];
    data.add_row(i, v * obj.loss_slope(data.row_dot(i, x), data.label(i)), out);
    weight_sum += v;
  }
  out += (weight_sum * obj.lambda) * x;
  out /= static_cast<double>(data.rows());
  return out;
}

}  // namespace adabatch
