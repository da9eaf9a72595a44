#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "adabatch/error.hpp"

namespace adabatch {

using Vector = Eigen::VectorXd;

/// Feature matrix plus labels of a finite-sum problem. Row i is the example a_i
/// with label b_i. Storage is dense when more than a quarter of the entries are
/// non-zero and sparse otherwise; every accessor behaves identically.
class Dataset {
 public:
  using DenseRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;
  using Triplet = Eigen::Triplet<double>;

  static constexpr double kDenseThreshold = 0.25;

  Dataset(const Eigen::MatrixXd& features, Vector labels)
      : labels_(std::move(labels)) {
    require(features.rows() >= 1 && features.cols() >= 1, "dataset must have n >= 1 and d >= 1");
    require(features.rows() == labels_.size(), "label count must match row count");
    const auto nnz = (features.array() != 0.0).count();
    if (static_cast<double>(nnz) > kDenseThreshold * static_cast<double>(features.size())) {
      features_ = DenseRows(features);
    } else {
      features_ = SparseRows(DenseRows(features).sparseView());
    }
  }

  Dataset(int rows, int cols, const std::vector<Triplet>& entries, Vector labels)
      : labels_(std::move(labels)) {
    require(rows >= 1 && cols >= 1, "dataset must have n >= 1 and d >= 1");
    require(rows == labels_.size(), "label count must match row count");
    SparseRows sparse(rows, cols);
    sparse.setFromTriplets(entries.begin(), entries.end());
    sparse.makeCompressed();
    const double density =
        static_cast<double>(sparse.nonZeros()) / (static_cast<double>(rows) * cols);
    if (density > kDenseThreshold) {
      features_ = DenseRows(sparse);
    } else {
      features_ = std::move(sparse);
    }
  }

  int rows() const { return static_cast<int>(labels_.size()); }
  int cols() const {
    return std::visit([](const auto& m) { return static_cast<int>(m.cols()); }, features_);
  }
  bool is_sparse() const { return std::holds_alternative<SparseRows>(features_); }

  const Vector& labels() const { return labels_; }
  double label(int i) const { return labels_[i]; }

  /// a_i^T x
  double row_dot(int i, const Vector& x) const {
    if (const auto* dense = std::get_if<DenseRows>(&features_)) return dense->row(i).dot(x);
    const auto& sparse = std::get<SparseRows>(features_);
    double acc = 0.0;
    for (SparseRows::InnerIterator it(sparse, i); it; ++it) acc += it.value() * x[it.index()];
    return acc;
  }

  /// out += alpha * a_i
  void add_row(int i, double alpha, Vector& out) const {
    if (const auto* dense = std::get_if<DenseRows>(&features_)) {
      out.noalias() += alpha * dense->row(i).transpose();
      return;
    }
    const auto& sparse = std::get<SparseRows>(features_);
    for (SparseRows::InnerIterator it(sparse, i); it; ++it) out[it.index()] += alpha * it.value();
  }

  double row_squared_norm(int i) const {
    if (const auto* dense = std::get_if<DenseRows>(&features_)) return dense->row(i).squaredNorm();
    const auto& sparse = std::get<SparseRows>(features_);
    double acc = 0.0;
    for (SparseRows::InnerIterator it(sparse, i); it; ++it) acc += it.value() * it.value();
    return acc;
  }

  /// Calls fn(column, value) for every stored entry of row i.
  template <typename Fn>
  void for_each_in_row(int i, Fn&& fn) const {
    if (const auto* dense = std::get_if<DenseRows>(&features_)) {
      for (Eigen::Index j = 0; j < dense->cols(); ++j) {
        if ((*dense)(i, j) != 0.0) fn(static_cast<int>(j), (*dense)(i, j));
      }
      return;
    }
    const auto& sparse = std::get<SparseRows>(features_);
    for (SparseRows::InnerIterator it(sparse, i); it; ++it) fn(static_cast<int>(it.index()), it.value());
  }

  Eigen::MatrixXd dense() const {
    return std::visit([](const auto& m) { return Eigen::MatrixXd(m); }, features_);
  }

 private:
  std::variant<DenseRows, SparseRows> features_;
  Vector labels_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> to_double(std::string_view token) {
  double value = 0.0;
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline std::optional<long long> to_index(std::string_view token) {
  long long value = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses LIBSVM text (`label idx:val idx:val ...`, 1-based increasing indices).
/// Blank lines are skipped. `dimension`, when given, overrides the inferred d
/// and must cover every referenced index.
inline Dataset parse_libsvm(std::istream& in, std::optional<int> dimension = std::nullopt) {
  std::vector<Dataset::Triplet> entries;
  std::vector<double> labels;
  long long max_index = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = detail::trim(line);
    if (rest.empty()) continue;
    const int row = static_cast<int>(labels.size());
    auto next_token = [&rest]() {
      const auto end = rest.find_first_of(" \t");
      std::string_view token = rest.substr(0, end);
      rest = end == std::string_view::npos ? std::string_view{} : detail::trim(rest.substr(end));
      return token;
    };
    const auto label_token = next_token();
    const auto label = detail::to_double(label_token);
    if (!label) throw ParseError(line_no, "non-numeric label '" + std::string(label_token) + "'");
    labels.push_back(*label);
    long long previous = 0;
    while (!rest.empty()) {
      const auto token = next_token();
      const auto colon = token.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(line_no, "expected idx:val, got '" + std::string(token) + "'");
      }
      const auto index = detail::to_index(token.substr(0, colon));
      if (!index || *index <= 0) {
        throw ParseError(line_no, "non-positive or non-integer index in '" + std::string(token) + "'");
      }
      if (*index <= previous) throw ParseError(line_no, "indices must be strictly increasing");
      const auto value = detail::to_double(token.substr(colon + 1));
      if (!value) throw ParseError(line_no, "non-numeric value in '" + std::string(token) + "'");
      previous = *index;
      max_index = std::max(max_index, *index);
      entries.emplace_back(row, static_cast<int>(*index - 1), *value);
    }
  }
  if (labels.empty()) throw ParseError(line_no, "empty input");
  long long d = max_index;
  if (dimension) {
    if (*dimension < max_index) {
      throw RangeError("dimension override " + std::to_string(*dimension) +
                       " smaller than largest index " + std::to_string(max_index));
    }
    d = *dimension;
  }
  require(d >= 1, "dataset has no feature columns; pass an explicit dimension");
  Vector b = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return Dataset(static_cast<int>(labels.size()), static_cast<int>(d), entries, std::move(b));
}

inline Dataset parse_libsvm(std::string_view text, std::optional<int> dimension = std::nullopt) {
  std::istringstream in{std::string(text)};
  return parse_libsvm(in, dimension);
}

inline Dataset load_libsvm(const std::string& path, std::optional<int> dimension = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open data file '" + path + "'");
  return parse_libsvm(in, dimension);
}

/// Writes LIBSVM text with 17 significant digits; zero entries are omitted.
inline void write_libsvm(const Dataset& data, std::ostream& out) {
  const auto old_precision = out.precision(17);
  for (int i = 0; i < data.rows(); ++i) {
    out << data.label(i);
    data.for_each_in_row(i, [&out](int j, double v) { out << ' ' << (j + 1) << ':' << v; });
    out << '\n';
  }
  out.precision(old_precision);
}

enum class SyntheticLabels { linear, binary };

struct SyntheticProblem {
  Dataset data;
  Vector planted;  // the x used to generate labels
};

/// Rows from a seeded standard normal; labels from a planted x ~ N(0, I) plus
/// Gaussian noise. Binary labels take the sign of the noisy linear response.
inline SyntheticProblem generate_synthetic(int n, int d, std::uint64_t seed, double noise,
                                           SyntheticLabels kind = SyntheticLabels::linear) {
  require(n >= 1 && d >= 1, "synthetic data needs n >= 1 and d >= 1");
  require(noise >= 0.0, "noise level must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = normal(rng);
  Vector planted(d);
  for (int j = 0; j < d; ++j) planted[j] = normal(rng);
  Vector b = a * planted;
  if (noise > 0.0) {
    for (int i = 0; i < n; ++i) b[i] += noise * normal(rng);
  }
  if (kind == SyntheticLabels::binary) {
    for (int i = 0; i < n; ++i) b[i] = b[i] >= 0.0 ? 1.0 : -1.0;
  }
  return {Dataset(a, std::move(b)), std::move(planted)};
}

/// Disjoint cells C_j covering {0..n-1}, each chosen with probability q_j.
class Partitioning {
 public:
  static constexpr double kProbabilityTolerance = 1e-12;

  Partitioning(std::vector<std::vector<int>> cells, std::vector<double> probs)
      : cells_(std::move(cells)), probs_(std::move(probs)) {
    require(!cells_.empty(), "partitioning needs at least one cell");
    require(cells_.size() == probs_.size(), "one probability per cell required");
    int n = 0;
    for (const auto& c : cells_) {
      require(!c.empty(), "partition cells must be non-empty");
      n += static_cast<int>(c.size());
    }
    cell_of_.assign(n, -1);
    for (std::size_t j = 0; j < cells_.size(); ++j) {
      for (const int i : cells_[j]) {
        require(i >= 0 && i < n, "cell index out of range");
        require(cell_of_[i] < 0, "partition cells must be disjoint");
        cell_of_[i] = static_cast<int>(j);
      }
    }
    double total = 0.0;
    for (const double q : probs_) {
      require(q > 0.0 && std::isfinite(q), "cell probabilities must be positive");
      total += q;
    }
    require(std::abs(total - 1.0) <= kProbabilityTolerance, "cell probabilities must sum to 1");
  }

  int n() const { return static_cast<int>(cell_of_.size()); }
  int num_cells() const { return static_cast<int>(cells_.size()); }
  std::span<const int> cell(int j) const { return cells_[j]; }
  int cell_size(int j) const { return static_cast<int>(cells_[j].size()); }
  double prob(int j) const { return probs_[j]; }
  int cell_of(int i) const { return cell_of_[i]; }
  int min_cell_size() const {
    int m = cell_size(0);
    for (int j = 1; j < num_cells(); ++j) m = std::min(m, cell_size(j));
    return m;
  }

 private:
  std::vector<std::vector<int>> cells_;
  std::vector<double> probs_;
  std::vector<int> cell_of_;
};

enum class PartitionScheme { contiguous, shuffled };
enum class ProbRule { proportional, uniform };

/// Splits {0..n-1} into K cells. The first n mod K cells hold ceil(n/K) indices
/// and the rest floor(n/K). `shuffled` permutes the indices with `seed` first.
inline Partitioning make_partitioning(int n, int num_cells,
                                      PartitionScheme scheme = PartitionScheme::contiguous,
                                      std::uint64_t seed = 0,
                                      ProbRule rule = ProbRule::proportional) {
  require(n >= 1, "n must be positive");
  require(num_cells >= 1 && num_cells <= n, "need 1 <= K <= n");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (scheme == PartitionScheme::shuffled) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> cells(num_cells);
  std::vector<double> probs(num_cells);
  const int base = n / num_cells;
  const int extra = n % num_cells;
  int next = 0;
  for (int j = 0; j < num_cells; ++j) {
    const int size = base + (j < extra ? 1 : 0);
    cells[j].assign(order.begin() + next, order.begin() + next + size);
    std::sort(cells[j].begin(), cells[j].end());
    next += size;
    probs[j] = rule == ProbRule::proportional ? static_cast<double>(size) / n : 1.0 / num_cells;
  }
  return Partitioning(std::move(cells), std::move(probs));
}

}  // namespace adabatch
