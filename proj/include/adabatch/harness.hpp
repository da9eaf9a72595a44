#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "adabatch/data.hpp"
#include "adabatch/error.hpp"
#include "adabatch/objectives.hpp"
#include "adabatch/optimizer.hpp"
#include "adabatch/rates.hpp"
#include "adabatch/sampling.hpp"

namespace adabatch {

using Json = nlohmann::json;

enum class StartPoint { random, reference };

/// One experiment configuration. Everything but the data source has a default;
/// the source is either `data_path` or `synthetic = true`.
struct ExperimentSpec {
  std::string data_path;
  bool synthetic = false;
  int synthetic_n = 1000;
  int synthetic_d = 20;
  double synthetic_noise = 1.0;
  std::optional<int> dimension;
  std::uint64_t seed = 1;  // synthetic data and shuffled partitions

  Model model = Model::ridge;
  double lambda = 0.1;
  LogisticSign sign = LogisticSign::verbatim;
  double ref_tol = 1e-12;

  int partitions = 1;
  PartitionScheme partition_scheme = PartitionScheme::contiguous;
  ProbRule partition_probs = ProbRule::proportional;

  SamplingKind sampling = SamplingKind::partition_nice;
  std::optional<int> tau;
  std::vector<int> tau_grid;  // empty: default grid

  double eps = 0.1;
  std::optional<double> cap;  // unset: 2 sigma(x0, tau0)
  double max_epochs = 100.0;
  double stop_factor = 0.1;
  StartPoint start = StartPoint::random;

  int seeds = 10;
  std::uint64_t run_seed = 0;  // run r uses run_seed + r
  int workers = 0;             // 0: hardware concurrency

  std::string reference = "reference.json";
  std::string out = ".";
};

namespace detail {

template <typename Enum>
Enum parse_enum(const std::string& key, const std::string& value,
                std::initializer_list<std::pair<const char*, Enum>> choices) {
  for (const auto& [name, e] : choices) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : choices) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  throw RangeError("bad value '" + value + "' for " + key + " (expected one of " + allowed + ")");
}

inline std::vector<int> parse_int_list(const Json& v) {
  std::vector<int> out;
  if (v.is_array()) {
    for (const auto& e : v) out.push_back(e.get<int>());
    return out;
  }
  std::stringstream ss(v.get<std::string>());
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int value = std::stoi(item, &used);
    if (used != item.size()) throw RangeError("bad integer '" + item + "' in list");
    out.push_back(value);
  }
  return out;
}

inline std::optional<double> parse_cap(const Json& v) {
  if (v.is_number()) return v.get<double>();
  const auto s = v.get<std::string>();
  if (s == "auto") return std::nullopt;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

}  // namespace detail

/// Overlays the keys of a flat JSON object onto `spec`. Unknown keys are errors.
inline void apply_config(ExperimentSpec& spec, const Json& config) {
  require(config.is_object(), "config must be a flat JSON object");
  for (const auto& [key, v] : config.items()) {
    try {
      if (key == "data") spec.data_path = v.get<std::string>();
      else if (key == "synthetic") spec.synthetic = v.get<bool>();
      else if (key == "synthetic_n") spec.synthetic_n = v.get<int>();
      else if (key == "synthetic_d") spec.synthetic_d = v.get<int>();
      else if (key == "synthetic_noise") spec.synthetic_noise = v.get<double>();
      else if (key == "dimension") spec.dimension = v.get<int>();
      else if (key == "seed") spec.seed = v.get<std::uint64_t>();
      else if (key == "model")
        spec.model = detail::parse_enum<Model>(key, v.get<std::string>(),
                                               {{"ridge", Model::ridge}, {"logistic", Model::logistic}});
      else if (key == "lambda") spec.lambda = v.get<double>();
      else if (key == "logistic_sign")
        spec.sign = detail::parse_enum<LogisticSign>(
            key, v.get<std::string>(),
            {{"verbatim", LogisticSign::verbatim}, {"conventional", LogisticSign::conventional}});
      else if (key == "ref_tol") spec.ref_tol = v.get<double>();
      else if (key == "partitions") spec.partitions = v.get<int>();
      else if (key == "partition_scheme")
        spec.partition_scheme = detail::parse_enum<PartitionScheme>(
            key, v.get<std::string>(),
            {{"contiguous", PartitionScheme::contiguous}, {"shuffled", PartitionScheme::shuffled}});
      else if (key == "partition_probs")
        spec.partition_probs = detail::parse_enum<ProbRule>(
            key, v.get<std::string>(), {{"proportional", ProbRule::proportional}, {"uniform", ProbRule::uniform}});
      else if (key == "sampling")
        spec.sampling = detail::parse_enum<SamplingKind>(
            key, v.get<std::string>(),
            {{"nice", SamplingKind::partition_nice}, {"independent", SamplingKind::partition_independent}});
      else if (key == "tau") spec.tau = v.get<int>();
      else if (key == "tau_grid") spec.tau_grid = detail::parse_int_list(v);
      else if (key == "eps") spec.eps = v.get<double>();
      else if (key == "cap") spec.cap = detail::parse_cap(v);
      else if (key == "max_epochs") spec.max_epochs = v.get<double>();
      else if (key == "stop_factor") spec.stop_factor = v.get<double>();
      else if (key == "x0")
        spec.start = detail::parse_enum<StartPoint>(
            key, v.get<std::string>(), {{"random", StartPoint::random}, {"reference", StartPoint::reference}});
      else if (key == "seeds") spec.seeds = v.get<int>();
      else if (key == "run_seed") spec.run_seed = v.get<std::uint64_t>();
      else if (key == "workers") spec.workers = v.get<int>();
      else if (key == "reference") spec.reference = v.get<std::string>();
      else if (key == "out") spec.out = v.get<std::string>();
      else throw RangeError("unknown config key '" + key + "'");
    } catch (const Json::exception& e) {
      throw RangeError("bad value for config key '" + key + "': " + e.what());
    } catch (const std::invalid_argument&) {
      throw RangeError("bad value for config key '" + key + "'");
    }
  }
}

inline Json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(0, "config " + path + ": " + e.what());
  }
}

inline void validate(const ExperimentSpec& spec) {
  require(spec.synthetic != !spec.data_path.empty(),
          "exactly one data source required: a LIBSVM path or synthetic = true");
  require(spec.lambda > 0.0, "lambda must be positive for the optimizer and rate formulas");
  require(spec.eps > 0.0, "eps must be positive");
  require(spec.max_epochs > 0.0, "max_epochs must be positive");
  require(spec.stop_factor > 0.0, "stop_factor must be positive");
  require(spec.seeds >= 1, "seeds must be at least 1");
  require(spec.partitions >= 1, "partitions must be at least 1");
  require(spec.workers >= 0, "workers must be non-negative");
  require(!spec.cap || *spec.cap > 0.0, "cap must be positive");
}

/// A fingerprint of everything that determines x*, stored in the reference file.
inline Json problem_key(const ExperimentSpec& spec) {
  Json key;
  if (spec.synthetic) {
    key["source"] = "synthetic";
    key["n"] = spec.synthetic_n;
    key["d"] = spec.synthetic_d;
    key["noise"] = spec.synthetic_noise;
    key["seed"] = spec.seed;
  } else {
    key["source"] = spec.data_path;
    if (spec.dimension) key["dimension"] = *spec.dimension;
  }
  key["model"] = spec.model == Model::ridge ? "ridge" : "logistic";
  key["lambda"] = spec.lambda;
  key["logistic_sign"] = spec.sign == LogisticSign::verbatim ? "verbatim" : "conventional";
  return key;
}

/// Dataset, partitioning and constants for a spec. Not movable: the problem
/// points into the other members.
class Experiment {
 public:
  explicit Experiment(const ExperimentSpec& spec)
      : spec_(spec),
        data_(load(spec)),
        partitioning_(make_partitioning(data_.rows(), spec.partitions, spec.partition_scheme, spec.seed,
                                        spec.partition_probs)),
        problem_(make_problem(Objective{spec.model, spec.lambda, spec.sign}, data_, partitioning_)) {}

  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentSpec& spec() const { return spec_; }
  const Dataset& data() const { return data_; }
  const Partitioning& partitioning() const { return partitioning_; }
  const Problem& problem() const { return problem_; }

  std::uint64_t run_seed(int r) const { return spec_.run_seed + static_cast<std::uint64_t>(r); }
  Vector start_point(int r, const Vector& x_star) const {
    return spec_.start == StartPoint::reference ? x_star : initial_point(data_.cols(), run_seed(r));
  }

  RunConfig run_config() const {
    RunConfig c;
    c.eps = spec_.eps;
    c.variance_cap = spec_.cap;
    c.max_epochs = spec_.max_epochs;
    c.kind = spec_.sampling;
    c.stop_factor = spec_.stop_factor;
    return c;
  }

 private:
  static Dataset load(const ExperimentSpec& spec) {
    validate(spec);
    if (spec.synthetic) {
      const auto labels = spec.model == Model::logistic ? SyntheticLabels::binary : SyntheticLabels::linear;
      return generate_synthetic(spec.synthetic_n, spec.synthetic_d, spec.seed, spec.synthetic_noise, labels).data;
    }
    return load_libsvm(spec.data_path, spec.dimension);
  }

  ExperimentSpec spec_;
  Dataset data_;
  Partitioning partitioning_;
  Problem problem_;
};

struct Reference {
  Vector x_star;
  double f_star = 0.0;
  double grad_norm = 0.0;
  std::vector<double> sq_dist0;  // per run seed
  Json key;
};

inline Json to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline Reference compute_reference(const Experiment& ex) {
  const auto& spec = ex.spec();
  const auto& obj = ex.problem().objective;
  Reference ref;
  ref.x_star = solve_reference(obj, ex.data(), ReferenceOptions{spec.ref_tol, 200});
  ref.f_star = value(obj, ex.data(), ref.x_star);
  ref.grad_norm = grad(obj, ex.data(), ref.x_star).norm();
  for (int r = 0; r < spec.seeds; ++r) ref.sq_dist0.push_back((ex.start_point(r, ref.x_star) - ref.x_star).squaredNorm());
  ref.key = problem_key(spec);
  return ref;
}

inline Json reference_json(const Reference& ref) {
  Json j;
  j["problem"] = ref.key;
  j["x_star"] = to_json(ref.x_star);
  j["f_star"] = ref.f_star;
  j["grad_norm"] = ref.grad_norm;
  j["sq_dist0"] = ref.sq_dist0;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

/// Loads the reference for `ex`, rejecting files computed for another problem.
inline Reference load_reference(const Experiment& ex) {
  std::ifstream in(ex.spec().reference);
  if (!in) throw Error("reference file " + ex.spec().reference + " not found; run `reference` first");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(0, "reference " + ex.spec().reference + ": " + e.what());
  }
  Reference ref;
  ref.key = j.at("problem");
  if (ref.key != problem_key(ex.spec())) {
    throw Error("reference file " + ex.spec().reference + " was computed for a different problem");
  }
  ref.x_star = vector_from_json(j.at("x_star"));
  require(ref.x_star.size() == ex.data().cols(), "reference dimension does not match the data");
  ref.f_star = j.at("f_star").get<double>();
  ref.grad_norm = j.at("grad_norm").get<double>();
  ref.sq_dist0 = j.at("sq_dist0").get<std::vector<double>>();
  return ref;
}

inline constexpr const char* kTraceHeader = "k,epoch,tau,gamma,L_hat,sigma_hat,sq_dist,rel_err";

inline void write_trace_csv(const Trace& trace, std::ostream& out) {
  const auto old = out.precision(17);
  out << kTraceHeader << '\n';
  for (const auto& r : trace.records) {
    out << r.k << ',' << r.epoch << ',' << r.tau << ',' << r.gamma << ',' << r.L_hat << ','
        << r.sigma_hat << ',' << r.sq_dist << ',' << r.rel_err << '\n';
  }
  out.precision(old);
}

inline std::string trace_csv(const Trace& trace) {
  std::ostringstream out;
  write_trace_csv(trace, out);
  return out.str();
}

/// Runs body(0..count-1) on up to `workers` threads; rethrows the first failure.
inline void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

struct RunResult {
  Trace trace;
  bool diverged = false;
  std::string error;
};

enum class RunMode { adaptive, fixed };

/// One seeded run; divergence is captured, not thrown.
inline RunResult run_one(const Experiment& ex, const Reference& ref, RunMode mode, int tau, int r,
                         bool keep_records) {
  RunConfig config = ex.run_config();
  config.keep_records = keep_records;
  const Vector x0 = ex.start_point(r, ref.x_star);
  Rng rng(ex.run_seed(r));
  RunResult out;
  try {
    if (mode == RunMode::adaptive) {
      out.trace = run_adaptive(ex.problem(), config, x0, ref.x_star, rng);
    } else {
      const auto stats = grad_norm_stats(ex.problem().objective, ex.data(), ex.partitioning(), ref.x_star);
      const double sigma_star = gradient_noise(stats, ex.partitioning(), config.kind, tau);
      out.trace = run_fixed(ex.problem(), tau, config, sigma_star, x0, ref.x_star, rng);
    }
  } catch (const DivergenceError& e) {
    out.trace = e.trace();
    out.diverged = true;
    out.error = e.what();
  }
  return out;
}

/// Mean and sample standard deviation of epochs-to-target; NaN unless every run converged.
struct EpochStats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  int converged = 0;
  int diverged = 0;
  int runs = 0;
};

inline EpochStats epoch_stats(const std::vector<RunResult>& results) {
  EpochStats s;
  s.runs = static_cast<int>(results.size());
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.diverged) ++s.diverged;
    if (r.trace.converged()) {
      ++s.converged;
      sum += r.trace.epochs_to_target();
    }
  }
  if (s.converged != s.runs || s.runs == 0) return s;
  s.mean = sum / s.runs;
  double ss = 0.0;
  for (const auto& r : results) ss += std::pow(r.trace.epochs_to_target() - s.mean, 2);
  s.sd = s.runs > 1 ? std::sqrt(ss / (s.runs - 1)) : 0.0;
  return s;
}

inline Json to_json(const EpochStats& s) {
  return Json{{"mean", s.mean}, {"sd", s.sd}, {"converged", s.converged}, {"diverged", s.diverged}, {"runs", s.runs}};
}

/// Theoretical tau* at x*.
inline int theoretical_optimal_batch(const Experiment& ex, const Reference& ref) {
  const auto stats = grad_norm_stats(ex.problem().objective, ex.data(), ex.partitioning(), ref.x_star);
  return optimal_batch(ex.problem().constants, stats, ex.partitioning(), ex.spec().sampling, ex.problem().mu(),
                       ex.spec().eps);
}

/// {1, 2, 4, ...} up to the largest feasible tau, plus that endpoint and tau*-1, tau*, tau*+1.
inline std::vector<int> default_tau_grid(int tau_max, int tau_star) {
  std::vector<int> grid;
  for (long t = 1; t <= tau_max; t *= 2) grid.push_back(static_cast<int>(t));
  grid.push_back(tau_max);
  for (int t = tau_star - 1; t <= tau_star + 1; ++t) {
    if (t >= 1 && t <= tau_max) grid.push_back(t);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

struct GridRow {
  int tau = 0;
  double L_tau = 0.0;
  double sigma_star = 0.0;
  double T = 0.0;
  EpochStats epochs;
};

struct ResultTable {
  std::vector<GridRow> rows;  // sorted by tau
  EpochStats adaptive;
  double adaptive_mean_tau = 0.0;  // mean tau^k over the adaptive runs' iterations
  int tau_star = 0;

  /// Row with the smallest mean epochs among rows where every run converged.
  const GridRow* best_fixed() const {
    const GridRow* best = nullptr;
    for (const auto& r : rows) {
      if (std::isnan(r.epochs.mean)) continue;
      if (!best || r.epochs.mean < best->epochs.mean) best = &r;
    }
    return best;
  }
};

inline constexpr const char* kTableHeader =
    "row,tau,L_tau,sigma_star,T_theory,epochs_mean,epochs_sd,converged,diverged,runs";

inline void write_table_csv(const ResultTable& table, std::ostream& out) {
  const auto old = out.precision(17);
  out << kTableHeader << '\n';
  for (const auto& r : table.rows) {
    out << "fixed," << r.tau << ',' << r.L_tau << ',' << r.sigma_star << ',' << r.T << ',' << r.epochs.mean << ','
        << r.epochs.sd << ',' << r.epochs.converged << ',' << r.epochs.diverged << ',' << r.epochs.runs << '\n';
  }
  const auto& a = table.adaptive;
  out << "adaptive," << table.adaptive_mean_tau << ",nan,nan,nan," << a.mean << ',' << a.sd << ',' << a.converged
      << ',' << a.diverged << ',' << a.runs << '\n';
  out.precision(old);
}

inline Json summary_json(const ResultTable& table) {
  Json j;
  j["tau_star_theoretical"] = table.tau_star;
  j["epochs_adaptive"] = table.adaptive.mean;
  j["epochs_adaptive_stats"] = to_json(table.adaptive);
  const GridRow* best = table.best_fixed();
  j["epochs_best_fixed"] = best ? best->epochs.mean : std::numeric_limits<double>::quiet_NaN();
  j["tau_best_fixed"] = best ? Json(best->tau) : Json(nullptr);
  Json rows = Json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"tau", r.tau},
                    {"L_tau", r.L_tau},
                    {"sigma_star", r.sigma_star},
                    {"T", r.T},
                    {"epochs", to_json(r.epochs)}});
  }
  j["T_table"] = rows;
  return j;
}

/// Grid search: every (tau, seed) fixed run plus one adaptive run per seed.
inline ResultTable grid_search(const Experiment& ex, const Reference& ref) {
  const auto& spec = ex.spec();
  const auto& part = ex.partitioning();
  const auto& c = ex.problem().constants;
  const double mu = ex.problem().mu();
  const auto stats = grad_norm_stats(ex.problem().objective, ex.data(), part, ref.x_star);

  ResultTable table;
  table.tau_star = optimal_batch(c, stats, part, spec.sampling, mu, spec.eps);
  std::vector<int> grid = spec.tau_grid.empty() ? default_tau_grid(part.min_cell_size(), table.tau_star) : spec.tau_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (const int tau : grid) detail::check_batch_size(part, spec.sampling, tau);

  double r0 = 0.0;
  for (const double v : ref.sq_dist0) r0 += v;
  r0 /= static_cast<double>(ref.sq_dist0.size());

  const int seeds = spec.seeds;
  const int fixed_jobs = static_cast<int>(grid.size()) * seeds;
  std::vector<RunResult> results(fixed_jobs + seeds);
  parallel_for(fixed_jobs + seeds, spec.workers, [&](int job) {
    if (job < fixed_jobs) {
      results[job] = run_one(ex, ref, RunMode::fixed, grid[job / seeds], job % seeds, false);
    } else {
      results[job] = run_one(ex, ref, RunMode::adaptive, 0, job - fixed_jobs, true);
    }
  });

  for (std::size_t g = 0; g < grid.size(); ++g) {
    GridRow row;
    row.tau = grid[g];
    row.L_tau = expected_smoothness(c, part, spec.sampling, row.tau);
    row.sigma_star = gradient_noise(stats, part, spec.sampling, row.tau);
    row.T = r0 > 0.0 ? total_complexity(row.tau, row.L_tau, row.sigma_star, mu, spec.eps, r0)
                     : std::numeric_limits<double>::quiet_NaN();
    std::vector<RunResult> runs(results.begin() + g * seeds, results.begin() + (g + 1) * seeds);
    row.epochs = epoch_stats(runs);
    table.rows.push_back(std::move(row));
  }
  std::vector<RunResult> adaptive(results.begin() + fixed_jobs, results.end());
  table.adaptive = epoch_stats(adaptive);
  double tau_sum = 0.0;
  long tau_count = 0;
  for (const auto& r : adaptive) {
    for (const auto& rec : r.trace.records) {
      tau_sum += rec.tau;
      ++tau_count;
    }
  }
  table.adaptive_mean_tau = tau_count > 0 ? tau_sum / tau_count : std::numeric_limits<double>::quiet_NaN();
  return table;
}

inline std::filesystem::path out_path(const ExperimentSpec& spec, const std::string& name) {
  return std::filesystem::path(spec.out) / name;
}

inline void cmd_reference(const ExperimentSpec& spec, std::ostream& log) {
  Experiment ex(spec);
  const Reference ref = compute_reference(ex);
  write_text(spec.reference, reference_json(ref).dump(2) + "\n");
  log << "reference: f* = " << ref.f_star << ", ||grad f(x*)|| = " << ref.grad_norm << " -> " << spec.reference
      << '\n';
}

/// Writes <prefix>_seed<r>.csv per run and <prefix>_summary.json.
inline void emit_runs(const Experiment& ex, const Reference& ref, RunMode mode, int tau, const std::string& prefix,
                      std::ostream& log) {
  const auto& spec = ex.spec();
  std::vector<RunResult> results(spec.seeds);
  parallel_for(spec.seeds, spec.workers, [&](int r) { results[r] = run_one(ex, ref, mode, tau, r, true); });

  Json runs = Json::array();
  for (int r = 0; r < spec.seeds; ++r) {
    const auto& res = results[r];
    const std::string file = prefix + "_seed" + std::to_string(ex.run_seed(r)) + ".csv";
    write_text(out_path(spec, file), trace_csv(res.trace));
    Json run{{"seed", ex.run_seed(r)},
             {"trace", file},
             {"status", to_string(res.trace.status)},
             {"epochs_to_target", res.trace.epochs_to_target()},
             {"iterations", res.trace.last.k},
             {"final_rel_err", res.trace.last.rel_err},
             {"variance_cap", res.trace.variance_cap}};
    if (res.diverged) run["error"] = res.error;
    runs.push_back(std::move(run));
  }
  const EpochStats stats = epoch_stats(results);
  Json summary;
  summary["tau_star_theoretical"] = theoretical_optimal_batch(ex, ref);
  if (mode == RunMode::adaptive) {
    summary["epochs_adaptive"] = stats.mean;
  } else {
    summary["tau"] = tau;
    summary["epochs_fixed"] = stats.mean;
  }
  summary["epochs"] = to_json(stats);
  summary["runs"] = runs;
  write_text(out_path(spec, prefix + "_summary.json"), summary.dump(2) + "\n");
  log << prefix << ": " << stats.converged << "/" << stats.runs << " runs reached the target, mean epochs "
      << stats.mean << '\n';
}

inline void cmd_adaptive(const ExperimentSpec& spec, std::ostream& log) {
  Experiment ex(spec);
  const Reference ref = load_reference(ex);
  emit_runs(ex, ref, RunMode::adaptive, 0, "adaptive", log);
}

inline void cmd_fixed(const ExperimentSpec& spec, std::ostream& log) {
  require(spec.tau.has_value(), "fixed runs need a batch size (tau)");
  Experiment ex(spec);
  const Reference ref = load_reference(ex);
  detail::check_batch_size(ex.partitioning(), spec.sampling, *spec.tau);
  emit_runs(ex, ref, RunMode::fixed, *spec.tau, "fixed_tau" + std::to_string(*spec.tau), log);
}

inline ResultTable cmd_grid(const ExperimentSpec& spec, std::ostream& log) {
  Experiment ex(spec);
  const Reference ref = load_reference(ex);
  ResultTable table = grid_search(ex, ref);
  std::ostringstream csv;
  write_table_csv(table, csv);
  write_text(out_path(spec, "grid.csv"), csv.str());
  write_text(out_path(spec, "summary.json"), summary_json(table).dump(2) + "\n");
  const GridRow* best = table.best_fixed();
  log << "grid: tau* = " << table.tau_star << ", best fixed tau = " << (best ? std::to_string(best->tau) : "none")
      << ", adaptive mean epochs = " << table.adaptive.mean << '\n';
  return table;
}

}  // namespace adabatch
