#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "adabatch/harness.hpp"

namespace {

using adabatch::Json;

template <typename T>
void option(CLI::App& app, Json& overlay, const std::string& flag, const std::string& key, const std::string& help) {
  app.add_option_function<T>(flag, [&overlay, key](const T& v) { overlay[key] = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive batch size SGD experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  Json overlay = Json::object();
  app.add_option("--config", config_path, "flat JSON config file; flags override its keys");
  option<std::string>(app, overlay, "--data", "data", "LIBSVM data file");
  app.add_flag_function("--synthetic", [&](std::int64_t) { overlay["synthetic"] = true; },
                        "use a synthetic planted-model dataset");
  option<int>(app, overlay, "--synthetic-n", "synthetic_n", "synthetic example count");
  option<int>(app, overlay, "--synthetic-d", "synthetic_d", "synthetic dimension");
  option<double>(app, overlay, "--noise", "synthetic_noise", "synthetic label noise level");
  option<int>(app, overlay, "--dimension", "dimension", "override the LIBSVM dimension");
  option<std::uint64_t>(app, overlay, "--seed", "seed", "seed for synthetic data and shuffled partitions");
  option<std::string>(app, overlay, "--model", "model", "ridge or logistic");
  option<double>(app, overlay, "--lambda", "lambda", "regularization weight");
  option<std::string>(app, overlay, "--logistic-sign", "logistic_sign", "verbatim or conventional");
  option<double>(app, overlay, "--ref-tol", "ref_tol", "gradient-norm tolerance of the reference solve");
  option<int>(app, overlay, "--partitions", "partitions", "number of partition cells K");
  option<std::string>(app, overlay, "--partition-scheme", "partition_scheme", "contiguous or shuffled");
  option<std::string>(app, overlay, "--partition-probs", "partition_probs", "proportional or uniform");
  option<std::string>(app, overlay, "--sampling", "sampling", "nice or independent");
  option<int>(app, overlay, "--tau", "tau", "batch size for fixed runs");
  option<std::string>(app, overlay, "--tau-grid", "tau_grid", "comma-separated batch sizes for grid");
  option<double>(app, overlay, "--eps", "eps", "target neighborhood");
  option<std::string>(app, overlay, "--cap", "cap", "variance cap C: a number, auto or inf");
  option<double>(app, overlay, "--max-epochs", "max_epochs", "epoch budget per run");
  option<double>(app, overlay, "--stop-factor", "stop_factor", "stop when rel_err <= stop_factor * eps");
  option<std::string>(app, overlay, "--x0", "x0", "random or reference");
  option<int>(app, overlay, "--seeds", "seeds", "runs per configuration");
  option<std::uint64_t>(app, overlay, "--run-seed", "run_seed", "seed of the first run");
  option<int>(app, overlay, "--workers", "workers", "worker threads (0 = all cores)");
  option<std::string>(app, overlay, "--reference", "reference", "reference artifact path");
  option<std::string>(app, overlay, "--out", "out", "output directory");

  auto* reference = app.add_subcommand("reference", "solve for x* and write the reference artifact");
  auto* fixed = app.add_subcommand("fixed", "fixed-batch SGD runs at --tau");
  auto* adaptive = app.add_subcommand("adaptive", "adaptive batch size SGD runs");
  auto* grid = app.add_subcommand("grid", "fixed-batch grid over tau plus adaptive runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    adabatch::ExperimentSpec spec;
    if (!config_path.empty()) adabatch::apply_config(spec, adabatch::load_config(config_path));
    adabatch::apply_config(spec, overlay);
    if (*reference) adabatch::cmd_reference(spec, std::cout);
    else if (*fixed) adabatch::cmd_fixed(spec, std::cout);
    else if (*adaptive) adabatch::cmd_adaptive(spec, std::cout);
    else if (*grid) adabatch::cmd_grid(spec, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
