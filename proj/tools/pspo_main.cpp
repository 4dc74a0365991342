// Command-line front end: property verification, surrogate-shape datasets,
// task set generation, and seeded training/comparison experiments.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pspo/envs.hpp"
#include "pspo/experiment.hpp"
#include "pspo/random.hpp"
#include "pspo/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // property or experiment failure
constexpr int kExitUsage = 2;    // bad flags, bad config, missing files

int resolve_workers(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("PSPO_WORKERS")) {
    int v = 0;
    const std::string s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 1)
      throw pspo::ConfigError("PSPO_WORKERS must be a positive integer, got '" +
                              s + "'");
    return v;
  }
  return 1;
}

int cmd_verify(long trials, std::uint64_t seed) {
  const auto results = pspo::verify::run_all({trials, seed});
  std::size_t name_width = 8;
  for (const auto& r : results) name_width = std::max(name_width, r.name.size());
  std::cout << std::left << std::setw(static_cast<int>(name_width) + 2)
            << "property" << std::right << std::setw(9) << "trials"
            << std::setw(15) << "worst" << std::setw(11) << "tolerance"
            << "  status\n";
  bool all_passed = true;
  for (const auto& r : results) {
    std::ostringstream worst, tol;
    worst << std::scientific << std::setprecision(3) << r.worst_residual;
    tol << std::scientific << std::setprecision(0) << r.tolerance;
    std::cout << std::left << std::setw(static_cast<int>(name_width) + 2)
              << r.name << std::right << std::setw(9) << r.trials
              << std::setw(15) << worst.str() << std::setw(11) << tol.str()
              << "  " << (r.passed ? "PASS" : "FAIL");
    if (!r.note.empty()) std::cout << "  (" << r.note << ")";
    std::cout << '\n';
    all_passed = all_passed && r.passed;
  }
  std::cout << (all_passed ? "all properties passed\n"
                           : "some properties FAILED\n");
  return all_passed ? kExitOk : kExitFailure;
}

int cmd_figure1(double epsilon, double alpha, double r_min, double r_max,
                double r_step, const std::string& out) {
  std::string csv;
  try {
    csv = pspo::surrogate_shape_csv(
        pspo::surrogate_shape_dataset(epsilon, alpha, r_min, r_max, r_step));
  } catch (const std::invalid_argument& e) {
    throw pspo::ConfigError(e.what());
  }
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    std::ofstream f(out);
    if (!f) throw pspo::ConfigError("cannot open for write: " + out);
    f << csv;
    if (!f) throw pspo::ConfigError("write failed: " + out);
    std::cout << "wrote " << out << '\n';
  }
  return kExitOk;
}

int cmd_make_taskset(const std::string& out_dir, int train_count,
                     int eval_count, std::uint64_t seed) {
  if (train_count < 1 || eval_count < 1)
    throw pspo::ConfigError("train/eval counts must be positive");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const auto train =
      pspo::make_arithmetic_tasks(train_count, pspo::derive_seed(seed, 1), 0);
  const auto eval = pspo::make_arithmetic_tasks(
      eval_count, pspo::derive_seed(seed, 2), train_count);
  pspo::save_taskset(dir / "train.csv", train);
  pspo::save_taskset(dir / "eval.csv", eval);
  std::cout << "wrote " << (dir / "train.csv").string() << " (" << train_count
            << " prompts) and " << (dir / "eval.csv").string() << " ("
            << eval_count << " prompts)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& output_dir,
              int workers_flag) {
  auto cfg = pspo::load_experiment_config(config_path);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  pspo::apply_preset(cfg);
  const auto result = pspo::run_experiment(
      cfg, {cfg.train.surrogate.mode}, resolve_workers(workers_flag));
  std::cout << pspo::summary_table(result.report);
  std::cout << "artifacts in " << cfg.output_dir << '\n';
  if (result.any_diverged) {
    std::cerr << "one or more runs hit a non-finite abort; partial logs kept\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& modes_csv,
                const std::string& output_dir, int workers_flag) {
  auto cfg = pspo::load_experiment_config(config_path);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  std::vector<pspo::Mode> modes;
  std::stringstream ss(modes_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    pspo::Mode mode;
    try {
      mode = pspo::parse_mode(item);
    } catch (const std::invalid_argument& e) {
      throw pspo::ConfigError(e.what());
    }
    if (std::find(modes.begin(), modes.end(), mode) != modes.end())
      throw pspo::ConfigError("duplicate mode: " + item);
    modes.push_back(mode);
  }
  if (modes.empty()) throw pspo::ConfigError("no modes given");
  const auto result =
      pspo::run_experiment(cfg, modes, resolve_workers(workers_flag));
  std::cout << pspo::summary_table(result.report);
  std::cout << "artifacts in " << cfg.output_dir << '\n';
  if (result.any_diverged) {
    std::cerr << "one or more runs hit a non-finite abort; partial logs kept\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular policy optimization with smoothed importance ratios"};
  app.require_subcommand(1);

  long verify_trials = 10000;
  std::uint64_t verify_seed = 2024;
  auto* verify_cmd =
      app.add_subcommand("verify", "Run the property suites and report counts");
  verify_cmd->add_option("--trials", verify_trials, "Base trial count")
      ->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", verify_seed, "Generator seed");

  double f1_epsilon = 0.2, f1_alpha = 0.2;
  double f1_rmin = 0.0, f1_rmax = 2.0, f1_rstep = 0.01;
  std::string f1_out;
  auto* figure1_cmd = app.add_subcommand(
      "figure1", "Emit the per-token surrogate values and slopes over a ratio "
                 "grid as CSV");
  figure1_cmd->add_option("--epsilon", f1_epsilon, "Clip range");
  figure1_cmd->add_option("--alpha", f1_alpha, "Smoothing strength");
  figure1_cmd->add_option("--r-min", f1_rmin, "Grid start");
  figure1_cmd->add_option("--r-max", f1_rmax, "Grid end");
  figure1_cmd->add_option("--r-step", f1_rstep, "Grid step");
  figure1_cmd->add_option("--out", f1_out, "Output file ('-' for stdout)");

  std::string ts_out;
  int ts_train = 200, ts_eval = 50;
  std::uint64_t ts_seed = 0;
  auto* taskset_cmd = app.add_subcommand(
      "make-taskset", "Generate train/eval single-digit addition prompts");
  taskset_cmd->add_option("--out", ts_out, "Output directory")->required();
  taskset_cmd->add_option("--train-count", ts_train, "Training prompts");
  taskset_cmd->add_option("--eval-count", ts_eval, "Held-out prompts");
  taskset_cmd->add_option("--seed", ts_seed, "Generator seed");

  std::string train_config, train_out;
  int train_workers = 0;
  auto* train_cmd =
      app.add_subcommand("train", "Train the configured mode over all seeds");
  train_cmd->add_option("--config", train_config, "Experiment config JSON")
      ->required();
  train_cmd->add_option("--output-dir", train_out,
                        "Override the config's output_dir");
  train_cmd->add_option("--workers", train_workers,
                        "Parallel run slots (default: PSPO_WORKERS or 1)");

  std::string cmp_config, cmp_modes, cmp_out;
  int cmp_workers = 0;
  auto* compare_cmd = app.add_subcommand(
      "compare", "Train several modes with shared seeds and merge summaries");
  compare_cmd->add_option("--config", cmp_config, "Experiment config JSON")
      ->required();
  compare_cmd->add_option("--modes", cmp_modes, "Comma-separated mode list")
      ->required();
  compare_cmd->add_option("--output-dir", cmp_out,
                          "Override the config's output_dir");
  compare_cmd->add_option("--workers", cmp_workers,
                          "Parallel run slots (default: PSPO_WORKERS or 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*verify_cmd) return cmd_verify(verify_trials, verify_seed);
    if (*figure1_cmd)
      return cmd_figure1(f1_epsilon, f1_alpha, f1_rmin, f1_rmax, f1_rstep,
                         f1_out);
    if (*taskset_cmd)
      return cmd_make_taskset(ts_out, ts_train, ts_eval, ts_seed);
    if (*train_cmd) return cmd_train(train_config, train_out, train_workers);
    if (*compare_cmd)
      return cmd_compare(cmp_config, cmp_modes, cmp_out, cmp_workers);
  } catch (const pspo::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
