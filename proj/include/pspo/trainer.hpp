#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pspo/envs.hpp"
#include "pspo/objective.hpp"

namespace pspo {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

// Gradient-ascent optimizers over the sparse logit table. Adam keeps lazy
// per-state moment vectors and a global bias-correction timestep.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void apply(TabularPolicy& policy, const LogitGradMap& grad,
                     double learning_rate) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind);

struct TrainConfig {
  SurrogateConfig surrogate;
  double learning_rate = 0.05;
  int batch_prompts = 8;
  int group_size = 4;
  int total_steps = 500;
  int eval_every = 50;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double temperature = 1.0;
  RatioConvention convention = RatioConvention::untempered;
  bool normalize_advantage = false;
  double grade_tolerance = 1e-6;
  bool select_best = false;  // also report the best greedy checkpoint

  void validate() const;  // throws std::invalid_argument naming the field
};

// One optimizer pass's log line. Metrics are measured before the parameter
// update; greedy_accuracy, when present, is measured after it.
struct RunRecord {
  int step = 0;  // 0-based
  int pass = 0;  // 1-based within the step
  double mean_reward = 0.0;
  double objective = 0.0;
  double max_ratio_dev = 0.0;         // max |r - 1| over batch tokens
  double max_transformed_dev = 0.0;   // max |r~ - 1| after the mode transform
  double tv_mean = 0.0;               // mean TV(cur, old) over visited states
  double kl_mean = 0.0;               // mean KL(cur || old) over visited states
  std::optional<double> greedy_accuracy;
  bool nonfinite_flag = false;
};

struct TrainResult {
  std::vector<RunRecord> records;
  TabularPolicy policy;  // final parameters (pre-divergence on abort)
  double final_accuracy = 0.0;
  bool diverged = false;
  std::string divergence_note;
  std::optional<TabularPolicy> best_policy;  // populated when select_best
  std::optional<double> best_accuracy;
};

// GRPO-style loop: each step snapshots the behaviour policy, samples
// batch_prompts groups from it, then performs surrogate.iterations_mu
// gradient-ascent passes over the whole batch, logging one RunRecord per
// pass. A non-finite objective, gradient or metric stops the run; the
// offending record is kept with nonfinite_flag set.
TrainResult train(const TaskSet& tasks, const TrainConfig& cfg);

using ObjectiveFn = std::function<double(const TabularPolicy&)>;

// Central finite differences of fn over the given states' logits.
LogitGradMap finite_diff_gradient(const ObjectiveFn& fn,
                                  const TabularPolicy& at,
                                  const std::vector<StateKey>& states,
                                  double h = 1e-5);

// ===========================================================================
// Mode comparison
// ===========================================================================

struct ModeRunStats {
  Mode mode = Mode::pspo;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;  // effective values after mode/preset resolution
  int iterations_mu = 0;
  double final_accuracy = 0.0;
  std::optional<double> best_accuracy;
  // Held-out split score, filled by drivers whose task sets carry one.
  std::optional<double> heldout_accuracy;
  double final_mean_reward = 0.0;
  // Ratio deviations averaged over first-pass and later-pass records.
  double mean_max_dev_first = 0.0;
  double mean_max_dev_later = 0.0;
  double mean_max_transformed_first = 0.0;
  double mean_max_transformed_later = 0.0;
  bool diverged = false;
  int steps_completed = 0;
  std::vector<RunRecord> records;
};

struct ComparisonReport {
  std::vector<ModeRunStats> runs;  // mode-major, seed-minor order
};

// Per-mode config: noclip runs single-pass (iterations_mu forced to 1); all
// other settings are shared so sampling streams coincide across modes until
// the policies first diverge.
TrainConfig config_for_mode(TrainConfig base, Mode mode);

// Trains every mode with every seed. workers > 1 runs them concurrently;
// results are deterministic and ordered regardless of scheduling.
ComparisonReport compare_modes(const TaskSet& tasks, const TrainConfig& base,
                               const std::vector<Mode>& modes,
                               const std::vector<std::uint64_t>& seeds,
                               int workers = 1);

ModeRunStats summarize_run(Mode mode, std::uint64_t seed,
                           const TrainResult& result);

// Normal-approximation mean and 95% confidence half-width.
struct MeanCI {
  double mean = 0.0;
  double half_width = 0.0;
};
MeanCI mean_ci95(const std::vector<double>& values);

}  // namespace pspo
