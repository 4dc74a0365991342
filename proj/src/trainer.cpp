#include "pspo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>
#include <utility>

#include "pspo/divergence.hpp"
#include "pspo/random.hpp"

namespace pspo {

// ===========================================================================
// Optimizers
// ===========================================================================

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + std::string(text));
}

namespace {

class SgdOptimizer final : public Optimizer {
 public:
  void apply(TabularPolicy& policy, const LogitGradMap& grad,
             double learning_rate) override {
    for (const auto& [state, gv] : grad) {
      auto& logits = policy.mutable_logits(state);
      for (std::size_t k = 0; k < gv.size(); ++k)
        logits[k] += learning_rate * gv[k];
    }
  }
};

class AdamOptimizer final : public Optimizer {
 public:
  void apply(TabularPolicy& policy, const LogitGradMap& grad,
             double learning_rate) override {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (const auto& [state, gv] : grad) {
      auto& [m, v] = moments_
                         .try_emplace(state, std::vector<double>(gv.size(), 0.0),
                                      std::vector<double>(gv.size(), 0.0))
                         .first->second;
      auto& logits = policy.mutable_logits(state);
      for (std::size_t k = 0; k < gv.size(); ++k) {
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gv[k];
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gv[k] * gv[k];
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        logits[k] += learning_rate * m_hat / (std::sqrt(v_hat) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::map<StateKey, std::pair<std::vector<double>, std::vector<double>>>
      moments_;
  long long t_ = 0;  // global timestep shared across states
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind) {
  if (kind == OptimizerKind::sgd) return std::make_unique<SgdOptimizer>();
  return std::make_unique<AdamOptimizer>();
}

// ===========================================================================
// Training loop
// ===========================================================================

void TrainConfig::validate() const {
  surrogate.validate();
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be > 0");
  if (batch_prompts < 1)
    throw std::invalid_argument("batch_prompts must be >= 1");
  // A singleton group centres its own reward to zero advantage everywhere,
  // so training would silently do nothing.
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  // eval_every may exceed total_steps: the final step always evaluates.
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (!(temperature > 0.0))
    throw std::invalid_argument("temperature must be > 0 for training");
  if (!(grade_tolerance >= 0.0))
    throw std::invalid_argument("grade_tolerance must be >= 0");
}

namespace {

// Stream labels for seed derivation within a run.
constexpr std::uint64_t kStepStream = 1;
constexpr std::uint64_t kGroupStream = 2;
constexpr std::uint64_t kPickStream = 3;

bool all_finite(const LogitGradMap& grad) {
  for (const auto& [state, gv] : grad)
    for (double x : gv)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

TrainResult train(const TaskSet& tasks, const TrainConfig& cfg) {
  cfg.validate();
  if (tasks.num_prompts() == 0)
    throw std::invalid_argument("train: task set has no prompts");

  TabularPolicy policy(tasks.vocab_size());
  std::optional<TabularPolicy> ref;
  if (cfg.surrogate.beta > 0.0) ref = policy;  // reference = initial policy
  const TabularPolicy* ref_ptr = ref ? &*ref : nullptr;

  auto optimizer = make_optimizer(cfg.optimizer);
  const GroupOptions gopts{cfg.convention, cfg.normalize_advantage,
                           cfg.grade_tolerance};
  const double inv_batches = 1.0 / static_cast<double>(cfg.batch_prompts);

  std::vector<RunRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.total_steps) *
                  static_cast<std::size_t>(cfg.surrogate.iterations_mu));
  bool diverged = false;
  std::string note;
  std::optional<TabularPolicy> best_policy;
  std::optional<double> best_accuracy;

  for (int step = 0; step < cfg.total_steps && !diverged; ++step) {
    const TabularPolicy old_policy = policy;  // behaviour snapshot
    const std::uint64_t step_seed =
        derive_seed(cfg.seed, kStepStream, static_cast<std::uint64_t>(step));

    std::mt19937_64 pick_rng(derive_seed(step_seed, kPickStream, 0));
    std::vector<GroupBatch> batches;
    batches.reserve(static_cast<std::size_t>(cfg.batch_prompts));
    double reward_sum = 0.0;
    int reward_count = 0;
    for (int b = 0; b < cfg.batch_prompts; ++b) {
      const std::size_t idx = uniform_index(tasks.num_prompts(), pick_rng);
      batches.push_back(tasks.sample_group(
          policy, idx, cfg.group_size, cfg.temperature,
          derive_seed(step_seed, kGroupStream, static_cast<std::uint64_t>(b)),
          gopts));
      for (double r : batches.back().rewards) {
        reward_sum += r;
        ++reward_count;
      }
    }
    const double mean_reward = reward_sum / static_cast<double>(reward_count);

    for (int pass = 1; pass <= cfg.surrogate.iterations_mu; ++pass) {
      double objective = 0.0;
      LogitGradMap grad;
      RatioStats stats;
      for (const auto& batch : batches) {
        objective +=
            group_objective(batch, policy, old_policy, ref_ptr, cfg.surrogate);
        accumulate_grad(
            grad,
            objective_gradient(batch, policy, old_policy, cfg.surrogate,
                               ref_ptr),
            inv_batches);
        const RatioStats s =
            ratio_deviations(batch, policy, old_policy, cfg.surrogate);
        stats.max_dev = std::max(stats.max_dev, s.max_dev);
        stats.max_transformed_dev =
            std::max(stats.max_transformed_dev, s.max_transformed_dev);
      }
      objective *= inv_batches;

      // Divergence diagnostics over the batch's distinct visited states
      // (exactly the gradient's key set).
      double tv_sum = 0.0;
      double kl_sum = 0.0;
      for (const auto& [state, gv] : grad) {
        const Categorical p{policy.probs(state)};
        const Categorical q{old_policy.probs(state)};
        tv_sum += 0.5 * l1_distance(p, q);
        kl_sum += kl_divergence(p, q);
      }
      const double n_states =
          grad.empty() ? 1.0 : static_cast<double>(grad.size());

      RunRecord rec;
      rec.step = step;
      rec.pass = pass;
      rec.mean_reward = mean_reward;
      rec.objective = objective;
      rec.max_ratio_dev = stats.max_dev;
      rec.max_transformed_dev = stats.max_transformed_dev;
      rec.tv_mean = tv_sum / n_states;
      rec.kl_mean = kl_sum / n_states;

      const bool finite =
          std::isfinite(objective) && std::isfinite(rec.max_ratio_dev) &&
          std::isfinite(rec.max_transformed_dev) && std::isfinite(rec.tv_mean) &&
          std::isfinite(rec.kl_mean) && std::isfinite(mean_reward) &&
          all_finite(grad);
      if (!finite) {
        rec.nonfinite_flag = true;
        records.push_back(rec);
        diverged = true;
        note = "non-finite objective or gradient at step " +
               std::to_string(step) + " pass " + std::to_string(pass);
        break;
      }

      optimizer->apply(policy, grad, cfg.learning_rate);

      const bool eval_due =
          pass == cfg.surrogate.iterations_mu &&
          ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.total_steps);
      if (eval_due) {
        const double acc =
            tasks.greedy_accuracy(policy, cfg.grade_tolerance);
        rec.greedy_accuracy = acc;
        if (cfg.select_best && (!best_accuracy || acc > *best_accuracy)) {
          best_accuracy = acc;
          best_policy = policy;
        }
      }
      records.push_back(rec);
    }
  }

  const double final_accuracy =
      tasks.greedy_accuracy(policy, cfg.grade_tolerance);
  return TrainResult{std::move(records),      std::move(policy),
                     final_accuracy,          diverged,
                     std::move(note),         std::move(best_policy),
                     best_accuracy};
}

LogitGradMap finite_diff_gradient(const ObjectiveFn& fn,
                                  const TabularPolicy& at,
                                  const std::vector<StateKey>& states,
                                  double h) {
  if (!(h > 0.0))
    throw std::invalid_argument("finite_diff_gradient: h must be > 0");
  TabularPolicy probe = at;
  LogitGradMap out;
  for (const auto& state : states) {
    auto& logits = probe.mutable_logits(state);
    std::vector<double> g(logits.size(), 0.0);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double orig = logits[k];
      logits[k] = orig + h;
      const double up = fn(probe);
      logits[k] = orig - h;
      const double down = fn(probe);
      logits[k] = orig;
      g[k] = (up - down) / (2.0 * h);
    }
    out[state] = std::move(g);
  }
  return out;
}

// ===========================================================================
// Mode comparison
// ===========================================================================

TrainConfig config_for_mode(TrainConfig base, Mode mode) {
  base.surrogate.mode = mode;
  if (mode == Mode::noclip) base.surrogate.iterations_mu = 1;
  return base;
}

ModeRunStats summarize_run(Mode mode, std::uint64_t seed,
                           const TrainResult& result) {
  ModeRunStats stats;
  stats.mode = mode;
  stats.seed = seed;
  stats.final_accuracy = result.final_accuracy;
  stats.best_accuracy = result.best_accuracy;
  stats.diverged = result.diverged;
  stats.records = result.records;
  if (!result.records.empty()) {
    stats.final_mean_reward = result.records.back().mean_reward;
    stats.steps_completed = result.records.back().step + 1;
  }
  double first_dev = 0.0, later_dev = 0.0;
  double first_tr = 0.0, later_tr = 0.0;
  int first_n = 0, later_n = 0;
  for (const auto& rec : result.records) {
    if (rec.pass == 1) {
      first_dev += rec.max_ratio_dev;
      first_tr += rec.max_transformed_dev;
      ++first_n;
    } else {
      later_dev += rec.max_ratio_dev;
      later_tr += rec.max_transformed_dev;
      ++later_n;
    }
  }
  if (first_n > 0) {
    stats.mean_max_dev_first = first_dev / first_n;
    stats.mean_max_transformed_first = first_tr / first_n;
  }
  if (later_n > 0) {
    stats.mean_max_dev_later = later_dev / later_n;
    stats.mean_max_transformed_later = later_tr / later_n;
  }
  return stats;
}

ComparisonReport compare_modes(const TaskSet& tasks, const TrainConfig& base,
                               const std::vector<Mode>& modes,
                               const std::vector<std::uint64_t>& seeds,
                               int workers) {
  if (modes.empty()) throw std::invalid_argument("compare_modes: no modes");
  if (seeds.empty()) throw std::invalid_argument("compare_modes: no seeds");

  struct Job {
    Mode mode;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Mode mode : modes)
    for (std::uint64_t seed : seeds) jobs.push_back({mode, seed});

  std::vector<std::optional<ModeRunStats>> slots(jobs.size());
  auto run_job = [&](std::size_t j) {
    TrainConfig cfg = config_for_mode(base, jobs[j].mode);
    cfg.seed = jobs[j].seed;
    ModeRunStats stats =
        summarize_run(jobs[j].mode, jobs[j].seed, train(tasks, cfg));
    stats.learning_rate = cfg.learning_rate;
    stats.iterations_mu = cfg.surrogate.iterations_mu;
    slots[j] = std::move(stats);
  };

  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    for (std::size_t base_j = 0; base_j < jobs.size();
         base_j += static_cast<std::size_t>(workers)) {
      std::vector<std::future<void>> wave;
      const std::size_t end =
          std::min(jobs.size(), base_j + static_cast<std::size_t>(workers));
      for (std::size_t j = base_j; j < end; ++j)
        wave.push_back(std::async(std::launch::async, run_job, j));
      for (auto& f : wave) f.get();
    }
  }

  ComparisonReport report;
  for (auto& slot : slots) report.runs.push_back(std::move(*slot));
  return report;
}

MeanCI mean_ci95(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_ci95: empty sample");
  MeanCI out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.half_width =
        1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

}  // namespace pspo
