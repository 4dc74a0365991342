#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pspo/policy.hpp"
#include "pspo/reward.hpp"

namespace pspo {

// ===========================================================================
// Tasks
// ===========================================================================

// Token vocabulary for the arithmetic task: digits, a '#' marker token, a
// space, and an end-of-sequence token that renders as the empty string.
namespace arith_vocab {
inline constexpr int kHash = 10;
inline constexpr int kSpace = 11;
inline constexpr int kEnd = 12;
inline constexpr int kSize = 13;
}  // namespace arith_vocab

std::string detokenize(std::span<const int> tokens);

// Single-digit addition prompt. The policy must emit a string whose graded
// answer equals lhs + rhs (canonically "#### <n>").
struct ArithmeticTask {
  int prompt_id = 0;
  int lhs = 0;  // operands in [0, 9]
  int rhs = 0;
  double gold = 0.0;  // always lhs + rhs
  int max_len = 6;    // episode length cap in tokens
};

ArithmeticTask make_arithmetic_task(int prompt_id, int lhs, int rhs);

// One-step environment with a known per-arm advantage table; reward for
// pulling arm a is advantage_table[a]. Rollouts use prompt_id 0.
struct BanditTask {
  int num_actions = 2;
  std::vector<double> advantage_table;
};

// ===========================================================================
// Rollouts
// ===========================================================================

// Whether stored behaviour log-probs come from the untempered policy (the
// quantity the importance ratio uses; ratios are exactly 1 on the first
// pass at any sampling temperature) or from the tempered sampling
// distribution itself.
enum class RatioConvention { untempered, tempered };

struct Episode {
  std::vector<int> actions;
  std::vector<double> old_logprobs;
  std::string rendered;
};

// Samples a completion. temperature 0 means greedy argmax decoding; the rng
// seed is then unused. Sampling draws from softmax(logits / temperature).
Episode rollout(const ArithmeticTask& task, const TabularPolicy& policy,
                double temperature, std::uint64_t seed,
                RatioConvention convention = RatioConvention::untempered);

Episode rollout(const BanditTask& task, const TabularPolicy& policy,
                double temperature, std::uint64_t seed,
                RatioConvention convention = RatioConvention::untempered);

struct GroupOptions {
  RatioConvention convention = RatioConvention::untempered;
  bool normalize_advantage = false;
  double grade_tolerance = 1e-6;
};

// Samples group_size completions and grades them. Rollout i draws its seed
// as derive_seed(run_seed, prompt_id, i), so groups are reproducible and
// per-sample streams independent.
GroupBatch sample_group(const ArithmeticTask& task, const TabularPolicy& policy,
                        int group_size, double temperature,
                        std::uint64_t run_seed, const GroupOptions& opts = {});

// Bandit rewards are advantage_table[action].
GroupBatch sample_group(const BanditTask& task, const TabularPolicy& policy,
                        int group_size, double temperature,
                        std::uint64_t run_seed, const GroupOptions& opts = {});

// Fraction of tasks whose greedy (temperature 0) completion grades to 1.
double evaluate_greedy(const std::vector<ArithmeticTask>& tasks,
                       const TabularPolicy& policy, double tolerance = 1e-6);

// ===========================================================================
// Task sets
// ===========================================================================

// Uniformly sampled operand pairs; prompt ids are first_prompt_id, +1, ...
std::vector<ArithmeticTask> make_arithmetic_tasks(int count,
                                                  std::uint64_t seed,
                                                  int first_prompt_id = 0);

// Line-delimited "prompt_id,lhs,rhs,gold" with a header row.
void save_taskset(const std::filesystem::path& path,
                  const std::vector<ArithmeticTask>& tasks);
std::vector<ArithmeticTask> load_taskset(const std::filesystem::path& path);

// Trainer-facing view of an environment: a pool of prompts to sample groups
// from plus a held-out greedy evaluation.
class TaskSet {
 public:
  virtual ~TaskSet() = default;
  virtual int vocab_size() const = 0;
  virtual std::size_t num_prompts() const = 0;
  virtual GroupBatch sample_group(const TabularPolicy& policy,
                                  std::size_t prompt_index, int group_size,
                                  double temperature, std::uint64_t run_seed,
                                  const GroupOptions& opts) const = 0;
  virtual double greedy_accuracy(const TabularPolicy& policy,
                                 double tolerance) const = 0;
};

class ArithmeticTaskSet final : public TaskSet {
 public:
  ArithmeticTaskSet(std::vector<ArithmeticTask> train,
                    std::vector<ArithmeticTask> eval);

  int vocab_size() const override { return arith_vocab::kSize; }
  std::size_t num_prompts() const override { return train_.size(); }
  GroupBatch sample_group(const TabularPolicy& policy, std::size_t prompt_index,
                          int group_size, double temperature,
                          std::uint64_t run_seed,
                          const GroupOptions& opts) const override;
  // Train-split accuracy: states are keyed by prompt id, so training cannot
  // move held-out prompts; the eval split is reported separately.
  double greedy_accuracy(const TabularPolicy& policy,
                         double tolerance) const override;

  const std::vector<ArithmeticTask>& train_tasks() const { return train_; }
  const std::vector<ArithmeticTask>& eval_tasks() const { return eval_; }

 private:
  std::vector<ArithmeticTask> train_;
  std::vector<ArithmeticTask> eval_;
};

// Loads <dir>/train.csv and <dir>/eval.csv as written by save_taskset.
std::unique_ptr<ArithmeticTaskSet> load_arithmetic_taskset_dir(
    const std::filesystem::path& dir);

class BanditTaskSet final : public TaskSet {
 public:
  explicit BanditTaskSet(BanditTask task);

  int vocab_size() const override { return task_.num_actions; }
  std::size_t num_prompts() const override { return 1; }
  GroupBatch sample_group(const TabularPolicy& policy, std::size_t prompt_index,
                          int group_size, double temperature,
                          std::uint64_t run_seed,
                          const GroupOptions& opts) const override;
  // 1 if the greedy arm has the maximal advantage, else 0.
  double greedy_accuracy(const TabularPolicy& policy,
                         double tolerance) const override;

  const BanditTask& task() const { return task_; }

 private:
  BanditTask task_;
};

}  // namespace pspo
