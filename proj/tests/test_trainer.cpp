#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "pspo/trainer.hpp"

using namespace pspo;

namespace {

BanditTaskSet make_bandit() {
  BanditTask task;
  task.num_actions = 4;
  task.advantage_table = {0.1, 0.9, -0.2, 0.4};
  return BanditTaskSet(task);
}

TrainConfig bandit_config(Mode mode) {
  TrainConfig cfg;
  cfg.surrogate.mode = mode;
  cfg.surrogate.alpha = 0.1;
  cfg.surrogate.epsilon = 0.2;
  cfg.surrogate.iterations_mu = 2;
  cfg.learning_rate = 0.1;
  cfg.batch_prompts = 4;
  cfg.group_size = 4;
  cfg.total_steps = 60;
  cfg.eval_every = 20;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("pspo learns the best bandit arm") {
  BanditTaskSet tasks = make_bandit();
  TrainResult result = train(tasks, bandit_config(Mode::pspo));
  CHECK_FALSE(result.diverged);
  CHECK(result.final_accuracy == 1.0);
  StateKey root{0, {}};
  CHECK(result.policy.greedy_action(root) == 1);
}

TEST_CASE("each mode learns the bandit") {
  BanditTaskSet tasks = make_bandit();
  for (Mode mode : {Mode::noclip, Mode::clip, Mode::raw}) {
    TrainConfig cfg = config_for_mode(bandit_config(mode), mode);
    TrainResult result = train(tasks, cfg);
    CHECK_FALSE(result.diverged);
    CHECK(result.final_accuracy == 1.0);
  }
}

TEST_CASE("one record per pass with mu honored") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 5;
  TrainResult result = train(tasks, cfg);
  REQUIRE(result.records.size() == 10);  // 5 steps x 2 passes
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const RunRecord& rec = result.records[i];
    CHECK(rec.step == static_cast<int>(i / 2));
    CHECK(rec.pass == static_cast<int>(i % 2) + 1);
  }
  // Both passes of a step share the sampled batch, so mean_reward matches.
  for (std::size_t i = 0; i + 1 < result.records.size(); i += 2)
    CHECK(result.records[i].mean_reward == result.records[i + 1].mean_reward);
}

TEST_CASE("first pass is exactly on policy") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 8;
  TrainResult result = train(tasks, cfg);
  for (const RunRecord& rec : result.records) {
    if (rec.pass != 1) continue;
    CHECK(rec.max_ratio_dev == 0.0);
    CHECK(rec.max_transformed_dev == 0.0);
    CHECK(rec.tv_mean == 0.0);
    CHECK(rec.kl_mean == 0.0);
  }
}

TEST_CASE("noclip is forced to a single pass") {
  TrainConfig cfg = bandit_config(Mode::noclip);
  cfg.surrogate.iterations_mu = 3;
  TrainConfig resolved = config_for_mode(cfg, Mode::noclip);
  CHECK(resolved.surrogate.iterations_mu == 1);
  CHECK(resolved.surrogate.mode == Mode::noclip);
  // Other modes keep the requested pass count.
  CHECK(config_for_mode(cfg, Mode::clip).surrogate.iterations_mu == 3);

  BanditTaskSet tasks = make_bandit();
  resolved.total_steps = 4;
  TrainResult result = train(tasks, resolved);
  CHECK(result.records.size() == 4);
}

TEST_CASE("training is deterministic in the seed") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 12;
  TrainResult a = train(tasks, cfg);
  TrainResult b = train(tasks, cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].objective == b.records[i].objective);
    CHECK(a.records[i].kl_mean == b.records[i].kl_mean);
    CHECK(a.records[i].mean_reward == b.records[i].mean_reward);
  }
  cfg.seed = 8;
  TrainResult c = train(tasks, cfg);
  bool any_differs = false;
  for (std::size_t i = 0; i < std::min(a.records.size(), c.records.size()); ++i)
    if (a.records[i].objective != c.records[i].objective) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("greedy accuracy is logged on schedule") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 10;
  cfg.eval_every = 4;
  TrainResult result = train(tasks, cfg);
  for (const RunRecord& rec : result.records) {
    const bool final_pass = rec.pass == cfg.surrogate.iterations_mu;
    const bool due = final_pass &&
                     ((rec.step + 1) % cfg.eval_every == 0 ||
                      rec.step + 1 == cfg.total_steps);
    CHECK(rec.greedy_accuracy.has_value() == due);
  }
}

TEST_CASE("select_best tracks the best checkpoint") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 20;
  cfg.eval_every = 5;
  cfg.select_best = true;
  TrainResult result = train(tasks, cfg);
  REQUIRE(result.best_policy.has_value());
  REQUIRE(result.best_accuracy.has_value());
  double max_logged = 0.0;
  for (const RunRecord& rec : result.records)
    if (rec.greedy_accuracy) max_logged = std::max(max_logged, *rec.greedy_accuracy);
  CHECK(*result.best_accuracy == max_logged);
  CHECK(tasks.greedy_accuracy(*result.best_policy, 1e-6) == *result.best_accuracy);
}

namespace {

// Task set whose groups carry a non-finite reward after a set number of
// healthy steps, to drive the trainer's divergence handling.
class PoisonedTaskSet final : public TaskSet {
 public:
  explicit PoisonedTaskSet(int healthy_groups) : healthy_(healthy_groups) {}

  int vocab_size() const override { return 3; }
  std::size_t num_prompts() const override { return 1; }
  GroupBatch sample_group(const TabularPolicy& policy, std::size_t,
                          int group_size, double temperature,
                          std::uint64_t run_seed,
                          const GroupOptions& opts) const override {
    BanditTask task;
    task.num_actions = 3;
    task.advantage_table = {0.0, 0.5, 0.1};
    GroupBatch batch =
        pspo::sample_group(task, policy, group_size, temperature, run_seed,
                           opts);
    if (served_++ >= healthy_) {
      batch.rewards[0] = std::numeric_limits<double>::infinity();
      batch.advantages = group_advantages(batch.rewards);
    }
    return batch;
  }
  double greedy_accuracy(const TabularPolicy&, double) const override {
    return 0.0;
  }

 private:
  int healthy_;
  mutable int served_ = 0;
};

}  // namespace

TEST_CASE("divergence aborts the run and keeps the flagged record") {
  TrainConfig cfg = bandit_config(Mode::raw);
  cfg.batch_prompts = 2;
  cfg.total_steps = 10;
  // Three healthy steps of two groups each, then a poisoned batch.
  PoisonedTaskSet tasks(6);
  TrainResult result = train(tasks, cfg);
  CHECK(result.diverged);
  CHECK_FALSE(result.divergence_note.empty());
  REQUIRE_FALSE(result.records.empty());
  CHECK(result.records.back().nonfinite_flag);
  CHECK(result.records.back().step == 3);
  // Only the final record may carry the flag; healthy passes stay intact.
  for (std::size_t i = 0; i + 1 < result.records.size(); ++i)
    CHECK_FALSE(result.records[i].nonfinite_flag);
  CHECK(result.records.size() == 7);  // 3 steps x 2 passes + flagged record
}

TEST_CASE("train config validation names the offending field") {
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.learning_rate = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("learning_rate"),
                       std::invalid_argument);
  cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("total_steps"),
                       std::invalid_argument);
  cfg = bandit_config(Mode::pspo);
  cfg.temperature = -1.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("temperature"),
                       std::invalid_argument);
  cfg = bandit_config(Mode::pspo);
  cfg.group_size = 1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("group_size"),
                       std::invalid_argument);
}

TEST_CASE("finite differences recover a quadratic gradient") {
  TabularPolicy policy(3);
  StateKey s0{0, {}};
  StateKey s1{0, {2}};
  policy.mutable_logits(s0) = {0.3, -0.2, 0.8};
  policy.mutable_logits(s1) = {0.0, 0.5, -0.5};
  auto fn = [&](const TabularPolicy& p) {
    double total = 0.0;
    for (const auto& [state, logits] : p.params())
      for (double l : logits) total += (l - 0.25) * (l - 0.25);
    return total;
  };
  LogitGradMap fd = finite_diff_gradient(fn, policy, {s0, s1});
  for (const auto& [state, g] : fd) {
    const std::vector<double>& logits = policy.params().at(state);
    for (std::size_t k = 0; k < g.size(); ++k)
      CHECK(g[k] == doctest::Approx(2.0 * (logits[k] - 0.25)).epsilon(1e-7));
  }
}

TEST_CASE("sgd ascends and adam normalizes step size") {
  TabularPolicy sgd_policy(2);
  TabularPolicy adam_policy(2);
  StateKey s{0, {}};
  LogitGradMap grad;
  grad[s] = {1.0, -4.0};

  make_optimizer(OptimizerKind::sgd)->apply(sgd_policy, grad, 0.5);
  CHECK(sgd_policy.params().at(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sgd_policy.params().at(s)[1] == doctest::Approx(-2.0).epsilon(1e-15));

  // First adam step moves every coordinate by about lr in the gradient sign.
  make_optimizer(OptimizerKind::adam)->apply(adam_policy, grad, 0.5);
  CHECK(adam_policy.params().at(s)[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(adam_policy.params().at(s)[1] == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("adam moments persist across apply calls") {
  TabularPolicy policy(2);
  StateKey s{0, {}};
  LogitGradMap grad;
  grad[s] = {1.0, 0.0};
  auto opt = make_optimizer(OptimizerKind::adam);
  opt->apply(policy, grad, 0.1);
  double after_one = policy.params().at(s)[0];
  opt->apply(policy, grad, 0.1);
  double after_two = policy.params().at(s)[0];
  CHECK(after_one == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(after_two > after_one);
  CHECK(after_two == doctest::Approx(0.2).epsilon(1e-2));
}

TEST_CASE("compare_modes shares sampling until policies move") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig base = bandit_config(Mode::pspo);
  base.total_steps = 6;
  ComparisonReport report =
      compare_modes(tasks, base, {Mode::raw, Mode::pspo}, {1, 2});
  REQUIRE(report.runs.size() == 4);
  CHECK(report.runs[0].mode == Mode::raw);
  CHECK(report.runs[0].seed == 1);
  CHECK(report.runs[1].seed == 2);
  CHECK(report.runs[2].mode == Mode::pspo);
  // Step 0 pass 1 sees identical batches across modes for a shared seed.
  CHECK(report.runs[0].records[0].mean_reward ==
        report.runs[2].records[0].mean_reward);
  for (const ModeRunStats& run : report.runs) {
    CHECK(run.mean_max_dev_first == 0.0);
    CHECK(run.steps_completed == 6);
    CHECK(run.learning_rate == base.learning_rate);
    CHECK(run.iterations_mu == 2);
  }
}

TEST_CASE("parallel comparison matches serial results exactly") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig base = bandit_config(Mode::pspo);
  base.total_steps = 5;
  std::vector<Mode> modes = {Mode::clip, Mode::pspo};
  std::vector<std::uint64_t> seeds = {3, 4, 5};
  ComparisonReport serial = compare_modes(tasks, base, modes, seeds, 1);
  ComparisonReport parallel = compare_modes(tasks, base, modes, seeds, 4);
  REQUIRE(serial.runs.size() == parallel.runs.size());
  for (std::size_t i = 0; i < serial.runs.size(); ++i) {
    CHECK(serial.runs[i].mode == parallel.runs[i].mode);
    CHECK(serial.runs[i].seed == parallel.runs[i].seed);
    CHECK(serial.runs[i].final_accuracy == parallel.runs[i].final_accuracy);
    REQUIRE(serial.runs[i].records.size() == parallel.runs[i].records.size());
    for (std::size_t j = 0; j < serial.runs[i].records.size(); ++j)
      CHECK(serial.runs[i].records[j].objective ==
            parallel.runs[i].records[j].objective);
  }
}

TEST_CASE("summarize_run splits pass statistics") {
  BanditTaskSet tasks = make_bandit();
  TrainConfig cfg = bandit_config(Mode::pspo);
  cfg.total_steps = 6;
  TrainResult result = train(tasks, cfg);
  ModeRunStats stats = summarize_run(Mode::pspo, cfg.seed, result);
  CHECK(stats.mean_max_dev_first == 0.0);
  CHECK(stats.mean_max_dev_later > 0.0);
  CHECK(stats.mean_max_transformed_later ==
        doctest::Approx((1.0 - cfg.surrogate.alpha) * stats.mean_max_dev_later)
            .epsilon(1e-12));
  CHECK(stats.steps_completed == 6);
  CHECK(stats.final_accuracy == result.final_accuracy);
}

TEST_CASE("mean_ci95 hand value") {
  MeanCI ci = mean_ci95({0.8, 0.9, 1.0});
  CHECK(ci.mean == doctest::Approx(0.9).epsilon(1e-15));
  // Sample sd 0.1: half width 1.96 * 0.1 / sqrt(3).
  CHECK(ci.half_width ==
        doctest::Approx(1.96 * 0.1 / std::sqrt(3.0)).epsilon(1e-12));
  MeanCI single = mean_ci95({0.5});
  CHECK(single.mean == 0.5);
  CHECK(single.half_width == 0.0);
}
