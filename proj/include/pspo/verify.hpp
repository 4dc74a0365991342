#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pspo/divergence.hpp"

namespace pspo::verify {

// One property suite's outcome. worst_residual is the largest deviation seen
// (suite-specific metric); passed means worst_residual <= tolerance plus any
// suite-specific side conditions described in note.
struct PropertyResult {
  std::string name;
  long trials = 0;
  double worst_residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;
};

struct Options {
  long trials = 10000;
  std::uint64_t seed = 2024;
};

// Injectable smoothing so a deliberately corrupted implementation is caught
// (mutation check in the tests).
using SmoothFn =
    std::function<Categorical(const Categorical&, const Categorical&, double)>;

// Ratio/objective level.
PropertyResult check_tv_contraction(long trials, std::uint64_t seed,
                                    const SmoothFn& smooth = {});
PropertyResult check_kl_contraction_bounds(long trials, std::uint64_t seed);
PropertyResult check_ratio_contraction(long trials, std::uint64_t seed);
PropertyResult check_pspo_slope(long trials, std::uint64_t seed);
PropertyResult check_no_overconfidence(long trials, std::uint64_t seed);
PropertyResult check_surrogate_expectation(long trials, std::uint64_t seed);
PropertyResult check_pspo_gradient_identity(long trials, std::uint64_t seed);
PropertyResult check_surrogates_agree_at_one(long trials, std::uint64_t seed);
PropertyResult check_smoothing_fixed_points(long trials, std::uint64_t seed);

// Objective/gradient level.
PropertyResult check_objective_gradient_fd(long trials, std::uint64_t seed);
PropertyResult check_clip_flat_region(long trials, std::uint64_t seed);
PropertyResult check_noclip_rejection(long trials, std::uint64_t seed);

// Rewards and environments.
PropertyResult check_grade_range(long trials, std::uint64_t seed);
PropertyResult check_advantage_properties(long trials, std::uint64_t seed);
PropertyResult check_rollout_consistency(long trials, std::uint64_t seed);
PropertyResult check_group_batch(long trials, std::uint64_t seed);

// Trainer.
PropertyResult check_one_pass_on_policy(long trials, std::uint64_t seed);
PropertyResult check_train_determinism(long trials, std::uint64_t seed);
PropertyResult check_preset_fidelity();

// Every suite, with per-suite trial scaling for the expensive ones.
std::vector<PropertyResult> run_all(const Options& options);

}  // namespace pspo::verify
