#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pspo/policy.hpp"

namespace pspo {

// Which parsing path produced the graded value.
enum class RewardSource { format_match, last_token_fallback, none };

std::string to_string(RewardSource source);

struct RewardOutcome {
  double score = 0.0;  // one of {0, 0.05, 1}
  std::optional<double> parsed_value;
  RewardSource source = RewardSource::none;
};

// Grades one completion against the gold answer.
//
// Format path: the text after the final "####" marker, allowing whitespace
// and a leading '$', must start with a number. A format match earns a 0.05
// bonus; a numeric match (|parsed - gold| <= tolerance) earns 1. The total is
// clamped to [0, 1], so scores are exactly {0, 0.05, 1}.
//
// Fallback path: when no marker matches, the last numeric token anywhere in
// the text is graded without the bonus. Numeric tokens carry an optional
// sign, thousands separators and a decimal part; surrounding currency or
// percent symbols are not part of the token.
RewardOutcome grade_completion(std::string_view text, double gold,
                               double tolerance = 1e-6);

// Group-relative advantages: rewards minus the group mean. With normalize
// set, additionally divides by the population standard deviation (guarded
// for constant groups). Throws std::invalid_argument on an empty group.
std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     bool normalize = false);

// One prompt's sampled group. Advantages are broadcast to every token of the
// corresponding completion. States are derived, not stored: the state of
// token t in completion i is {prompt_id, completions[i][0..t)}.
struct GroupBatch {
  int prompt_id = 0;
  std::vector<std::vector<int>> completions;
  std::vector<std::vector<double>> old_logprobs;  // log pi_old at sampling
  std::vector<double> rewards;
  std::vector<double> advantages;

  int group_size() const { return static_cast<int>(completions.size()); }
  StateKey state_at(int sample, int t) const;
};

}  // namespace pspo
