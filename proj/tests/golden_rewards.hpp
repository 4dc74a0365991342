#pragma once

#include <string>
#include <vector>

#include "pspo/reward.hpp"

namespace pspo_tests {

struct GoldenRewardCase {
  std::string text;
  double gold;
  double score;
  pspo::RewardSource source;
};

// Hand-labeled grading fixtures, including marker-format answers, responses
// that restate the prompt instructions after a bare marker, currency and
// separator forms, and numberless text.
inline const std::vector<GoldenRewardCase>& golden_reward_cases() {
  using Src = pspo::RewardSource;
  static const std::vector<GoldenRewardCase> cases = {
      // Canonical marker answers.
      {"The sum of 5 and 7 is 12.\n#### 12", 12, 1.0, Src::format_match},
      {"#### 12", 12, 1.0, Src::format_match},
      {"####12", 12, 1.0, Src::format_match},
      {"#### $12", 12, 1.0, Src::format_match},
      {"####\t12", 12, 1.0, Src::format_match},
      {"#### 12.0", 12, 1.0, Src::format_match},
      // Marker present but the value is wrong: format bonus only.
      {"#### 13", 12, 0.05, Src::format_match},
      {"#### 12.5", 12, 0.05, Src::format_match},
      // Negative golds and separator/decimal forms.
      {"the temperature drops to #### -3", -3, 1.0, Src::format_match},
      {"#### 1,234", 1234, 1.0, Src::format_match},
      {"#### 0.5", 0.5, 1.0, Src::format_match},
      // No marker: the last numeric token decides, with no bonus.
      {"h = 24 / 2 = 12", 12, 1.0, Src::last_token_fallback},
      {"12", 12, 1.0, Src::last_token_fallback},
      {"maybe 11, or rather 12", 12, 1.0, Src::last_token_fallback},
      {"### 12", 12, 1.0, Src::last_token_fallback},  // three hashes, no marker
      {"I count 11 sheep", 12, 0.0, Src::last_token_fallback},
      // A bare marker with no adjacent number falls back too.
      {"the answer is 12 ####", 12, 1.0, Src::last_token_fallback},
      // Instruction-leak shapes: the response ends by restating the prompt
      // after a second marker, so the final marker has no number.
      {"#### 12 #### No answer provided", 12, 1.0, Src::last_token_fallback},
      {"#### 13 #### No answer provided and no explanation given. Please "
       "calculate and respond with the result.",
       12, 0.0, Src::last_token_fallback},
      // No numeric content at all.
      {"The result is twelve.", 12, 0.0, Src::none},
      {"", 12, 0.0, Src::none},
      {"#### twelve", 12, 0.0, Src::none},
      // Percent sign is not part of the token.
      {"confidence 95% #### 12%", 12, 1.0, Src::format_match},
      // A malformed comma group ends the token at the first digit run.
      {"#### 1,2345", 1, 1.0, Src::format_match},
  };
  return cases;
}

}  // namespace pspo_tests
