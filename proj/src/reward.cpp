#include "pspo/reward.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace pspo {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Scans one numeric token starting at pos: optional sign, digits with strict
// ",ddd" thousands groups, optional decimal part; or a bare ".digits".
// On success returns the value and advances pos past the token.
bool scan_number(std::string_view text, std::size_t& pos, double& value) {
  std::size_t i = pos;
  std::string digits;  // token with separators stripped
  if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
    if (text[i] == '-') digits.push_back('-');
    ++i;
  }
  bool any = false;
  if (i < text.size() && is_digit(text[i])) {
    any = true;
    while (i < text.size() && is_digit(text[i])) digits.push_back(text[i++]);
    // Absorb ",ddd" groups only when they are exact 3-digit groups.
    while (i + 4 <= text.size() && text[i] == ',' && is_digit(text[i + 1]) &&
           is_digit(text[i + 2]) && is_digit(text[i + 3]) &&
           (i + 4 == text.size() || !is_digit(text[i + 4]))) {
      digits.append(text.substr(i + 1, 3));
      i += 4;
    }
  }
  if (i < text.size() && text[i] == '.' && i + 1 < text.size() &&
      is_digit(text[i + 1])) {
    any = true;
    digits.push_back('.');
    ++i;
    while (i < text.size() && is_digit(text[i])) digits.push_back(text[i++]);
  }
  if (!any) return false;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return false;
  value = v;
  pos = i;
  return true;
}

// Last numeric token anywhere in the text.
std::optional<double> last_number(std::string_view text) {
  std::optional<double> last;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_digit(c) || c == '+' || c == '-' || c == '.') {
      std::size_t pos = i;
      double v = 0.0;
      if (scan_number(text, pos, v)) {
        last = v;
        i = pos;
        continue;
      }
    }
    ++i;
  }
  return last;
}

// Number immediately after the final "####" marker; whitespace and a '$'
// prefix may intervene, nothing else.
std::optional<double> marker_number(std::string_view text) {
  const std::size_t mark = text.rfind("####");
  if (mark == std::string_view::npos) return std::nullopt;
  std::size_t i = mark + 4;
  while (i < text.size() &&
         (text[i] == ' ' || text[i] == '\t' || text[i] == '$'))
    ++i;
  double v = 0.0;
  if (scan_number(text, i, v)) return v;
  return std::nullopt;
}

}  // namespace

std::string to_string(RewardSource source) {
  switch (source) {
    case RewardSource::format_match: return "format_match";
    case RewardSource::last_token_fallback: return "last_token_fallback";
    case RewardSource::none: return "none";
  }
  throw std::logic_error("to_string(RewardSource): unknown source");
}

RewardOutcome grade_completion(std::string_view text, double gold,
                               double tolerance) {
  if (!(tolerance >= 0.0))
    throw std::invalid_argument("grade_completion: tolerance must be >= 0");
  RewardOutcome out;
  if (auto v = marker_number(text)) {
    out.source = RewardSource::format_match;
    out.parsed_value = *v;
    const double correct = std::abs(*v - gold) <= tolerance ? 1.0 : 0.0;
    out.score = std::min(1.0, correct + 0.05);  // format bonus, clamped
    return out;
  }
  if (auto v = last_number(text)) {
    out.source = RewardSource::last_token_fallback;
    out.parsed_value = *v;
    out.score = std::abs(*v - gold) <= tolerance ? 1.0 : 0.0;
    return out;
  }
  return out;  // score 0, source none
}

std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     bool normalize) {
  if (rewards.empty())
    throw std::invalid_argument("group_advantages: empty group");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (normalize) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::sqrt(var / static_cast<double>(adv.size()));
    if (sd > 1e-8)
      for (double& a : adv) a /= sd;
  }
  return adv;
}

StateKey GroupBatch::state_at(int sample, int t) const {
  const auto& tokens = completions[static_cast<std::size_t>(sample)];
  return StateKey{prompt_id,
                  std::vector<int>(tokens.begin(), tokens.begin() + t)};
}

}  // namespace pspo
