#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace pspo {

// Identifies a decision point: a prompt plus the tokens emitted so far.
struct StateKey {
  int prompt_id = 0;
  std::vector<int> prefix;

  auto operator<=>(const StateKey&) const = default;
};

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

// Categorical policy over a fixed action vocabulary, one logit vector per
// visited state. States absent from the table read as all-zero logits
// (uniform distribution), so every action has positive probability and
// importance ratios are always defined.
//
// Parameters live in a std::map so iteration order, and therefore every
// downstream artifact, is deterministic.
class TabularPolicy {
 public:
  using Params = std::map<StateKey, std::vector<double>>;

  explicit TabularPolicy(int vocab_size);

  int vocab_size() const { return vocab_size_; }

  // Read-only logits; falls back to zeros for unvisited states.
  const std::vector<double>& logits(const StateKey& state) const;

  // Mutable logits; inserts the zero vector on first touch.
  std::vector<double>& mutable_logits(const StateKey& state);

  std::vector<double> probs(const StateKey& state) const;
  std::vector<double> log_probs(const StateKey& state) const;
  double action_prob(const StateKey& state, int action) const;
  double action_log_prob(const StateKey& state, int action) const;

  // Argmax over logits; ties break toward the lowest action index.
  int greedy_action(const StateKey& state) const;

  const Params& params() const { return params_; }
  Params& params() { return params_; }

 private:
  int vocab_size_;
  std::vector<double> zero_logits_;
  Params params_;
};

// Free-function form used by the property suites.
double action_prob(const TabularPolicy& policy, const StateKey& state,
                   int action);

}  // namespace pspo
