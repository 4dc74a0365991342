#include "pspo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pspo {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

TabularPolicy::TabularPolicy(int vocab_size)
    : vocab_size_(vocab_size),
      zero_logits_(static_cast<std::size_t>(vocab_size), 0.0) {
  if (vocab_size < 2)
    throw std::invalid_argument("TabularPolicy: vocab_size must be >= 2");
}

const std::vector<double>& TabularPolicy::logits(const StateKey& state) const {
  auto it = params_.find(state);
  return it == params_.end() ? zero_logits_ : it->second;
}

std::vector<double>& TabularPolicy::mutable_logits(const StateKey& state) {
  auto [it, inserted] = params_.try_emplace(state, zero_logits_);
  return it->second;
}

std::vector<double> TabularPolicy::probs(const StateKey& state) const {
  return softmax(logits(state));
}

std::vector<double> TabularPolicy::log_probs(const StateKey& state) const {
  return log_softmax(logits(state));
}

double TabularPolicy::action_prob(const StateKey& state, int action) const {
  if (action < 0 || action >= vocab_size_)
    throw std::out_of_range("action_prob: action outside vocabulary");
  return probs(state)[static_cast<std::size_t>(action)];
}

double TabularPolicy::action_log_prob(const StateKey& state,
                                      int action) const {
  if (action < 0 || action >= vocab_size_)
    throw std::out_of_range("action_log_prob: action outside vocabulary");
  return log_probs(state)[static_cast<std::size_t>(action)];
}

int TabularPolicy::greedy_action(const StateKey& state) const {
  const auto& l = logits(state);
  return static_cast<int>(
      std::max_element(l.begin(), l.end()) - l.begin());
}

double action_prob(const TabularPolicy& policy, const StateKey& state,
                   int action) {
  return policy.action_prob(state, action);
}

}  // namespace pspo
