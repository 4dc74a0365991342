#pragma once

#include <vector>

namespace pspo {

// Finite categorical distribution. `from` validates; the raw aggregate is for
// callers that already hold a normalized vector (e.g. softmax output).
struct Categorical {
  std::vector<double> probs;

  // Validates: length >= 2, entries >= 0, sum within 1e-12 of 1.
  // Throws std::invalid_argument otherwise.
  static Categorical from(std::vector<double> probs);
};

// Total variation distance is l1_distance / 2.
double l1_distance(const Categorical& p, const Categorical& q);

// KL(p || q) with the measure-theoretic conventions: terms with p_i = 0
// contribute 0; returns +infinity if p_i > 0 where q_i = 0.
double kl_divergence(const Categorical& p, const Categorical& q);

// Elementwise mixture (1-alpha)*p + alpha*q. Throws std::invalid_argument if
// alpha is outside [0, 1]; lengths must match.
Categorical smooth_distribution(const Categorical& p, const Categorical& q,
                                double alpha);

}  // namespace pspo
