#include "pspo/divergence.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pspo {

namespace {
void require_same_length(const Categorical& p, const Categorical& q,
                         const char* what) {
  if (p.probs.size() != q.probs.size())
    throw std::length_error(std::string(what) + ": length mismatch");
}
}  // namespace

Categorical Categorical::from(std::vector<double> probs) {
  if (probs.size() < 2)
    throw std::invalid_argument("Categorical: need at least 2 outcomes");
  double sum = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0))
      throw std::invalid_argument("Categorical: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("Categorical: probabilities must sum to 1");
  return Categorical{std::move(probs)};
}

double l1_distance(const Categorical& p, const Categorical& q) {
  require_same_length(p, q, "l1_distance");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i)
    sum += std::abs(p.probs[i] - q.probs[i]);
  return sum;
}

double kl_divergence(const Categorical& p, const Categorical& q) {
  require_same_length(p, q, "kl_divergence");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    const double pi = p.probs[i];
    if (pi == 0.0) continue;  // 0 * ln(0/q) = 0
    const double qi = q.probs[i];
    if (qi == 0.0) return std::numeric_limits<double>::infinity();
    sum += pi * std::log(pi / qi);
  }
  return sum;
}

Categorical smooth_distribution(const Categorical& p, const Categorical& q,
                                double alpha) {
  require_same_length(p, q, "smooth_distribution");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("smooth_distribution: alpha must be in [0, 1]");
  std::vector<double> out(p.probs.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 - alpha) * p.probs[i] + alpha * q.probs[i];
  return Categorical{std::move(out)};
}

}  // namespace pspo
