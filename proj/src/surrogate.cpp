#include "pspo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pspo {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::clip: return "clip";
    case Mode::noclip: return "noclip";
    case Mode::pspo: return "pspo";
    case Mode::raw: return "raw";
  }
  throw std::logic_error("to_string(Mode): unknown mode");
}

std::string to_string(TokenAgg agg) {
  return agg == TokenAgg::mean ? "mean" : "sum";
}

Mode parse_mode(std::string_view text) {
  if (text == "clip") return Mode::clip;
  if (text == "noclip") return Mode::noclip;
  if (text == "pspo") return Mode::pspo;
  if (text == "raw") return Mode::raw;
  throw std::invalid_argument("unknown mode: " + std::string(text));
}

TokenAgg parse_token_agg(std::string_view text) {
  if (text == "mean") return TokenAgg::mean;
  if (text == "sum") return TokenAgg::sum;
  throw std::invalid_argument("unknown token_agg: " + std::string(text));
}

void SurrogateConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("surrogate.alpha must be in [0, 1]");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("surrogate.epsilon must be in (0, 1)");
  if (!(beta >= 0.0))
    throw std::invalid_argument("surrogate.beta must be >= 0");
  if (iterations_mu < 1)
    throw std::invalid_argument("surrogate.iterations_mu must be >= 1");
}

double smooth_prob(double p_cur, double p_old, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("smooth_prob: alpha must be in [0, 1]");
  return (1.0 - alpha) * p_cur + alpha * p_old;
}

double importance_ratio(double p_cur, double p_old) {
  if (!(p_old > 0.0))
    throw std::domain_error("importance_ratio: p_old must be positive");
  if (p_cur < 0.0)
    throw std::invalid_argument("importance_ratio: p_cur must be >= 0");
  return p_cur / p_old;
}

double smoothed_ratio(double r, double alpha) {
  return (1.0 - alpha) * r + alpha;
}

double clipped_term(double r, double advantage, double epsilon) {
  const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(r * advantage, clipped * advantage);
}

double pspo_term(double r, double advantage, double alpha) {
  return smoothed_ratio(r, alpha) * advantage;
}

double clipped_term_slope(double r, double advantage, double epsilon) {
  // Flat only where the min selects a clipped constant; the kinks themselves
  // take the unclipped side.
  if (advantage > 0.0 && r > 1.0 + epsilon) return 0.0;
  if (advantage < 0.0 && r < 1.0 - epsilon) return 0.0;
  return advantage;
}

double pspo_term_slope(double advantage, double alpha) {
  return (1.0 - alpha) * advantage;
}

}  // namespace pspo
