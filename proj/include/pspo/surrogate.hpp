#pragma once

#include <string>
#include <string_view>

// Scalar building blocks of the per-token surrogate objectives.
//
// Modes:
//   clip    min(r*A, clip(r, 1-eps, 1+eps)*A), the standard clipped surrogate.
//   pspo    r_tilde*A with r_tilde = (1-alpha)*r + alpha, i.e. the ratio of
//           the smoothed policy (1-alpha)*pi + alpha*pi_old to pi_old.
//   noclip  plain r*A, restricted to single-pass training where r == 1; the
//           objective rejects batches that are off-policy.
//   raw     plain r*A with no restriction (unclipped multi-pass baseline for
//           stability experiments).

namespace pspo {

enum class Mode { clip, noclip, pspo, raw };
enum class TokenAgg { mean, sum };

std::string to_string(Mode mode);
std::string to_string(TokenAgg agg);
Mode parse_mode(std::string_view text);          // throws std::invalid_argument
TokenAgg parse_token_agg(std::string_view text); // throws std::invalid_argument

struct SurrogateConfig {
  Mode mode = Mode::pspo;
  double alpha = 0.1;     // smoothing strength, in [0, 1]
  double epsilon = 0.1;   // clip range, in (0, 1)
  double beta = 0.0;      // reference-KL penalty coefficient, >= 0
  int iterations_mu = 2;  // optimizer passes per sampled batch, >= 1
  TokenAgg token_agg = TokenAgg::mean;

  void validate() const;  // throws std::invalid_argument naming the field
};

// Mixture probability of the smoothed policy: (1-alpha)*p_cur + alpha*p_old.
// Throws std::invalid_argument if alpha is outside [0, 1].
double smooth_prob(double p_cur, double p_old, double alpha);

// p_cur / p_old. Throws std::domain_error if p_old <= 0.
double importance_ratio(double p_cur, double p_old);

// Ratio after smoothing: (1-alpha)*r + alpha. Equals the importance ratio of
// the smoothed policy against p_old.
double smoothed_ratio(double r, double alpha);

// min(r*A, clip(r, 1-eps, 1+eps)*A).
double clipped_term(double r, double advantage, double epsilon);

// smoothed_ratio(r, alpha) * A.
double pspo_term(double r, double advantage, double alpha);

// d(clipped_term)/dr. Zero exactly when the clip is active and the min picks
// the clipped branch: (A > 0 and r > 1+eps) or (A < 0 and r < 1-eps).
// At the kinks the unclipped side is taken, so the value there is A.
double clipped_term_slope(double r, double advantage, double epsilon);

// d(pspo_term)/dr = (1-alpha)*A, independent of r.
double pspo_term_slope(double advantage, double alpha);

}  // namespace pspo
