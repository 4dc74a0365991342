#include "pspo/verify.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "pspo/envs.hpp"
#include "pspo/experiment.hpp"
#include "pspo/objective.hpp"
#include "pspo/random.hpp"
#include "pspo/trainer.hpp"

namespace pspo::verify {

namespace {

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

Categorical random_dist(int vocab, std::mt19937_64& rng, bool allow_zeros) {
  std::vector<char> keep(static_cast<std::size_t>(vocab), 1);
  if (allow_zeros && uniform01(rng) < 0.5) {
    int kept = 0;
    for (auto& k : keep) {
      k = uniform01(rng) < 0.7 ? 1 : 0;
      kept += k;
    }
    if (kept == 0) keep[uniform_index(keep.size(), rng)] = 1;
  }
  std::vector<double> w(static_cast<std::size_t>(vocab), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!keep[i]) continue;
    w[i] = -std::log(1.0 - uniform01(rng));
    sum += w[i];
  }
  if (sum == 0.0) {
    w[0] = 1.0;
    sum = 1.0;
  }
  for (double& v : w) v /= sum;
  return Categorical::from(std::move(w));
}

// Mostly uniform alpha with exact endpoints mixed in.
double random_alpha(std::mt19937_64& rng, long trial) {
  switch (trial % 8) {
    case 0: return 0.0;
    case 1: return 1.0;
    default: return uniform01(rng);
  }
}

std::vector<double> random_logits(std::size_t n, double scale,
                                  std::mt19937_64& rng) {
  std::vector<double> out(n);
  for (double& v : out) v = scale * (2.0 * uniform01(rng) - 1.0);
  return out;
}

PropertyResult make_result(std::string name, long trials, double worst,
                           double tolerance, bool extra_ok = true,
                           std::string note = "") {
  PropertyResult r;
  r.name = std::move(name);
  r.trials = trials;
  r.worst_residual = worst;
  r.tolerance = tolerance;
  r.passed = worst <= tolerance && extra_ok;
  r.note = std::move(note);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ratio / distribution properties
// ---------------------------------------------------------------------------

PropertyResult check_tv_contraction(long trials, std::uint64_t seed,
                                    const SmoothFn& smooth) {
  const SmoothFn fn = smooth ? smooth : [](const Categorical& p,
                                           const Categorical& q, double a) {
    return smooth_distribution(p, q, a);
  };
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    const int vocab = 2 + static_cast<int>(uniform_index(63, rng));
    const auto p = random_dist(vocab, rng, true);
    const auto q = random_dist(vocab, rng, true);
    const double alpha = random_alpha(rng, t);
    const auto s = fn(p, q, alpha);
    const double lhs = l1_distance(s, q);
    const double rhs = (1.0 - alpha) * l1_distance(p, q);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return make_result("tv_contraction_exact", trials, worst, 1e-12);
}

PropertyResult check_kl_contraction_bounds(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;  // most positive violation of lhs <= rhs
  long nondegenerate = 0;
  long strict = 0;
  for (long t = 0; t < trials; ++t) {
    const int vocab = 2 + static_cast<int>(uniform_index(63, rng));
    const auto p = random_dist(vocab, rng, true);
    const auto q = random_dist(vocab, rng, true);
    const double alpha = random_alpha(rng, t);
    const auto s = smooth_distribution(p, q, alpha);

    const double fwd_lhs = kl_divergence(s, q);
    const double fwd_rhs = (1.0 - alpha) * kl_divergence(p, q);
    if (std::isinf(fwd_rhs)) {
      // Bound is vacuous; the smoothed policy may only lose support mass
      // where p itself had it, so lhs may be infinite too.
    } else {
      worst = std::max(worst, fwd_lhs - fwd_rhs);
      if (alpha >= 0.01 && alpha <= 0.99 && l1_distance(p, q) > 1e-6) {
        ++nondegenerate;
        if (fwd_lhs < fwd_rhs) ++strict;
      }
    }

    const double rev_lhs = kl_divergence(q, s);
    const double rev_rhs = (1.0 - alpha) * kl_divergence(q, p);
    if (!std::isinf(rev_rhs)) worst = std::max(worst, rev_lhs - rev_rhs);
  }
  const double strict_fraction =
      nondegenerate == 0
          ? 1.0
          : static_cast<double>(strict) / static_cast<double>(nondegenerate);
  std::ostringstream note;
  note << "forward strict on " << strict << "/" << nondegenerate
       << " non-degenerate samples";
  return make_result("kl_contraction_bounds", trials, worst, 1e-12,
                     strict_fraction >= 0.99, note.str());
}

PropertyResult check_ratio_contraction(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    const double r =
        t % 3 == 0 ? static_cast<double>(t % 101) / 10.0 : 10.0 * uniform01(rng);
    const double alpha = random_alpha(rng, t);
    const double lhs = std::abs(smoothed_ratio(r, alpha) - 1.0);
    const double rhs = (1.0 - alpha) * std::abs(r - 1.0);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return make_result("ratio_contraction_exact", trials, worst, 1e-12);
}

PropertyResult check_pspo_slope(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double h = 1e-6;
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    double r;
    switch (t % 4) {
      case 0: r = 0.1; break;
      case 1: r = 1.0; break;
      case 2: r = 5.0; break;
      default: r = 10.0 * uniform01(rng);
    }
    const double adv = 6.0 * uniform01(rng) - 3.0;
    const double alpha = uniform01(rng);
    const double fd =
        (pspo_term(r + h, adv, alpha) - pspo_term(r - h, adv, alpha)) /
        (2.0 * h);
    worst = std::max(worst, std::abs(fd - pspo_term_slope(adv, alpha)));
  }
  return make_result("pspo_slope_constant", trials, worst, 1e-8);
}

PropertyResult check_no_overconfidence(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;  // positive if the bound is violated
  bool strict_ok = true;
  for (long t = 0; t < trials; ++t) {
    const double p = uniform01(rng);
    const double q = t % 5 == 0 ? p : uniform01(rng);  // include p == q
    const double alpha = random_alpha(rng, t);
    const double s = smooth_prob(p, q, alpha);
    worst = std::max(worst, s - std::max(p, q));
    if (p - q > 1e-12 && alpha > 0.01 && alpha < 0.99 &&
        !(std::max(p, q) - s > 0.0))
      strict_ok = false;
  }
  return make_result("no_overconfidence_bound", trials, worst, 1e-15,
                     strict_ok,
                     strict_ok ? "strict whenever p > q, alpha in (0.01,0.99)"
                               : "strictness violated");
}

PropertyResult check_surrogate_expectation(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    const int vocab = 2 + static_cast<int>(uniform_index(31, rng));
    const StateKey state{0, {}};
    TabularPolicy cur(vocab);
    TabularPolicy old(vocab);
    cur.mutable_logits(state) =
        random_logits(static_cast<std::size_t>(vocab), 2.0, rng);
    old.mutable_logits(state) =
        random_logits(static_cast<std::size_t>(vocab), 2.0, rng);
    const double alpha = random_alpha(rng, t);
    std::vector<double> adv(static_cast<std::size_t>(vocab));
    for (double& a : adv) a = 4.0 * uniform01(rng) - 2.0;

    const auto p_cur = cur.probs(state);
    const auto p_old = old.probs(state);
    // Exhaustive expectation of the smoothed term under the old policy,
    // computed through the ratio path the objective uses.
    double lhs = 0.0;
    double e_cur = 0.0;
    double e_old = 0.0;
    for (int a = 0; a < vocab; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      const double r = importance_ratio(p_cur[ai], p_old[ai]);
      lhs += p_old[ai] * pspo_term(r, adv[ai], alpha);
      e_cur += p_cur[ai] * adv[ai];
      e_old += p_old[ai] * adv[ai];
    }
    const double rhs = (1.0 - alpha) * e_cur + alpha * e_old;
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return make_result("surrogate_expectation_identity", trials, worst, 1e-12);
}

PropertyResult check_pspo_gradient_identity(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  for (long t = 0; t < trials; ++t) {
    const int vocab = 2 + static_cast<int>(uniform_index(31, rng));
    const auto n = static_cast<std::size_t>(vocab);
    const StateKey state{0, {}};
    TabularPolicy cur(vocab);
    TabularPolicy old(vocab);
    cur.mutable_logits(state) = random_logits(n, 2.0, rng);
    old.mutable_logits(state) = random_logits(n, 2.0, rng);
    const double alpha = uniform01(rng);
    std::vector<double> adv(n);
    for (double& a : adv) a = 4.0 * uniform01(rng) - 2.0;
    const auto p_old = old.probs(state);

    // Route 1: differentiate the expectation through the ratio path.
    const auto p_cur = cur.probs(state);
    std::vector<double> g1(n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      const double r = importance_ratio(p_cur[a], p_old[a]);
      const double coeff = p_old[a] * pspo_term_slope(adv[a], alpha) * r;
      for (std::size_t k = 0; k < n; ++k)
        g1[k] += coeff * ((k == a ? 1.0 : 0.0) - p_cur[k]);
    }
    // Route 2: (1 - alpha) times the on-policy expected-advantage gradient.
    std::vector<double> g2(n, 0.0);
    double mean_adv = 0.0;
    for (std::size_t a = 0; a < n; ++a) mean_adv += p_cur[a] * adv[a];
    for (std::size_t k = 0; k < n; ++k)
      g2[k] = (1.0 - alpha) * p_cur[k] * (adv[k] - mean_adv);
    for (std::size_t k = 0; k < n; ++k)
      worst_analytic = std::max(worst_analytic, std::abs(g1[k] - g2[k]));

    // Route 3: central finite differences of the route-1 objective.
    auto objective = [&](const TabularPolicy& probe) {
      const auto probs = probe.probs(state);
      double j = 0.0;
      for (std::size_t a = 0; a < n; ++a)
        j += p_old[a] *
             pspo_term(importance_ratio(probs[a], p_old[a]), adv[a], alpha);
      return j;
    };
    const auto fd = finite_diff_gradient(objective, cur, {state});
    const auto& fdv = fd.at(state);
    for (std::size_t k = 0; k < n; ++k) {
      const double scale = std::max({1.0, std::abs(g1[k]), std::abs(fdv[k])});
      worst_fd = std::max(worst_fd, std::abs(g1[k] - fdv[k]) / scale);
    }
  }
  std::ostringstream note;
  note << "fd residual " << std::scientific << std::setprecision(2) << worst_fd
       << " (tol 1e-06)";
  return make_result("pspo_gradient_identity", trials, worst_analytic, 1e-12,
                     worst_fd <= 1e-6, note.str());
}

PropertyResult check_surrogates_agree_at_one(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    const double adv = 6.0 * uniform01(rng) - 3.0;
    const double eps = 0.01 + 0.98 * uniform01(rng);
    const double alpha = uniform01(rng);
    worst = std::max(worst, std::abs(clipped_term(1.0, adv, eps) - adv));
    worst = std::max(worst, std::abs(pspo_term(1.0, adv, alpha) - adv));
    worst = std::max(worst, std::abs(adv * 1.0 - adv));  // unclipped term
  }
  return make_result("surrogates_agree_at_r1", trials, worst, 1e-12);
}

PropertyResult check_smoothing_fixed_points(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    const double r = 10.0 * uniform01(rng);
    const double p = uniform01(rng);
    const double q = uniform01(rng);
    worst = std::max(worst, std::abs(smoothed_ratio(r, 0.0) - r));
    worst = std::max(worst, std::abs(smooth_prob(p, q, 0.0) - p));
    worst = std::max(worst, std::abs(smoothed_ratio(r, 1.0) - 1.0));
    worst = std::max(worst, std::abs(smooth_prob(p, q, 1.0) - q));
    const int vocab = 2 + static_cast<int>(uniform_index(15, rng));
    const auto pd = random_dist(vocab, rng, false);
    const auto qd = random_dist(vocab, rng, false);
    const auto s0 = smooth_distribution(pd, qd, 0.0);
    const auto s1 = smooth_distribution(pd, qd, 1.0);
    for (int k = 0; k < vocab; ++k) {
      const auto ki = static_cast<std::size_t>(k);
      worst = std::max(worst, std::abs(s0.probs[ki] - pd.probs[ki]));
      worst = std::max(worst, std::abs(s1.probs[ki] - qd.probs[ki]));
    }
  }
  return make_result("smoothing_fixed_points", trials, worst, 0.0);
}

// ---------------------------------------------------------------------------
// Objective / gradient properties
// ---------------------------------------------------------------------------

namespace {

// Random arithmetic batch with an off-policy current policy. Returns false if
// a clip-kink token could not be avoided.
struct FdCase {
  GroupBatch batch;
  TabularPolicy cur;
  TabularPolicy old;
  std::vector<StateKey> states;
};

FdCase make_fd_case(std::mt19937_64& rng, double epsilon, bool perturb,
                    int max_attempts = 10) {
  const auto task = make_arithmetic_task(
      static_cast<int>(uniform_index(100, rng)),
      static_cast<int>(uniform_index(10, rng)),
      static_cast<int>(uniform_index(10, rng)));
  TabularPolicy old(arith_vocab::kSize);
  const auto batch = sample_group(task, old, 4, 1.0, rng());
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    TabularPolicy cur = old;
    std::vector<StateKey> states;
    for (int i = 0; i < batch.group_size(); ++i) {
      const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
      for (int t = 0; t < static_cast<int>(tokens.size()); ++t) {
        const auto state = batch.state_at(i, t);
        if (cur.params().find(state) == cur.params().end()) {
          states.push_back(state);
          auto& logits = cur.mutable_logits(state);
          if (perturb)
            logits = random_logits(logits.size(), 0.3, rng);
        }
      }
    }
    // Reject batches with ratios too close to a clip kink: the surrogate is
    // not differentiable there and finite differences straddle the corner.
    bool clean = true;
    for (int i = 0; i < batch.group_size() && clean; ++i) {
      const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
      StateKey state{batch.prompt_id, {}};
      for (int a : tokens) {
        const double r = importance_ratio(cur.action_prob(state, a),
                                          old.action_prob(state, a));
        if (std::abs(r - (1.0 + epsilon)) < 1e-4 ||
            std::abs(r - (1.0 - epsilon)) < 1e-4) {
          clean = false;
          break;
        }
        state.prefix.push_back(a);
      }
    }
    if (clean || !perturb)
      return FdCase{batch, std::move(cur), std::move(old), std::move(states)};
  }
  throw std::runtime_error("make_fd_case: could not avoid clip kinks");
}

}  // namespace

PropertyResult check_objective_gradient_fd(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    SurrogateConfig cfg;
    switch (t % 3) {
      case 0: cfg.mode = Mode::clip; break;
      case 1: cfg.mode = Mode::pspo; break;
      default: cfg.mode = Mode::raw; break;
    }
    cfg.epsilon = 0.1 + 0.2 * uniform01(rng);
    cfg.alpha = uniform01(rng) * 0.9;
    cfg.token_agg = t % 2 == 0 ? TokenAgg::mean : TokenAgg::sum;
    const bool with_kl = t % 4 == 0;
    auto c = make_fd_case(rng, cfg.epsilon, true);
    TabularPolicy ref(arith_vocab::kSize);
    const TabularPolicy* ref_ptr = nullptr;
    if (with_kl) {
      cfg.beta = 0.05 + 0.1 * uniform01(rng);
      ref_ptr = &ref;
    }

    const auto grad = objective_gradient(c.batch, c.cur, c.old, cfg, ref_ptr);
    auto objective = [&](const TabularPolicy& probe) {
      return group_objective(c.batch, probe, c.old, ref_ptr, cfg);
    };
    const auto fd = finite_diff_gradient(objective, c.cur, c.states);
    for (const auto& [state, fdv] : fd) {
      const auto& gv = grad.at(state);
      for (std::size_t k = 0; k < fdv.size(); ++k) {
        const double scale = std::max({1.0, std::abs(gv[k]), std::abs(fdv[k])});
        worst = std::max(worst, std::abs(gv[k] - fdv[k]) / scale);
      }
    }
  }
  return make_result("objective_gradient_vs_fd", trials, worst, 1e-6);
}

PropertyResult check_clip_flat_region(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (long t = 0; t < trials; ++t) {
    SurrogateConfig cfg;
    cfg.mode = Mode::clip;
    cfg.epsilon = 0.1 + 0.3 * uniform01(rng);
    const bool positive = t % 2 == 0;
    // Single-token batch with the ratio pushed past the active clip edge.
    const double target_r = positive ? 1.0 + cfg.epsilon + 0.05 + uniform01(rng)
                                     : (1.0 - cfg.epsilon) * (0.2 + 0.5 * uniform01(rng));
    const double p_old0 = 0.3;
    const double p_cur0 = std::min(0.9, target_r * p_old0);
    TabularPolicy old(3);
    TabularPolicy cur(3);
    const StateKey state{0, {}};
    old.mutable_logits(state) = {std::log(p_old0), std::log((1.0 - p_old0) / 2.0),
                                 std::log((1.0 - p_old0) / 2.0)};
    cur.mutable_logits(state) = {std::log(p_cur0), std::log((1.0 - p_cur0) / 2.0),
                                 std::log((1.0 - p_cur0) / 2.0)};
    GroupBatch batch;
    batch.prompt_id = 0;
    batch.completions = {{0}};
    batch.old_logprobs = {{std::log(p_old0)}};
    batch.rewards = {0.0};
    batch.advantages = {positive ? 1.0 : -1.0};

    const double r = importance_ratio(cur.action_prob(state, 0), p_old0);
    const bool flat = positive ? r > 1.0 + cfg.epsilon : r < 1.0 - cfg.epsilon;
    if (!flat) continue;  // construction guarantees this; defensive

    const auto grad = objective_gradient(batch, cur, old, cfg);
    for (const auto& [s, gv] : grad)
      for (double g : gv) worst = std::max(worst, std::abs(g));
    const double expected =
        positive ? 1.0 + cfg.epsilon : -(1.0 - cfg.epsilon);
    worst = std::max(worst, std::abs(group_objective(batch, cur, old, nullptr,
                                                     cfg) - expected));
  }
  return make_result("clip_flat_region_zero_gradient", trials, worst, 1e-12);
}

PropertyResult check_noclip_rejection(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  long failures = 0;
  for (long t = 0; t < trials; ++t) {
    SurrogateConfig cfg;
    cfg.mode = Mode::noclip;
    cfg.iterations_mu = 1;
    auto c = make_fd_case(rng, cfg.epsilon, false);  // cur == old
    try {
      const double j = group_objective(c.batch, c.cur, c.old, nullptr, cfg);
      if (!std::isfinite(j)) ++failures;
      // On-policy gradient must match the raw-mode gradient exactly.
      const auto g_noclip = objective_gradient(c.batch, c.cur, c.old, cfg);
      SurrogateConfig raw_cfg = cfg;
      raw_cfg.mode = Mode::raw;
      const auto g_raw = objective_gradient(c.batch, c.cur, c.old, raw_cfg);
      if (g_noclip != g_raw) ++failures;
    } catch (const std::exception&) {
      ++failures;  // on-policy batches must be accepted
    }
    // Perturb one visited state: the batch is now off-policy and noclip must
    // reject it.
    TabularPolicy moved = c.cur;
    moved.mutable_logits(c.states.front())[0] += 0.05;
    try {
      group_objective(c.batch, moved, c.old, nullptr, cfg);
      ++failures;
    } catch (const std::invalid_argument&) {
    }
    try {
      objective_gradient(c.batch, moved, c.old, cfg);
      ++failures;
    } catch (const std::invalid_argument&) {
    }
  }
  return make_result("noclip_rejects_off_policy", trials,
                     static_cast<double>(failures), 0.0);
}

// ---------------------------------------------------------------------------
// Rewards and environments
// ---------------------------------------------------------------------------

PropertyResult check_grade_range(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::string alphabet = "0123456789####  $%.,+-abc\n";
  long violations = 0;
  for (long t = 0; t < trials; ++t) {
    std::string text;
    const auto len = uniform_index(40, rng);
    for (std::size_t i = 0; i < len; ++i)
      text.push_back(alphabet[uniform_index(alphabet.size(), rng)]);
    const double gold = static_cast<double>(uniform_index(19, rng));
    const auto out = grade_completion(text, gold);
    const bool score_ok =
        out.score == 0.0 || out.score == 0.05 || out.score == 1.0;
    const bool source_ok =
        out.parsed_value.has_value() == (out.source != RewardSource::none);
    bool consistent = true;
    if (out.source == RewardSource::format_match)
      consistent = (std::abs(*out.parsed_value - gold) <= 1e-6) ==
                   (out.score == 1.0);
    else if (out.source == RewardSource::last_token_fallback)
      consistent = out.score == (std::abs(*out.parsed_value - gold) <= 1e-6
                                     ? 1.0
                                     : 0.0);
    else
      consistent = out.score == 0.0;
    if (!(score_ok && source_ok && consistent)) ++violations;
  }
  return make_result("grade_score_range", trials,
                     static_cast<double>(violations), 0.0);
}

PropertyResult check_advantage_properties(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  bool normalize_ok = true;
  for (long t = 0; t < trials; ++t) {
    const auto n = 1 + uniform_index(16, rng);
    std::vector<double> rewards(n);
    for (double& r : rewards) {
      switch (uniform_index(4, rng)) {
        case 0: r = 0.0; break;
        case 1: r = 0.05; break;
        case 2: r = 1.0; break;
        default: r = uniform01(rng); break;
      }
    }
    const auto adv = group_advantages(rewards);
    double sum = 0.0;
    for (double a : adv) sum += a;
    worst = std::max(worst, std::abs(sum));

    // Shift invariance: constant reward offsets do not change advantages.
    const double shift = 10.0 * uniform01(rng) - 5.0;
    std::vector<double> shifted = rewards;
    for (double& r : shifted) r += shift;
    const auto adv2 = group_advantages(shifted);
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(adv[i] - adv2[i]));

    const auto norm = group_advantages(rewards, true);
    double var = 0.0;
    bool constant = true;
    for (std::size_t i = 1; i < n; ++i)
      if (rewards[i] != rewards[0]) constant = false;
    for (double a : norm) var += a * a;
    var /= static_cast<double>(n);
    if (constant) {
      for (double a : norm)
        if (a != 0.0) normalize_ok = false;
    } else if (std::abs(std::sqrt(var) - 1.0) > 1e-9) {
      normalize_ok = false;
    }
  }
  return make_result("advantage_centering", trials, worst, 1e-12, normalize_ok,
                     normalize_ok ? "" : "normalized std != 1");
}

PropertyResult check_rollout_consistency(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  long violations = 0;
  for (long t = 0; t < trials; ++t) {
    const auto task = make_arithmetic_task(
        static_cast<int>(t % 1000), static_cast<int>(uniform_index(10, rng)),
        static_cast<int>(uniform_index(10, rng)));
    TabularPolicy policy(arith_vocab::kSize);
    // Decorate a few states, leave others on the uniform fallback.
    policy.mutable_logits(StateKey{task.prompt_id, {}}) =
        random_logits(arith_vocab::kSize, 2.0, rng);
    policy.mutable_logits(StateKey{task.prompt_id, {arith_vocab::kHash}}) =
        random_logits(arith_vocab::kSize, 2.0, rng);

    const double temps[] = {0.5, 0.8, 1.0, 1.3};
    const double temperature = temps[t % 4];
    const auto convention = t % 2 == 0 ? RatioConvention::untempered
                                       : RatioConvention::tempered;
    const auto ep = rollout(task, policy, temperature, rng(), convention);

    if (ep.actions.empty() ||
        ep.actions.size() > static_cast<std::size_t>(task.max_len)) {
      ++violations;
      continue;
    }
    // kEnd terminates; anything else runs to max_len.
    for (std::size_t i = 0; i + 1 < ep.actions.size(); ++i)
      if (ep.actions[i] == arith_vocab::kEnd) ++violations;
    if (ep.actions.back() != arith_vocab::kEnd &&
        ep.actions.size() != static_cast<std::size_t>(task.max_len))
      ++violations;
    if (ep.rendered != detokenize(ep.actions)) ++violations;

    StateKey state{task.prompt_id, {}};
    for (std::size_t i = 0; i < ep.actions.size(); ++i) {
      const int a = ep.actions[i];
      double expected;
      if (convention == RatioConvention::untempered) {
        expected = policy.action_log_prob(state, a);
      } else {
        const auto& logits = policy.logits(state);
        std::vector<double> scaled(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k)
          scaled[k] = logits[k] / temperature;
        expected = std::log(softmax(scaled)[static_cast<std::size_t>(a)]);
      }
      worst = std::max(worst, std::abs(ep.old_logprobs[i] - expected));
      state.prefix.push_back(a);
    }

    // Greedy decoding follows the argmax chain.
    const auto greedy = rollout(task, policy, 0.0, 0);
    StateKey gs{task.prompt_id, {}};
    for (int a : greedy.actions) {
      if (a != policy.greedy_action(gs)) ++violations;
      gs.prefix.push_back(a);
    }
  }
  return make_result("rollout_logprob_consistency", trials, worst, 0.0,
                     violations == 0,
                     violations == 0 ? "" : "shape violations");
}

PropertyResult check_group_batch(long trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  long violations = 0;
  for (long t = 0; t < trials; ++t) {
    const auto task = make_arithmetic_task(
        static_cast<int>(t), static_cast<int>(uniform_index(10, rng)),
        static_cast<int>(uniform_index(10, rng)));
    TabularPolicy policy(arith_vocab::kSize);
    policy.mutable_logits(StateKey{task.prompt_id, {}}) =
        random_logits(arith_vocab::kSize, 1.5, rng);
    const int group = 2 + static_cast<int>(uniform_index(7, rng));
    const std::uint64_t run_seed = rng();
    const auto batch = sample_group(task, policy, group, 0.9, run_seed);

    if (batch.group_size() != group ||
        batch.old_logprobs.size() != static_cast<std::size_t>(group) ||
        batch.rewards.size() != static_cast<std::size_t>(group) ||
        batch.advantages.size() != static_cast<std::size_t>(group))
      ++violations;
    const auto expected_adv = group_advantages(batch.rewards);
    double sum = 0.0;
    for (int i = 0; i < group; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      sum += batch.advantages[ii];
      if (batch.advantages[ii] != expected_adv[ii]) ++violations;
      const auto rendered = detokenize(batch.completions[ii]);
      if (grade_completion(rendered, task.gold).score != batch.rewards[ii])
        ++violations;
      if (batch.completions[ii].size() != batch.old_logprobs[ii].size())
        ++violations;
    }
    worst = std::max(worst, std::abs(sum));

    // Reproducibility: identical run seeds give identical batches.
    const auto again = sample_group(task, policy, group, 0.9, run_seed);
    if (again.completions != batch.completions ||
        again.rewards != batch.rewards ||
        again.old_logprobs != batch.old_logprobs)
      ++violations;
  }
  return make_result("group_batch_invariants", trials, worst, 1e-12,
                     violations == 0,
                     violations == 0 ? "" : "shape or determinism violations");
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

PropertyResult check_one_pass_on_policy(long trials, std::uint64_t seed) {
  double worst = 0.0;
  long checked = 0;
  for (long t = 0; t < trials; ++t) {
    TrainConfig cfg;
    cfg.surrogate.mode = t % 2 == 0 ? Mode::pspo : Mode::clip;
    cfg.surrogate.iterations_mu = 1 + static_cast<int>(t % 3);
    cfg.learning_rate = 0.2;
    cfg.batch_prompts = 2;
    cfg.group_size = 4;
    cfg.total_steps = 4;
    cfg.eval_every = 4;
    cfg.seed = seed + static_cast<std::uint64_t>(t);
    cfg.optimizer = t % 2 == 0 ? OptimizerKind::adam : OptimizerKind::sgd;

    const BanditTaskSet tasks(BanditTask{4, {0.1, 0.9, -0.2, 0.4}});
    const auto result = train(tasks, cfg);
    for (const auto& rec : result.records) {
      if (rec.pass != 1) continue;
      ++checked;
      worst = std::max({worst, rec.max_ratio_dev, rec.tv_mean, rec.kl_mean});
    }
    if (result.records.size() !=
        static_cast<std::size_t>(cfg.total_steps *
                                 cfg.surrogate.iterations_mu))
      worst = std::max(worst, 1.0);
  }
  std::ostringstream note;
  note << checked << " first-pass records";
  return make_result("first_pass_ratios_are_one", trials, worst, 1e-9, true,
                     note.str());
}

PropertyResult check_train_determinism(long trials, std::uint64_t seed) {
  long mismatches = 0;
  for (long t = 0; t < trials; ++t) {
    TrainConfig cfg;
    cfg.surrogate.mode = Mode::pspo;
    cfg.surrogate.iterations_mu = 2;
    cfg.learning_rate = 0.1;
    cfg.batch_prompts = 2;
    cfg.group_size = 4;
    cfg.total_steps = 6;
    cfg.eval_every = 3;
    cfg.seed = seed + static_cast<std::uint64_t>(t);

    const auto tasks = make_arithmetic_tasks(4, seed + 17);
    const ArithmeticTaskSet taskset(tasks, tasks);
    const auto a = train(taskset, cfg);
    const auto b = train(taskset, cfg);
    if (run_records_to_jsonl(a.records) != run_records_to_jsonl(b.records))
      ++mismatches;
    if (a.policy.params() != b.policy.params()) ++mismatches;
  }
  return make_result("train_determinism", trials,
                     static_cast<double>(mismatches), 0.0);
}

PropertyResult check_preset_fidelity() {
  struct Expected {
    const char* preset;
    Mode mode;
    int iterations;
    double lr_reference;
    double epsilon;  // 0 when not pinned
    double alpha;    // 0 when not pinned
  };
  const Expected table[] = {
      {"table1-0.5B", Mode::noclip, 1, 1e-6, 0.0, 0.0},
      {"table1-0.5B", Mode::clip, 2, 5e-6, 0.1, 0.0},
      {"table1-0.5B", Mode::pspo, 2, 5e-7, 0.0, 0.1},
      {"table1-1.5B", Mode::noclip, 1, 1e-6, 0.0, 0.0},
      {"table1-1.5B", Mode::clip, 2, 5e-7, 0.2, 0.0},
      {"table1-1.5B", Mode::pspo, 2, 5e-7, 0.0, 0.1},
  };
  double worst = 0.0;
  long trials = 0;
  for (const auto& e : table) {
    ++trials;
    const auto cell = preset_cell(e.preset, e.mode);
    worst = std::max(worst,
                     std::abs(static_cast<double>(cell.iterations - e.iterations)));
    worst = std::max(worst, std::abs(cell.lr_reference - e.lr_reference));
    worst = std::max(worst, std::abs(cell.lr_tabular - e.lr_reference * 1000.0));
    if (e.epsilon > 0.0)
      worst = std::max(worst, cell.epsilon ? std::abs(*cell.epsilon - e.epsilon)
                                           : 1.0);
    else if (cell.epsilon)
      worst = std::max(worst, 1.0);
    if (e.alpha > 0.0)
      worst = std::max(worst,
                       cell.alpha ? std::abs(*cell.alpha - e.alpha) : 1.0);
    else if (cell.alpha)
      worst = std::max(worst, 1.0);
  }
  return make_result("preset_table_fidelity", trials, worst, 0.0);
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

std::vector<PropertyResult> run_all(const Options& options) {
  const long n = std::max<long>(options.trials, 1);
  const auto s = [&](std::uint64_t label) {
    return derive_seed(options.seed, label);
  };
  std::vector<PropertyResult> results;
  results.push_back(check_tv_contraction(n, s(1)));
  results.push_back(check_kl_contraction_bounds(n, s(2)));
  results.push_back(check_ratio_contraction(n, s(3)));
  results.push_back(check_pspo_slope(std::max<long>(n / 10, 100), s(4)));
  results.push_back(check_no_overconfidence(n, s(5)));
  results.push_back(
      check_surrogate_expectation(std::max<long>(n / 10, 200), s(6)));
  results.push_back(
      check_pspo_gradient_identity(std::max<long>(n / 50, 50), s(7)));
  results.push_back(
      check_surrogates_agree_at_one(std::max<long>(n / 10, 200), s(8)));
  results.push_back(
      check_smoothing_fixed_points(std::max<long>(n / 10, 200), s(9)));
  results.push_back(
      check_objective_gradient_fd(std::max<long>(n / 200, 24), s(10)));
  results.push_back(check_clip_flat_region(std::max<long>(n / 50, 100), s(11)));
  results.push_back(check_noclip_rejection(std::max<long>(n / 100, 50), s(12)));
  results.push_back(check_grade_range(n, s(13)));
  results.push_back(check_advantage_properties(n, s(14)));
  results.push_back(
      check_rollout_consistency(std::max<long>(n / 20, 200), s(15)));
  results.push_back(check_group_batch(std::max<long>(n / 50, 100), s(16)));
  results.push_back(
      check_one_pass_on_policy(std::max<long>(n / 2000, 4), s(17)));
  results.push_back(check_train_determinism(std::max<long>(n / 5000, 2), s(18)));
  results.push_back(check_preset_fidelity());
  return results;
}

}  // namespace pspo::verify
