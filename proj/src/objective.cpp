#include "pspo/objective.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace pspo {

namespace {

constexpr double kNoclipTolerance = 1e-9;

void require_batch_shape(const GroupBatch& batch) {
  const auto g = batch.completions.size();
  if (g == 0) throw std::invalid_argument("group batch is empty");
  if (batch.advantages.size() != g)
    throw std::invalid_argument("group batch: advantages/completions mismatch");
}

void require_ref(const SurrogateConfig& cfg, const TabularPolicy* ref) {
  if (cfg.beta > 0.0 && ref == nullptr)
    throw std::invalid_argument(
        "reference policy required when surrogate.beta > 0");
}

void check_noclip(double r) {
  if (std::abs(r - 1.0) > kNoclipTolerance)
    throw std::invalid_argument(
        "noclip mode requires on-policy batches (token ratio differs from 1)");
}

double term_value(double r, double adv, const SurrogateConfig& cfg) {
  switch (cfg.mode) {
    case Mode::clip: return clipped_term(r, adv, cfg.epsilon);
    case Mode::pspo: return pspo_term(r, adv, cfg.alpha);
    case Mode::noclip: check_noclip(r); return r * adv;
    case Mode::raw: return r * adv;
  }
  throw std::logic_error("term_value: unknown mode");
}

double term_slope(double r, double adv, const SurrogateConfig& cfg) {
  switch (cfg.mode) {
    case Mode::clip: return clipped_term_slope(r, adv, cfg.epsilon);
    case Mode::pspo: return pspo_term_slope(adv, cfg.alpha);
    case Mode::noclip: check_noclip(r); return adv;
    case Mode::raw: return adv;
  }
  throw std::logic_error("term_slope: unknown mode");
}

double transformed_dev(double r, const SurrogateConfig& cfg) {
  switch (cfg.mode) {
    case Mode::clip:
      return std::abs(std::min(std::max(r, 1.0 - cfg.epsilon),
                               1.0 + cfg.epsilon) - 1.0);
    case Mode::pspo: return std::abs(smoothed_ratio(r, cfg.alpha) - 1.0);
    case Mode::noclip:
    case Mode::raw: return std::abs(r - 1.0);
  }
  throw std::logic_error("transformed_dev: unknown mode");
}

// KL(p || q) over softmax outputs. p_k == 0 terms contribute their limit 0
// (extreme logit gaps underflow to exact zeros); q_k == 0 under p_k > 0 is an
// honest +inf.
double kl_softmax(const std::vector<double>& p, const std::vector<double>& q) {
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    sum += p[k] * std::log(p[k] / q[k]);
  }
  return sum;
}

}  // namespace

double group_objective(const GroupBatch& batch, const TabularPolicy& cur,
                       const TabularPolicy& old_policy,
                       const TabularPolicy* ref, const SurrogateConfig& cfg) {
  cfg.validate();
  require_batch_shape(batch);
  require_ref(cfg, ref);

  const int g = batch.group_size();
  double acc = 0.0;
  for (int i = 0; i < g; ++i) {
    const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
    if (tokens.empty()) continue;
    const double adv = batch.advantages[static_cast<std::size_t>(i)];
    StateKey state{batch.prompt_id, {}};
    state.prefix.reserve(tokens.size());
    double s = 0.0;
    for (int a : tokens) {
      const double r = importance_ratio(cur.action_prob(state, a),
                                        old_policy.action_prob(state, a));
      s += term_value(r, adv, cfg);
      state.prefix.push_back(a);
    }
    acc += cfg.token_agg == TokenAgg::mean
               ? s / static_cast<double>(tokens.size())
               : s;
  }
  double objective = acc / static_cast<double>(g);

  if (cfg.beta > 0.0) {
    // Penalty: mean KL(pi_cur || pi_ref) over distinct visited states.
    std::map<StateKey, char> visited;
    for (int i = 0; i < g; ++i) {
      const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
      StateKey state{batch.prompt_id, {}};
      for (int a : tokens) {
        visited.try_emplace(state, 0);
        state.prefix.push_back(a);
      }
    }
    if (!visited.empty()) {
      double kl_sum = 0.0;
      for (const auto& [state, unused] : visited)
        kl_sum += kl_softmax(cur.probs(state), ref->probs(state));
      objective -= cfg.beta * kl_sum / static_cast<double>(visited.size());
    }
  }
  return objective;
}

LogitGradMap objective_gradient(const GroupBatch& batch,
                                const TabularPolicy& cur,
                                const TabularPolicy& old_policy,
                                const SurrogateConfig& cfg,
                                const TabularPolicy* ref) {
  cfg.validate();
  require_batch_shape(batch);
  require_ref(cfg, ref);

  const int g = batch.group_size();
  const auto vocab = static_cast<std::size_t>(cur.vocab_size());
  LogitGradMap grad;
  for (int i = 0; i < g; ++i) {
    const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
    if (tokens.empty()) continue;
    const double adv = batch.advantages[static_cast<std::size_t>(i)];
    const double weight =
        cfg.token_agg == TokenAgg::mean
            ? 1.0 / (static_cast<double>(g) * static_cast<double>(tokens.size()))
            : 1.0 / static_cast<double>(g);
    StateKey state{batch.prompt_id, {}};
    state.prefix.reserve(tokens.size());
    for (int a : tokens) {
      const auto probs = cur.probs(state);
      const double r = importance_ratio(probs[static_cast<std::size_t>(a)],
                                        old_policy.action_prob(state, a));
      auto [it, inserted] = grad.try_emplace(state, vocab, 0.0);
      const double slope = term_slope(r, adv, cfg);
      if (slope != 0.0) {
        // d r / d logit_k = r * (delta_ak - pi_k)
        const double coeff = weight * slope * r;
        auto& gv = it->second;
        for (std::size_t k = 0; k < vocab; ++k)
          gv[k] += coeff * ((static_cast<int>(k) == a ? 1.0 : 0.0) - probs[k]);
      }
      state.prefix.push_back(a);
    }
  }

  if (cfg.beta > 0.0 && !grad.empty()) {
    // d KL(pi || ref) / d logit_k = pi_k * (ln(pi_k / ref_k) - KL); the
    // pi_k == 0 limit is 0.
    const double scale = cfg.beta / static_cast<double>(grad.size());
    for (auto& [state, gv] : grad) {
      const auto p = cur.probs(state);
      const auto q = ref->probs(state);
      const double kl = kl_softmax(p, q);
      for (std::size_t k = 0; k < vocab; ++k) {
        if (p[k] <= 0.0) continue;
        gv[k] -= scale * p[k] * (std::log(p[k] / q[k]) - kl);
      }
    }
  }
  return grad;
}

RatioStats ratio_deviations(const GroupBatch& batch, const TabularPolicy& cur,
                            const TabularPolicy& old_policy,
                            const SurrogateConfig& cfg) {
  RatioStats stats;
  for (int i = 0; i < batch.group_size(); ++i) {
    const auto& tokens = batch.completions[static_cast<std::size_t>(i)];
    StateKey state{batch.prompt_id, {}};
    state.prefix.reserve(tokens.size());
    for (int a : tokens) {
      const double r = importance_ratio(cur.action_prob(state, a),
                                        old_policy.action_prob(state, a));
      stats.max_dev = std::max(stats.max_dev, std::abs(r - 1.0));
      stats.max_transformed_dev =
          std::max(stats.max_transformed_dev, transformed_dev(r, cfg));
      state.prefix.push_back(a);
    }
  }
  return stats;
}

void accumulate_grad(LogitGradMap& acc, const LogitGradMap& g, double scale) {
  for (const auto& [state, gv] : g) {
    auto [it, inserted] = acc.try_emplace(state, gv.size(), 0.0);
    auto& av = it->second;
    for (std::size_t k = 0; k < gv.size(); ++k) av[k] += scale * gv[k];
  }
}

}  // namespace pspo
