#pragma once

#include <map>
#include <vector>

#include "pspo/policy.hpp"
#include "pspo/reward.hpp"
#include "pspo/surrogate.hpp"

namespace pspo {

// Gradient of a scalar objective with respect to every touched logit.
using LogitGradMap = std::map<StateKey, std::vector<double>>;

// Group surrogate objective. Per completion, per-token surrogate terms are
// aggregated (mean by default), then averaged over the group. With beta > 0 a
// KL(pi_cur || pi_ref) penalty, averaged over the batch's distinct visited
// states, is subtracted; ref must be non-null in that case.
//
// noclip mode requires on-policy data: any token with |r - 1| > 1e-9 raises
// std::invalid_argument.
double group_objective(const GroupBatch& batch, const TabularPolicy& cur,
                       const TabularPolicy& old_policy,
                       const TabularPolicy* ref, const SurrogateConfig& cfg);

// Exact gradient of group_objective with respect to the logits of cur.
// Entries exist for every state visited by the batch (and are zero vectors
// where the surrogate is flat, e.g. clipped-out tokens).
LogitGradMap objective_gradient(const GroupBatch& batch,
                                const TabularPolicy& cur,
                                const TabularPolicy& old_policy,
                                const SurrogateConfig& cfg,
                                const TabularPolicy* ref = nullptr);

// Largest per-token deviation of the importance ratio from 1, before and
// after the mode's ratio transform (clipping for clip mode, smoothing for
// pspo; identity otherwise).
struct RatioStats {
  double max_dev = 0.0;
  double max_transformed_dev = 0.0;
};

RatioStats ratio_deviations(const GroupBatch& batch, const TabularPolicy& cur,
                            const TabularPolicy& old_policy,
                            const SurrogateConfig& cfg);

// Sum maps elementwise: acc += scale * g.
void accumulate_grad(LogitGradMap& acc, const LogitGradMap& g, double scale);

}  // namespace pspo
