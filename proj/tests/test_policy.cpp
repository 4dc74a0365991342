#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pspo/policy.hpp"

using pspo::StateKey;
using pspo::TabularPolicy;

namespace {

// Reference softmax computed in extended precision with explicit
// normalization, independent of the library implementation.
std::vector<double> softmax_oracle(const std::vector<double>& logits) {
  long double max_logit = logits[0];
  for (double l : logits) max_logit = std::max<long double>(max_logit, l);
  long double total = 0.0L;
  std::vector<long double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(logits[i]) - max_logit);
    total += e[i];
  }
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(e[i] / total);
  return out;
}

}  // namespace

TEST_CASE("softmax matches hand values") {
  // exp(ln 3) = 3 against three exp(0) = 1 terms: first mass 3/6.
  const std::vector<double> skewed = {std::log(3.0), 0.0, 0.0, 0.0};
  std::vector<double> probs = pspo::softmax(skewed);
  CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(probs[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  const std::vector<double> flat = {0.0, 0.0, 0.0, 0.0};
  std::vector<double> uniform = pspo::softmax(flat);
  for (double p : uniform) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));

  double sum = 0.0;
  for (double p : probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax is stable for widely spread logits") {
  std::vector<double> logits = {10.0, -10.0, 700.0, -700.0};
  std::vector<double> probs = pspo::softmax(logits);
  std::vector<double> expect = softmax_oracle(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    CHECK(std::isfinite(probs[i]));
    CHECK(probs[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  }
}

TEST_CASE("log_softmax agrees with log of softmax") {
  std::vector<double> logits = {1.25, -0.5, 3.0};
  std::vector<double> probs = pspo::softmax(logits);
  std::vector<double> logp = pspo::log_softmax(logits);
  for (std::size_t i = 0; i < logits.size(); ++i)
    CHECK(logp[i] == doctest::Approx(std::log(probs[i])).epsilon(1e-13));
}

TEST_CASE("unvisited states are uniform") {
  TabularPolicy policy(5);
  StateKey state{3, {1, 2}};
  std::vector<double> probs = policy.probs(state);
  REQUIRE(probs.size() == 5);
  for (double p : probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(policy.params().empty());
}

TEST_CASE("mutable_logits creates and persists state entries") {
  TabularPolicy policy(3);
  StateKey state{0, {}};
  policy.mutable_logits(state)[2] = 1.0;
  CHECK(policy.params().size() == 1);
  std::vector<double> probs = policy.probs(state);
  CHECK(probs[2] > probs[0]);
  CHECK(probs[0] == doctest::Approx(probs[1]).epsilon(1e-15));
}

TEST_CASE("action_prob bounds checking") {
  TabularPolicy policy(4);
  StateKey state{0, {}};
  CHECK(policy.action_prob(state, 3) == doctest::Approx(0.25));
  CHECK_THROWS_AS((void)policy.action_prob(state, 4), std::out_of_range);
  CHECK_THROWS_AS((void)policy.action_prob(state, -1), std::out_of_range);
}

TEST_CASE("greedy_action breaks ties toward the lowest index") {
  TabularPolicy policy(4);
  StateKey state{0, {7}};
  CHECK(policy.greedy_action(state) == 0);
  policy.mutable_logits(state) = {0.0, 2.0, 2.0, 1.0};
  CHECK(policy.greedy_action(state) == 1);
}

TEST_CASE("policy rejects degenerate vocab sizes") {
  CHECK_THROWS_AS(TabularPolicy(1), std::invalid_argument);
  CHECK_THROWS_AS(TabularPolicy(0), std::invalid_argument);
  CHECK_NOTHROW(TabularPolicy(2));
}

TEST_CASE("state keys order deterministically") {
  // Map iteration order drives every serialization path, so the ordering
  // must sort by prompt first and prefix lexicographically second.
  StateKey a{0, {1, 2}};
  StateKey b{0, {1, 3}};
  StateKey c{1, {}};
  CHECK(a < b);
  CHECK(b < c);
  CHECK((a == StateKey{0, {1, 2}}));
}
