#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pspo/divergence.hpp"

using namespace pspo;

namespace {

Categorical cat(std::vector<double> probs) {
  Categorical c;
  c.probs = std::move(probs);
  return c;
}

}  // namespace

TEST_CASE("l1 distance hand values") {
  CHECK(l1_distance(cat({0.7, 0.3}), cat({0.5, 0.5})) ==
        doctest::Approx(0.4).epsilon(1e-15));
  CHECK(l1_distance(cat({0.25, 0.25, 0.5}), cat({0.25, 0.25, 0.5})) == 0.0);
  CHECK_THROWS_AS((void)l1_distance(cat({0.5, 0.5}), cat({0.2, 0.3, 0.5})),
                  std::length_error);
}

TEST_CASE("kl divergence hand values") {
  // 0.7 ln(0.7/0.5) + 0.3 ln(0.3/0.5), summed in extended precision.
  long double expect =
      0.7L * std::log(0.7L / 0.5L) + 0.3L * std::log(0.3L / 0.5L);
  CHECK(kl_divergence(cat({0.7, 0.3}), cat({0.5, 0.5})) ==
        doctest::Approx(static_cast<double>(expect)).epsilon(1e-14));
  CHECK(kl_divergence(cat({0.7, 0.3}), cat({0.5, 0.5})) ==
        doctest::Approx(0.0822828785050517).epsilon(1e-12));
}

TEST_CASE("kl handles zero mass and support mismatch") {
  // Terms with p_i = 0 contribute nothing.
  CHECK(kl_divergence(cat({1.0, 0.0}), cat({0.5, 0.5})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // p_i > 0 against q_i = 0 has infinite divergence.
  CHECK(std::isinf(kl_divergence(cat({0.5, 0.5}), cat({1.0, 0.0}))));
  CHECK(kl_divergence(cat({0.3, 0.7}), cat({0.3, 0.7})) == 0.0);
}

TEST_CASE("categorical construction validates its input") {
  CHECK_NOTHROW((void)Categorical::from({0.5, 0.5}));
  CHECK_THROWS_AS((void)Categorical::from({1.0}), std::invalid_argument);
  CHECK_THROWS_AS((void)Categorical::from({0.6, -0.1, 0.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)Categorical::from({0.6, 0.6}), std::invalid_argument);
  // Sums within the 1e-12 budget are accepted.
  CHECK_NOTHROW((void)Categorical::from({0.5, 0.5 + 5e-13}));
}

TEST_CASE("smoothing contracts l1 distance by exactly one minus alpha") {
  Categorical p = cat({0.7, 0.2, 0.1});
  Categorical q = cat({0.2, 0.3, 0.5});
  Categorical mixed = smooth_distribution(p, q, 0.25);
  double before = l1_distance(p, q);
  double after = l1_distance(mixed, q);
  CHECK(before == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(after == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(after == doctest::Approx((1.0 - 0.25) * before).epsilon(1e-14));
}

TEST_CASE("smoothing validates alpha and never leaves the simplex") {
  Categorical p = cat({0.9, 0.05, 0.05});
  Categorical q = cat({0.1, 0.1, 0.8});
  CHECK_THROWS_AS((void)smooth_distribution(p, q, -0.1), std::invalid_argument);
  CHECK_THROWS_AS((void)smooth_distribution(p, q, 1.1), std::invalid_argument);
  Categorical m = smooth_distribution(p, q, 0.6);
  double total = 0.0;
  for (double v : m.probs) {
    CHECK(v >= 0.0);
    total += v;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  // Fixed points: alpha 0 returns p, alpha 1 returns q.
  CHECK(smooth_distribution(p, q, 0.0).probs == p.probs);
  CHECK(smooth_distribution(p, q, 1.0).probs == q.probs);
}
