#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "softcheck/errors.hpp"
#include "softcheck/gibbs.hpp"
#include "softcheck/rng.hpp"

using namespace softcheck;

namespace {

std::vector<TargetPair> some_targets(const GibbsToyModel& m, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TargetPair> t;
  for (std::size_t i = 0; i < count; ++i) t.push_back({rng.below(m.prompts), rng.below(m.responses)});
  return t;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("policy is a normalized tilt of the reference") {
  const auto m = GibbsToyModel::random(2, 8, 2, 3, 0.5, 11);
  const std::vector<double> w{0.4, -0.2, 0.1};
  for (std::size_t x = 0; x < m.prompts; ++x) {
    const auto pi = m.policy(w, x);
    double total = 0.0, z = 0.0;
    for (double p : pi) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t y = 0; y < m.responses; ++y) z += m.reference[x * m.responses + y] * std::exp(m.reward(w, x, y) / 0.5);
    for (std::size_t y = 0; y < m.responses; ++y)
      CHECK(pi[y] == doctest::Approx(m.reference[x * m.responses + y] * std::exp(m.reward(w, x, y) / 0.5) / z));
  }
}

TEST_CASE("two-term gradient agrees with finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto m = GibbsToyModel::random(3, 8, 2, 4, 0.7, seed);
    Rng rng(seed + 100);
    std::vector<double> w(m.dim);
    for (double& x : w) x = rng.normal();
    const auto report = partition_gradient_check(m, w, some_targets(m, 6, seed));
    CHECK(report.agrees);
    CHECK(report.max_abs_diff <= 1e-6);
  }
}

TEST_CASE("constant yes-rate gives zero gradients") {
  auto m = GibbsToyModel::random(2, 8, 2, 3, 0.7, 4);
  std::fill(m.features.begin(), m.features.end(), 0.0);
  const std::vector<double> w{0.3, 0.3, 0.3};
  const auto report = partition_gradient_check(m, w, some_targets(m, 4, 4));
  CHECK(max_abs(report.two_term) <= 1e-12);
  CHECK(max_abs(report.finite_difference) <= 1e-8);
}

TEST_CASE("gradient vanishes as the temperature grows") {
  const std::vector<double> w{0.5, -0.5, 0.2};
  double previous = 1e300;
  for (double temp : {1.0, 10.0, 100.0, 1000.0}) {
    const auto m = GibbsToyModel::random(2, 8, 2, 3, temp, 9);
    const auto report = partition_gradient_check(m, w, some_targets(m, 4, 9));
    const double norm = max_abs(report.two_term);
    CHECK(norm < previous);
    previous = norm;
  }
  CHECK(previous < 1e-3);
}

TEST_CASE("enumeration caps") {
  CHECK_THROWS_AS(GibbsToyModel::random(1, 65, 2, 2, 1.0, 1), NonEnumerable);
  CHECK_THROWS_AS(GibbsToyModel::random(1, 8, 5, 2, 1.0, 1), NonEnumerable);
}
