#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "softcheck/errors.hpp"
#include "softcheck/verifier.hpp"

using namespace softcheck;

namespace {

GroundTruthVector bits(std::initializer_list<int> v) {
  GroundTruthVector t;
  for (int b : v) t.bits.push_back(b == 1);
  return t;
}

VoteKey key(std::uint64_t trial) { return VoteKey{17, 0, 3, trial}; }

// Binomial tail computed by direct summation.
double binomial_tail(double p, int n, int at_least) {
  double total = 0.0;
  for (int k = at_least; k <= n; ++k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    total += c * std::pow(p, k) * std::pow(1.0 - p, n - k);
  }
  return total;
}

}  // namespace

TEST_CASE("oracle votes equal the truth") {
  const Verifier v = OracleVerifier{};
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto votes = sample_item_votes(v, bits({1, 0}), 1, key(t));
    CHECK(votes == std::vector<std::uint8_t>{1, 0});
  }
}

TEST_CASE("perfect noisy verifier reproduces the truth") {
  const Verifier v = NoisyVerifier{{1, 1, 1, 1}, {}};
  for (std::uint64_t t = 0; t < 20; ++t)
    CHECK(sample_item_votes(v, bits({1, 0, 1}), 2, key(t)) == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1});
}

TEST_CASE("always-yes endpoint") {
  const Verifier v = NoisyVerifier{{1, 1, 1, 0}, {}};
  for (std::uint64_t t = 0; t < 50; ++t) CHECK(sample_item_votes(v, bits({0}), 4, key(t)) == std::vector<std::uint8_t>(4, 1));
}

TEST_CASE("lenient mode votes yes on every item") {
  const Verifier v = NoisyVerifier{{1, 1, 1, 1}, {1.0}};
  CHECK(sample_item_votes(v, bits({0, 0}), 3, key(0)) == std::vector<std::uint8_t>(6, 1));
}

TEST_CASE("pass rates are exact fractions") {
  VoteMatrix m(1, 3, 3);
  // item 0: (1,0,1), item 1: all ones, item 2: all zeros
  m.at(0, 0, 0) = 1, m.at(0, 0, 2) = 1;
  for (int j = 0; j < 3; ++j) m.at(0, 1, j) = 1;
  const auto rates = pass_rates(m);
  CHECK(rates.at(0, 0) == Rational(2, 3));
  CHECK(rates.at(0, 1) == Rational(1));
  CHECK(rates.at(0, 2) == Rational(0));
}

TEST_CASE("inclusive threshold aggregation") {
  CHECK(passes_threshold(Rational(3, 4), 0.75));
  CHECK_FALSE(passes_threshold(Rational(2, 3), 0.75));
  for (double tau : {0.1, 0.5, 0.75, 1.0}) {
    CHECK(passes_threshold(Rational(1), tau));
    CHECK_FALSE(passes_threshold(Rational(0), tau));
  }
  const std::vector<Rational> rates{Rational(3, 4), Rational(2, 3), Rational(1)};
  CHECK(aggregate(rates, 0.75) == std::vector<bool>{true, false, true});
}

TEST_CASE("label probability matches the binomial tail") {
  for (int J : {1, 3, 4, 8})
    for (double p : {0.1, 0.5, 0.83})
      for (double tau : {0.375, 0.5, 0.75}) {
        const int need = static_cast<int>(std::ceil(tau * J - 1e-12));
        CHECK(label_probability(p, J, tau) == doctest::Approx(binomial_tail(p, J, need)).epsilon(1e-12));
      }
}

TEST_CASE("holistic judgments") {
  const Verifier perfect = NoisyVerifier{{1, 1, 1, 1}, {}};
  CHECK(holistic_judgment(perfect, true, key(0)));
  CHECK_FALSE(holistic_judgment(perfect, false, key(0)));

  const int n = 100000;
  const Verifier q7 = NoisyVerifier{{1, 0.7, 1, 1}, {}};
  const Verifier p477 = NoisyVerifier{{0.477, 1, 1, 1}, {}};
  int yes_fail = 0, yes_pass = 0;
  for (int t = 0; t < n; ++t) {
    yes_fail += holistic_judgment(q7, false, key(t));
    yes_pass += holistic_judgment(p477, true, key(t));
  }
  CHECK(std::abs(yes_fail / double(n) - 0.3) <= 3 * std::sqrt(0.3 * 0.7 / n));
  CHECK(std::abs(yes_pass / double(n) - 0.477) <= 3 * std::sqrt(0.477 * 0.523 / n));
}

TEST_CASE("empirical rates") {
  std::vector<EvalExample> examples;
  for (int i = 0; i < 25000; ++i) {
    examples.push_back({{true, true, false, true}});
    examples.push_back({{true, true, true, true}});
  }
  const auto oracle = empirical_rates(OracleVerifier{}, examples, 1);
  CHECK(oracle.rates == NoiseParams{1, 1, 1, 1});

  const auto est = empirical_rates(NoisyVerifier{{0.9, 0.8, 0.9, 0.8}, {}}, examples, 2);
  const double n_pos = static_cast<double>(est.n_item_pos), n_neg = static_cast<double>(est.n_item_neg);
  CHECK(n_pos + n_neg >= 100000);
  CHECK(std::abs(est.rates.p_item - 0.9) <= 3 * std::sqrt(0.09 / n_pos));
  CHECK(std::abs(est.rates.q_item - 0.8) <= 3 * std::sqrt(0.16 / n_neg));

  std::ostringstream csv;
  write_rates_csv(csv, est);
  CHECK(csv.str().rfind("p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg", 0) == 0);

  const std::vector<EvalExample> passing(10, EvalExample{{true, true}});
  CHECK_THROWS_AS(empirical_rates(NoisyVerifier{{0.9, 0.8, 0.9, 0.8}, {}}, passing, 3), InsufficientSupport);
}

TEST_CASE("votes are a pure function of the key") {
  const Verifier v = NoisyVerifier{{0.7, 0.7, 0.7, 0.7}, {0.2}};
  CHECK(sample_item_votes(v, bits({1, 0, 1}), 5, key(9)) == sample_item_votes(v, bits({1, 0, 1}), 5, key(9)));
}

TEST_CASE("noise parameters are validated") {
  CHECK_THROWS(NoiseParams{1.2, 1, 1, 1}.validate());
  CHECK_THROWS(CorrelationModel{-0.1}.validate());
}
