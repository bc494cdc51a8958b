#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "softcheck/errors.hpp"
#include "softcheck/reward.hpp"

using namespace softcheck;

TEST_CASE("soft score") {
  CHECK(soft_score({true, true, false}) == Rational(2, 3));
  CHECK(soft_score({true, true}) == Rational(1));
  CHECK(soft_score({false, false}) == Rational(0));
}

TEST_CASE("generator reward") {
  for (double beta : {0.0, 0.5, 1.0}) CHECK(generator_reward(Rational(1), beta) == 1.0);
  CHECK(generator_reward(Rational(2, 3), 0.5) == doctest::Approx(1.0 / 3.0));
  CHECK(generator_reward(Rational(0), 0.7) == 0.0);
}

TEST_CASE("reward modes") {
  RewardConfig holistic{1.0, RewardMode::Holistic};
  RewardInputs judged;
  judged.holistic = true;
  CHECK(reward(holistic, judged).R == 1.0);

  RewardConfig soft{1.0, RewardMode::Soft};
  const auto r = reward(soft, RewardInputs{{true, true, false}, {}});
  CHECK(r.R == doctest::Approx(2.0 / 3.0));
  CHECK_FALSE(r.strict);

  RewardConfig strict{1.0, RewardMode::Strict};
  CHECK(reward(strict, RewardInputs{{true, true, true}, {}}).R == 1.0);
  CHECK(reward(strict, RewardInputs{{true, false, true}, {}}).R == 0.0);
}

TEST_CASE("oracle fields") {
  GroundTruthVector truth;
  truth.bits = {true, false};
  RewardConfig soft;
  const auto r = reward(soft, RewardInputs{{true, true}, {}}, &truth);
  REQUIRE(r.oracle.has_value());
  CHECK(r.oracle->strict == Rational(0));
  CHECK(r.R == 1.0);
  CHECK_THROWS_AS(reward(soft, RewardInputs{{true}, {}}, nullptr, true), MissingGroundTruth);
}

TEST_CASE("expected reward equals enumeration over label vectors") {
  const std::vector<double> probs{0.9, 0.3, 0.6};
  for (double beta : {0.25, 1.0})
    for (double lenient : {0.0, 0.2}) {
      RewardConfig config{beta, RewardMode::Soft};
      double total = 0.0;
      for (int mask = 0; mask < 8; ++mask) {
        double pr = 1.0;
        std::vector<bool> labels;
        for (int k = 0; k < 3; ++k) {
          const bool on = (mask >> k) & 1;
          labels.push_back(on);
          pr *= on ? probs[k] : 1.0 - probs[k];
        }
        total += pr * generator_reward(soft_score(labels), beta);
      }
      const double expected = lenient + (1.0 - lenient) * total;
      CHECK(expected_reward(probs, lenient, config) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("reward mode names") {
  CHECK(parse_reward_mode("soft") == RewardMode::Soft);
  CHECK(to_string(RewardMode::Holistic) == "holistic");
  CHECK_THROWS(parse_reward_mode("fuzzy"));
}
