#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "softcheck/checklist.hpp"
#include "softcheck/constraints.hpp"
#include "softcheck/errors.hpp"

using namespace softcheck;

namespace {

ConstraintSpec paris_spec() {
  ConstraintSpec spec;
  spec.id = "paris";
  spec.constraints = {Constraint::item_count(3), Constraint::include_keyword("Paris"),
                      Constraint::exclude_keyword("travel")};
  return spec;
}

// Slot values: bullets-1, Paris, river, travel, pad, casing, closing.
ResponseSlots slots(int bullets, int paris, int river, int travel, int pad = 0, int mixed = 1, int closing = 0) {
  return ResponseSlots{{bullets - 1, paris, river, travel, pad, mixed, closing}};
}

}  // namespace

TEST_CASE("keyword absent from the reading-list response") {
  const std::string text = "* 1984 by George Orwell; Happy Reading!";
  CHECK_FALSE(check_constraint(Constraint::include_keyword("Paris"), text));
  CHECK(check_constraint(Constraint::ends_with("Happy Reading!"), text));
}

TEST_CASE("item count counts bullet lines") {
  const std::string two = "* one\n* two\n";
  CHECK_FALSE(check_constraint(Constraint::item_count(3), two));
  CHECK(check_constraint(Constraint::item_count(2), two));
}

TEST_CASE("word limits, casing and exclusion") {
  CHECK(check_constraint(Constraint::min_words(3), "a b c"));
  CHECK_FALSE(check_constraint(Constraint::min_words(4), "a b c"));
  CHECK(check_constraint(Constraint::max_words(3), "a b c"));
  CHECK_FALSE(check_constraint(Constraint::max_words(2), "a b c"));
  CHECK(check_constraint(Constraint::all_lowercase(), "all lower here"));
  CHECK_FALSE(check_constraint(Constraint::all_lowercase(), "Not lower"));
  CHECK(check_constraint(Constraint::exclude_keyword("travel"), "we stay home."));
  CHECK_FALSE(check_constraint(Constraint::exclude_keyword("travel"), "we Travel."));
}

TEST_CASE("ground truth on a response meeting two of three requirements") {
  const Environment env;
  const auto spec = paris_spec();
  const auto list = derive_checklist(spec);
  const auto truth = ground_truth(spec, list, env.render(slots(3, 1, 0, 1)));
  REQUIRE(truth.size() == 3);
  CHECK(truth.bits[0] == true);
  CHECK(truth.bits[1] == true);
  CHECK(truth.bits[2] == false);

  const auto perfect = ground_truth(spec, list, env.render(slots(3, 1, 0, 0)));
  for (const auto& b : perfect.bits) CHECK(b == true);
}

TEST_CASE("merged item is the conjunction of its constraints") {
  const Environment env;
  const auto spec = paris_spec();
  Checklist list;
  list.source_spec = spec.id;
  list.items.push_back({"m", merged_question(spec, {0, 1}), ItemSemantics::Merged, {0, 1}, Provenance::Corrupted});
  // Enumerate the truth assignments of (bullets, Paris, travel) and compare to AND.
  for (int bullets : {2, 3})
    for (int paris : {0, 1})
      for (int travel : {0, 1}) {
        const auto text = env.render(slots(bullets, paris, 0, travel));
        const bool expected = bullets == 3 && paris == 1;
        CHECK(ground_truth(spec, list, text).bits[0] == expected);
      }
}

TEST_CASE("spec sampling") {
  const Environment env;
  FamilyConfig single;
  single.kinds = {ConstraintKind::IncludeKeyword};
  single.max_constraints = 1;
  CHECK(sample_spec(single, env, 7).constraints.size() == 1);

  FamilyConfig all;
  CHECK(sample_spec(all, env, 42) == sample_spec(all, env, 42));

  FamilyConfig bad;
  bad.kinds = {ConstraintKind::MinWords, ConstraintKind::MaxWords};
  bad.min_constraints = bad.max_constraints = 2;
  bad.min_words_lo = bad.min_words_hi = 10;
  bad.max_words_lo = bad.max_words_hi = 5;
  CHECK_THROWS_AS(sample_spec(bad, env, 1), UnsatisfiableFamily);
}

TEST_CASE("sampled specs are satisfiable and valid") {
  const Environment env;
  FamilyConfig family;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = sample_spec(family, env, seed);
    CHECK_NOTHROW(spec.validate());
    CHECK(env.find_witness(spec).has_value());
    std::set<std::string> keys;
    for (const auto& c : spec.constraints) keys.insert(c.key());
    CHECK(keys.size() == spec.constraints.size());
  }
}

TEST_CASE("environment encode/decode round trip") {
  const Environment env;
  for (std::size_t i = 0; i < env.response_space_size(); ++i) CHECK(env.encode(env.decode(i)) == i);
}

TEST_CASE("spec validation rejects bad parameters") {
  CHECK_THROWS_AS(Constraint::item_count(0).validate(), InvalidArgument);
  CHECK_THROWS_AS(Constraint::include_keyword("two words").validate(), InvalidArgument);
  ConstraintSpec dup;
  dup.constraints = {Constraint::all_lowercase(), Constraint::all_lowercase()};
  CHECK_THROWS(dup.validate());
  ConstraintSpec crossed;
  crossed.constraints = {Constraint::min_words(20), Constraint::max_words(10)};
  CHECK_THROWS(crossed.validate());
}

TEST_CASE("spec json round trip") {
  const auto spec = paris_spec();
  Json j = spec;
  CHECK(j.get<ConstraintSpec>() == spec);
}
