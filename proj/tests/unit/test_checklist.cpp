#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "softcheck/checklist.hpp"
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

GroundTruthVector bits(std::initializer_list<int> v) {
  GroundTruthVector t;
  for (int b : v) t.bits.push_back(b == 1);
  return t;
}

}  // namespace

TEST_CASE("derived checklist has one faithful item per constraint") {
  const auto spec = paris_spec();
  const auto list = derive_checklist(spec);
  REQUIRE(list.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(list.items[k].semantics == ItemSemantics::Faithful);
    CHECK(list.items[k].constraints == std::vector<std::size_t>{k});
  }
  CHECK(list.items[0].text == "Does the response contain exactly three bullet points?");
  CHECK(list.items[1].text.find("Paris") != std::string::npos);
  CHECK(list.items[2].text.find("travel") != std::string::npos);
  CHECK_NOTHROW(list.validate(spec));
}

TEST_CASE("identity corruption plan leaves the checklist unchanged") {
  const auto spec = paris_spec();
  const auto list = derive_checklist(spec);
  CorruptionPlan plan;
  plan.seed = 99;
  CHECK(plan.is_identity());
  CHECK(corrupt_checklist(list, spec, plan) == list);
}

TEST_CASE("merge of the first two items") {
  ConstraintSpec spec;
  spec.id = "two";
  spec.constraints = {Constraint::item_count(3), Constraint::include_keyword("Paris")};
  CorruptionPlan plan;
  plan.merge_prob = 1.0;
  const auto merged = corrupt_checklist(derive_checklist(spec), spec, plan);
  REQUIRE(merged.size() == 1);
  CHECK(merged.items[0].semantics == ItemSemantics::Merged);
  CHECK(merged.items[0].constraints == std::vector<std::size_t>{0, 1});
  CHECK(merged.items[0].text.find("Paris") != std::string::npos);
}

TEST_CASE("dropping everything keeps one item") {
  const auto spec = paris_spec();
  CorruptionPlan plan;
  plan.drop_prob = 1.0;
  CHECK(corrupt_checklist(derive_checklist(spec), spec, plan).size() == 1);
}

TEST_CASE("duplicates and spurious items") {
  const auto spec = paris_spec();
  CorruptionPlan plan;
  plan.duplicate_prob = 1.0;
  plan.spurious_prob = 1.0;
  const auto list = corrupt_checklist(derive_checklist(spec), spec, plan);
  std::size_t spurious = 0;
  for (const auto& item : list.items) spurious += item.semantics == ItemSemantics::Spurious;
  CHECK(spurious >= 1);
  CHECK(list.size() >= 6);
  CHECK_NOTHROW(list.validate(spec));
}

TEST_CASE("corruption is deterministic in the plan seed") {
  const auto spec = paris_spec();
  CorruptionPlan plan{0.3, 0.3, 0.3, 0.3, 5};
  CHECK(corrupt_checklist(derive_checklist(spec), spec, plan) == corrupt_checklist(derive_checklist(spec), spec, plan));
}

TEST_CASE("relaxation statistics") {
  auto s = relaxation_stats(bits({1, 1, 0}));
  CHECK(s.strict == Rational(0));
  CHECK(s.partial == Rational(2, 3));
  CHECK(s.gap == Rational(2, 3));

  s = relaxation_stats(bits({1, 1, 1}));
  CHECK(s.gap == Rational(0));
  CHECK(s.strict == Rational(1));

  s = relaxation_stats(bits({1, 0, 0, 0}));
  CHECK(s.partial == Rational(1, 4));
  CHECK(s.gap == Rational(1, 4));
}

TEST_CASE("spurious items are excluded from the relaxation") {
  GroundTruthVector t;
  t.bits = {true, std::nullopt, false};
  const auto s = relaxation_stats(t);
  CHECK(s.defined == 2);
  CHECK(s.partial == Rational(1, 2));
  GroundTruthVector none;
  none.bits = {std::nullopt};
  CHECK_THROWS_AS(relaxation_stats(none), AllSpurious);
}

TEST_CASE("out-of-range item reference is a mismatch") {
  const auto spec = paris_spec();
  Checklist list;
  list.items.push_back({"x", "?", ItemSemantics::Faithful, {7}, Provenance::Derived});
  CHECK_THROWS_AS(ground_truth(spec, list, "text"), ChecklistSpecMismatch);
}
