#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softcheck/constraints.hpp"
#include "softcheck/rational.hpp"

namespace softcheck {

enum class ItemSemantics { Faithful, Merged, Spurious };
enum class Provenance { Derived, Corrupted };

std::string_view to_string(ItemSemantics s);
std::string_view to_string(Provenance p);

struct ChecklistItem {
  std::string id;
  std::string text;
  ItemSemantics semantics = ItemSemantics::Faithful;
  /// Constraint indices into the source spec: one for Faithful, >= 2 distinct
  /// for Merged, none for Spurious.
  std::vector<std::size_t> constraints;
  Provenance provenance = Provenance::Derived;

  friend bool operator==(const ChecklistItem&, const ChecklistItem&) = default;
};

struct Checklist {
  std::vector<ChecklistItem> items;
  std::string source_spec;

  std::size_t size() const { return items.size(); }

  /// Structural invariants plus index bounds against `spec`.
  void validate(const ConstraintSpec& spec) const;

  /// Numbered markdown list, one question per line.
  std::string to_markdown() const;

  friend bool operator==(const Checklist&, const Checklist&) = default;
};

void to_json(Json& j, const ChecklistItem& item);
void from_json(const Json& j, ChecklistItem& item);
void to_json(Json& j, const Checklist& c);
void from_json(const Json& j, Checklist& c);

/// Over-decomposition is modelled by `duplicate_prob` (the same constraint
/// checked by two items). Stages run in order: drop, duplicate, merge, spurious.
struct CorruptionPlan {
  double drop_prob = 0.0;
  double duplicate_prob = 0.0;
  double merge_prob = 0.0;
  double spurious_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_identity() const {
    return drop_prob == 0.0 && duplicate_prob == 0.0 && merge_prob == 0.0 && spurious_prob == 0.0;
  }
};

void to_json(Json& j, const CorruptionPlan& p);
void from_json(const Json& j, CorruptionPlan& p);

/// Question text for one constraint, e.g. "Does the response contain exactly three bullet points?".
std::string item_question(const Constraint& c);

/// Question text for a conjunction of constraints.
std::string merged_question(const ConstraintSpec& spec, const std::vector<std::size_t>& indices);

/// One faithful item per constraint in spec order.
Checklist derive_checklist(const ConstraintSpec& spec);

/// Applies the plan to a fully faithful checklist. Dropping never empties the
/// list (the first item survives if every item would be dropped); merges act
/// on adjacent pairs; one spurious trial per input item. Deterministic in plan.seed.
Checklist corrupt_checklist(const Checklist& checklist, const ConstraintSpec& spec, const CorruptionPlan& plan);

struct RelaxationStats {
  Rational strict;   // product of defined bits
  Rational partial;  // mean of defined bits
  Rational gap;      // partial - strict
  std::size_t defined = 0;
};

/// Spurious items are excluded from the averages. Throws AllSpurious if no item is defined.
RelaxationStats relaxation_stats(const GroundTruthVector& truth);
RelaxationStats relaxation_stats(const ConstraintSpec& spec, const Checklist& checklist, std::string_view text);

}  // namespace softcheck
