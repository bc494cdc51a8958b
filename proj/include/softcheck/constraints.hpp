#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace softcheck {

using Json = nlohmann::ordered_json;

enum class ConstraintKind {
  ItemCount,
  IncludeKeyword,
  ExcludeKeyword,
  MinWords,
  MaxWords,
  EndsWith,
  AllLowercase,
};

std::string_view to_string(ConstraintKind kind);
ConstraintKind parse_constraint_kind(std::string_view name);

/// One rule-checkable requirement. `n` is used by the count/length kinds,
/// `text` by the keyword kinds (a single token) and by EndsWith (a phrase).
struct Constraint {
  ConstraintKind kind = ConstraintKind::AllLowercase;
  int n = 0;
  std::string text;

  static Constraint item_count(int n) { return {ConstraintKind::ItemCount, n, {}}; }
  static Constraint include_keyword(std::string word) { return {ConstraintKind::IncludeKeyword, 0, std::move(word)}; }
  static Constraint exclude_keyword(std::string word) { return {ConstraintKind::ExcludeKeyword, 0, std::move(word)}; }
  static Constraint min_words(int n) { return {ConstraintKind::MinWords, n, {}}; }
  static Constraint max_words(int n) { return {ConstraintKind::MaxWords, n, {}}; }
  static Constraint ends_with(std::string phrase) { return {ConstraintKind::EndsWith, 0, std::move(phrase)}; }
  static Constraint all_lowercase() { return {ConstraintKind::AllLowercase, 0, {}}; }

  /// Throws InvalidArgument when parameters are out of domain.
  void validate() const;

  /// Canonical "kind:param" key, e.g. "item_count:3".
  std::string key() const;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

struct ConstraintSpec {
  std::string id;
  std::vector<Constraint> constraints;
  std::uint64_t seed = 0;

  /// Checks length 1..8, per-constraint validity, no duplicates, MinWords <= MaxWords.
  void validate() const;

  friend bool operator==(const ConstraintSpec&, const ConstraintSpec&) = default;
};

void to_json(Json& j, const Constraint& c);
void from_json(const Json& j, Constraint& c);
void to_json(Json& j, const ConstraintSpec& s);
void from_json(const Json& j, ConstraintSpec& s);

/// Whitespace-delimited tokens.
std::vector<std::string_view> split_words(std::string_view text);

/// 1 iff the rendered text satisfies the constraint. Words are whitespace
/// tokens, a bullet is a line starting with "* ", keyword and suffix matches
/// are ASCII case-insensitive, casing is ASCII-only.
bool check_constraint(const Constraint& constraint, std::string_view text);

// ---------------------------------------------------------------------------
// Response space

struct EnvironmentConfig {
  std::vector<std::string> keywords{"Paris", "river", "travel"};
  std::string closing_phrase{"Happy Reading!"};
  int max_bullets = 5;
  std::vector<int> pad_values{0, 5, 10, 15};
  /// Values usable by MinWords / MaxWords; also the policy's prompt vocabulary.
  std::vector<int> word_thresholds{5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70};

  void validate() const;
  friend bool operator==(const EnvironmentConfig&, const EnvironmentConfig&) = default;
};

void to_json(Json& j, const EnvironmentConfig& c);
void from_json(const Json& j, EnvironmentConfig& c);

/// One value index per slot, in Environment slot order.
struct ResponseSlots {
  std::vector<int> values;
  friend bool operator==(const ResponseSlots&, const ResponseSlots&) = default;
};

/// The enumerable response space. Slot order: bullet_count, one flag per
/// keyword, word_pad, casing (0 = lower, 1 = mixed), closing (0 = none, 1 = phrase).
class Environment {
 public:
  explicit Environment(EnvironmentConfig config = {});

  const EnvironmentConfig& config() const { return config_; }

  std::size_t slot_count() const { return sizes_.size(); }
  std::span<const int> slot_sizes() const { return sizes_; }
  const std::string& slot_name(std::size_t slot) const { return names_.at(slot); }

  std::size_t bullet_slot() const { return 0; }
  std::size_t keyword_slot(std::size_t keyword) const { return 1 + keyword; }
  std::size_t pad_slot() const { return 1 + config_.keywords.size(); }
  std::size_t casing_slot() const { return 2 + config_.keywords.size(); }
  std::size_t closing_slot() const { return 3 + config_.keywords.size(); }

  std::size_t response_space_size() const { return space_size_; }
  ResponseSlots decode(std::size_t index) const;
  std::size_t encode(const ResponseSlots& slots) const;

  std::string render(const ResponseSlots& slots) const;
  int word_count(const ResponseSlots& slots) const;

  /// First slot assignment (in encode order) satisfying every constraint.
  std::optional<ResponseSlots> find_witness(const ConstraintSpec& spec) const;

 private:
  EnvironmentConfig config_;
  std::vector<int> sizes_;
  std::vector<std::string> names_;
  std::size_t space_size_ = 1;
};

// ---------------------------------------------------------------------------
// Spec sampling

struct FamilyConfig {
  std::vector<ConstraintKind> kinds{ConstraintKind::ItemCount, ConstraintKind::IncludeKeyword,
                                    ConstraintKind::ExcludeKeyword, ConstraintKind::MinWords,
                                    ConstraintKind::MaxWords, ConstraintKind::EndsWith,
                                    ConstraintKind::AllLowercase};
  int min_constraints = 1;
  int max_constraints = 3;
  int item_count_min = 1;
  int item_count_max = 5;
  int min_words_lo = 10;
  int min_words_hi = 30;
  int max_words_lo = 20;
  int max_words_hi = 50;
  int max_attempts = 256;

  void validate() const;
};

void to_json(Json& j, const FamilyConfig& c);
void from_json(const Json& j, FamilyConfig& c);

/// Jointly satisfiable spec, deterministic in `seed`. Word limits are drawn from
/// the environment's threshold list restricted to the family range; keywords
/// from the environment's keyword list.
ConstraintSpec sample_spec(const FamilyConfig& family, const Environment& env, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ground truth

struct Checklist;

/// Per-item truth; nullopt marks items without defined semantics (spurious).
struct GroundTruthVector {
  std::vector<std::optional<bool>> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t defined_count() const;
  friend bool operator==(const GroundTruthVector&, const GroundTruthVector&) = default;
};

/// Item-level truth of `checklist` on `text`. Merged items are the conjunction
/// of their constraints. Throws ChecklistSpecMismatch for out-of-range references.
GroundTruthVector ground_truth(const ConstraintSpec& spec, const Checklist& checklist, std::string_view text);

/// Per-constraint bits of the spec on the text.
std::vector<bool> constraint_bits(const ConstraintSpec& spec, std::string_view text);

}  // namespace softcheck
