#include "softcheck/checklist.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "softcheck/errors.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

constexpr std::array<const char*, 4> kSpuriousQuestions{
    "Is the response engaging?",
    "Is the response helpful to the reader?",
    "Does the response use a friendly tone?",
    "Is the response well organized?",
};

std::string number_word(int n) {
  static constexpr std::array<const char*, 11> words{"zero", "one", "two",   "three", "four", "five",
                                                     "six",  "seven", "eight", "nine",  "ten"};
  if (n >= 0 && n < static_cast<int>(words.size())) return words[static_cast<std::size_t>(n)];
  return std::to_string(n);
}

std::string bullets_phrase(int n) { return number_word(n) + (n == 1 ? " bullet point" : " bullet points"); }

// Verb phrase used inside merged questions.
std::string fragment(const Constraint& c) {
  switch (c.kind) {
    case ConstraintKind::ItemCount: return "use " + bullets_phrase(c.n);
    case ConstraintKind::IncludeKeyword: return "mention " + c.text;
    case ConstraintKind::ExcludeKeyword: return "avoid the word \"" + c.text + "\"";
    case ConstraintKind::MinWords: return "contain at least " + std::to_string(c.n) + " words";
    case ConstraintKind::MaxWords: return "contain at most " + std::to_string(c.n) + " words";
    case ConstraintKind::EndsWith: return "end with \"" + c.text + "\"";
    case ConstraintKind::AllLowercase: return "use only lowercase letters";
  }
  return {};
}

void renumber(Checklist& c) {
  for (std::size_t i = 0; i < c.items.size(); ++i) c.items[i].id = "c" + std::to_string(i + 1);
}

}  // namespace

std::string_view to_string(ItemSemantics s) {
  switch (s) {
    case ItemSemantics::Faithful: return "faithful";
    case ItemSemantics::Merged: return "merged";
    case ItemSemantics::Spurious: return "spurious";
  }
  return "unknown";
}

std::string_view to_string(Provenance p) { return p == Provenance::Derived ? "derived" : "corrupted"; }

std::string item_question(const Constraint& c) {
  switch (c.kind) {
    case ConstraintKind::ItemCount: return "Does the response contain exactly " + bullets_phrase(c.n) + "?";
    case ConstraintKind::IncludeKeyword: return "Does the response mention " + c.text + "?";
    case ConstraintKind::ExcludeKeyword: return "Does the response avoid the word \"" + c.text + "\"?";
    case ConstraintKind::AllLowercase: return "Is the entire response in lowercase letters?";
    default: return "Does the response " + fragment(c) + "?";
  }
}

std::string merged_question(const ConstraintSpec& spec, const std::vector<std::size_t>& indices) {
  std::string q = "Does the response ";
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i > 0) q += i + 1 == indices.size() ? " and " : ", ";
    q += fragment(spec.constraints.at(indices[i]));
  }
  return q + "?";
}

void Checklist::validate(const ConstraintSpec& spec) const {
  if (items.empty()) throw InvalidArgument("checklist must contain at least one item");
  std::set<std::string> ids;
  for (const auto& item : items) {
    if (!ids.insert(item.id).second) throw InvalidArgument("duplicate checklist item id " + item.id);
    const std::set<std::size_t> distinct(item.constraints.begin(), item.constraints.end());
    switch (item.semantics) {
      case ItemSemantics::Faithful:
        if (item.constraints.size() != 1) throw InvalidArgument("faithful item must cover one constraint");
        break;
      case ItemSemantics::Merged:
        if (distinct.size() < 2) throw InvalidArgument("merged item must cover >= 2 distinct constraints");
        break;
      case ItemSemantics::Spurious:
        if (!item.constraints.empty()) throw InvalidArgument("spurious item covers no constraint");
        break;
    }
    for (std::size_t idx : item.constraints)
      if (idx >= spec.constraints.size())
        throw ChecklistSpecMismatch("item " + item.id + " references missing constraint " + std::to_string(idx));
  }
}

std::string Checklist::to_markdown() const {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i].text + "\n";
  return out;
}

void to_json(Json& j, const ChecklistItem& item) {
  j = Json{{"id", item.id},
           {"text", item.text},
           {"semantics", std::string(to_string(item.semantics))},
           {"constraints", item.constraints},
           {"provenance", std::string(to_string(item.provenance))}};
}

void from_json(const Json& j, ChecklistItem& item) {
  item.id = j.at("id").get<std::string>();
  item.text = j.at("text").get<std::string>();
  const auto sem = j.at("semantics").get<std::string>();
  if (sem == "faithful") item.semantics = ItemSemantics::Faithful;
  else if (sem == "merged") item.semantics = ItemSemantics::Merged;
  else if (sem == "spurious") item.semantics = ItemSemantics::Spurious;
  else throw InvalidArgument("unknown item semantics " + sem);
  item.constraints = j.at("constraints").get<std::vector<std::size_t>>();
  item.provenance = j.at("provenance").get<std::string>() == "derived" ? Provenance::Derived : Provenance::Corrupted;
}

void to_json(Json& j, const Checklist& c) { j = Json{{"source_spec", c.source_spec}, {"items", c.items}}; }

void from_json(const Json& j, Checklist& c) {
  c.source_spec = j.at("source_spec").get<std::string>();
  c.items = j.at("items").get<std::vector<ChecklistItem>>();
}

void CorruptionPlan::validate() const {
  for (double p : {drop_prob, duplicate_prob, merge_prob, spurious_prob})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("corruption probabilities must lie in [0,1]");
}

void to_json(Json& j, const CorruptionPlan& p) {
  j = Json{{"drop_prob", p.drop_prob},
           {"duplicate_prob", p.duplicate_prob},
           {"merge_prob", p.merge_prob},
           {"spurious_prob", p.spurious_prob},
           {"seed", p.seed}};
}

void from_json(const Json& j, CorruptionPlan& p) {
  p = CorruptionPlan{};
  if (j.contains("drop_prob")) p.drop_prob = j["drop_prob"].get<double>();
  if (j.contains("duplicate_prob")) p.duplicate_prob = j["duplicate_prob"].get<double>();
  if (j.contains("merge_prob")) p.merge_prob = j["merge_prob"].get<double>();
  if (j.contains("spurious_prob")) p.spurious_prob = j["spurious_prob"].get<double>();
  if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
  p.validate();
}

Checklist derive_checklist(const ConstraintSpec& spec) {
  spec.validate();
  Checklist out;
  out.source_spec = spec.id;
  for (std::size_t i = 0; i < spec.constraints.size(); ++i)
    out.items.push_back({"", item_question(spec.constraints[i]), ItemSemantics::Faithful, {i}, Provenance::Derived});
  renumber(out);
  return out;
}

Checklist corrupt_checklist(const Checklist& checklist, const ConstraintSpec& spec, const CorruptionPlan& plan) {
  plan.validate();
  checklist.validate(spec);
  for (const auto& item : checklist.items)
    if (item.semantics != ItemSemantics::Faithful)
      throw InvalidArgument("corrupt_checklist expects a fully faithful checklist");
  if (plan.is_identity()) return checklist;

  Rng rng = Rng::keyed(plan.seed, {0xc0ff, fnv1a64(spec.id)});

  std::vector<ChecklistItem> kept;
  for (const auto& item : checklist.items)
    if (!rng.bernoulli(plan.drop_prob)) kept.push_back(item);
  if (kept.empty()) kept.push_back(checklist.items.front());

  std::vector<ChecklistItem> expanded;
  for (const auto& item : kept) {
    expanded.push_back(item);
    if (rng.bernoulli(plan.duplicate_prob)) {
      auto copy = item;
      copy.provenance = Provenance::Corrupted;
      expanded.push_back(std::move(copy));
    }
  }

  std::vector<ChecklistItem> merged;
  for (std::size_t i = 0; i < expanded.size(); ++i) {
    if (i + 1 < expanded.size() && rng.bernoulli(plan.merge_prob)) {
      std::vector<std::size_t> idx = expanded[i].constraints;
      for (std::size_t c : expanded[i + 1].constraints)
        if (std::find(idx.begin(), idx.end(), c) == idx.end()) idx.push_back(c);
      if (idx.size() >= 2) {
        merged.push_back({"", merged_question(spec, idx), ItemSemantics::Merged, idx, Provenance::Corrupted});
        ++i;
        continue;
      }
    }
    merged.push_back(expanded[i]);
  }

  const std::size_t trials = checklist.items.size();
  std::size_t next_question = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    if (rng.bernoulli(plan.spurious_prob)) {
      merged.push_back({"", kSpuriousQuestions[next_question % kSpuriousQuestions.size()], ItemSemantics::Spurious, {},
                        Provenance::Corrupted});
      ++next_question;
    }
  }

  Checklist out{std::move(merged), checklist.source_spec};
  renumber(out);
  return out;
}

RelaxationStats relaxation_stats(const GroundTruthVector& truth) {
  RelaxationStats s;
  std::int64_t ones = 0;
  bool all = true;
  for (const auto& b : truth.bits) {
    if (!b) continue;
    ++s.defined;
    ones += *b ? 1 : 0;
    all = all && *b;
  }
  if (s.defined == 0) throw AllSpurious("no checklist item has defined ground truth");
  s.strict = Rational(all ? 1 : 0);
  s.partial = Rational(ones, static_cast<std::int64_t>(s.defined));
  s.gap = s.partial - s.strict;
  return s;
}

RelaxationStats relaxation_stats(const ConstraintSpec& spec, const Checklist& checklist, std::string_view text) {
  return relaxation_stats(ground_truth(spec, checklist, text));
}

}  // namespace softcheck
