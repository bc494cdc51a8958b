#include "softcheck/constraints.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <set>

#include "softcheck/checklist.hpp"
#include "softcheck/errors.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

constexpr std::array<std::pair<ConstraintKind, std::string_view>, 7> kKindNames{{
    {ConstraintKind::ItemCount, "item_count"},
    {ConstraintKind::IncludeKeyword, "include_keyword"},
    {ConstraintKind::ExcludeKeyword, "exclude_keyword"},
    {ConstraintKind::MinWords, "min_words"},
    {ConstraintKind::MaxWords, "max_words"},
    {ConstraintKind::EndsWith, "ends_with"},
    {ConstraintKind::AllLowercase, "all_lowercase"},
}};

// Template words used by the renderer; keywords may not collide with them.
constexpr std::array<std::string_view, 9> kTemplateWords{"point", "of",   "the",      "list",  "is",
                                                         "here",  "this", "mentions", "filler"};

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (lower(a[i]) != lower(b[i])) return false;
  return true;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string_view strip_punct(std::string_view w) {
  while (!w.empty() && !is_alnum(w.front())) w.remove_prefix(1);
  while (!w.empty() && !is_alnum(w.back())) w.remove_suffix(1);
  return w;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool contains_word(std::string_view text, std::string_view word) {
  for (auto tok : split_words(text))
    if (iequals(strip_punct(tok), word)) return true;
  return false;
}

int bullet_lines(std::string_view text) {
  int count = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    if (text.substr(pos, end - pos).starts_with("* ")) ++count;
    pos = end + 1;
  }
  return count;
}

bool has_param_n(ConstraintKind k) {
  return k == ConstraintKind::ItemCount || k == ConstraintKind::MinWords || k == ConstraintKind::MaxWords;
}

bool has_param_text(ConstraintKind k) {
  return k == ConstraintKind::IncludeKeyword || k == ConstraintKind::ExcludeKeyword ||
         k == ConstraintKind::EndsWith;
}

}  // namespace

std::string_view to_string(ConstraintKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

ConstraintKind parse_constraint_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw InvalidArgument("unknown constraint kind '" + std::string(name) + "'");
}

void Constraint::validate() const {
  if (has_param_n(kind) && n < 1)
    throw InvalidArgument(std::string(to_string(kind)) + " requires n >= 1");
  if (kind == ConstraintKind::IncludeKeyword || kind == ConstraintKind::ExcludeKeyword) {
    if (text.empty()) throw InvalidArgument("keyword must be nonempty");
    if (std::any_of(text.begin(), text.end(), is_space))
      throw InvalidArgument("keyword '" + text + "' contains whitespace");
  }
  if (kind == ConstraintKind::EndsWith && trim(text).empty())
    throw InvalidArgument("ends_with phrase must be nonempty");
}

std::string Constraint::key() const {
  std::string k(to_string(kind));
  if (has_param_n(kind)) k += ":" + std::to_string(n);
  if (has_param_text(kind)) k += ":" + text;
  return k;
}

void ConstraintSpec::validate() const {
  if (constraints.empty() || constraints.size() > 8)
    throw InvalidArgument("spec must hold 1..8 constraints");
  std::set<std::string> seen;
  for (const auto& c : constraints) {
    c.validate();
    if (!seen.insert(c.key()).second) throw InvalidArgument("duplicate constraint " + c.key());
  }
  for (const auto& lo : constraints) {
    if (lo.kind != ConstraintKind::MinWords) continue;
    for (const auto& hi : constraints)
      if (hi.kind == ConstraintKind::MaxWords && lo.n > hi.n)
        throw InvalidArgument("min_words exceeds max_words");
  }
}

void to_json(Json& j, const Constraint& c) {
  j = Json::object();
  j["kind"] = std::string(to_string(c.kind));
  if (has_param_n(c.kind)) j["n"] = c.n;
  if (c.kind == ConstraintKind::EndsWith) j["phrase"] = c.text;
  else if (has_param_text(c.kind)) j["word"] = c.text;
}

void from_json(const Json& j, Constraint& c) {
  c = Constraint{};
  c.kind = parse_constraint_kind(j.at("kind").get<std::string>());
  if (has_param_n(c.kind)) c.n = j.at("n").get<int>();
  if (c.kind == ConstraintKind::EndsWith) c.text = j.at("phrase").get<std::string>();
  else if (has_param_text(c.kind)) c.text = j.at("word").get<std::string>();
  c.validate();
}

void to_json(Json& j, const ConstraintSpec& s) {
  j = Json::object();
  j["id"] = s.id;
  j["constraints"] = s.constraints;
  j["seed"] = s.seed;
}

void from_json(const Json& j, ConstraintSpec& s) {
  s.id = j.at("id").get<std::string>();
  s.constraints = j.at("constraints").get<std::vector<Constraint>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

bool check_constraint(const Constraint& c, std::string_view text) {
  switch (c.kind) {
    case ConstraintKind::ItemCount:
      return bullet_lines(text) == c.n;
    case ConstraintKind::IncludeKeyword:
      return contains_word(text, c.text);
    case ConstraintKind::ExcludeKeyword:
      return !contains_word(text, c.text);
    case ConstraintKind::MinWords:
      return static_cast<int>(split_words(text).size()) >= c.n;
    case ConstraintKind::MaxWords:
      return static_cast<int>(split_words(text).size()) <= c.n;
    case ConstraintKind::EndsWith: {
      const auto body = trim(text);
      const auto phrase = trim(c.text);
      return body.size() >= phrase.size() && iequals(body.substr(body.size() - phrase.size()), phrase);
    }
    case ConstraintKind::AllLowercase:
      return std::none_of(text.begin(), text.end(), [](char ch) { return ch >= 'A' && ch <= 'Z'; });
  }
  return false;
}

// ---------------------------------------------------------------------------

void EnvironmentConfig::validate() const {
  if (keywords.empty()) throw InvalidArgument("environment needs at least one keyword");
  if (max_bullets < 1) throw InvalidArgument("max_bullets must be >= 1");
  if (pad_values.empty()) throw InvalidArgument("pad_values must be nonempty");
  if (word_thresholds.empty()) throw InvalidArgument("word_thresholds must be nonempty");
  for (int p : pad_values)
    if (p < 0) throw InvalidArgument("pad values must be >= 0");
  for (int w : word_thresholds)
    if (w < 1) throw InvalidArgument("word thresholds must be >= 1");
  const auto phrase_words = split_words(closing_phrase);
  if (phrase_words.empty()) throw InvalidArgument("closing phrase must be nonempty");
  std::set<std::string> seen;
  for (const auto& kw : keywords) {
    Constraint::include_keyword(kw).validate();
    std::string folded;
    for (char ch : kw) folded += lower(ch);
    if (!seen.insert(folded).second) throw InvalidArgument("duplicate keyword " + kw);
    for (auto t : kTemplateWords)
      if (iequals(strip_punct(kw), t)) throw InvalidArgument("keyword collides with template word: " + kw);
    for (auto t : phrase_words)
      if (iequals(strip_punct(kw), strip_punct(t)))
        throw InvalidArgument("keyword collides with closing phrase: " + kw);
  }
}

void to_json(Json& j, const EnvironmentConfig& c) {
  j = Json{{"keywords", c.keywords},   {"closing_phrase", c.closing_phrase},
           {"max_bullets", c.max_bullets}, {"pad_values", c.pad_values},
           {"word_thresholds", c.word_thresholds}};
}

void from_json(const Json& j, EnvironmentConfig& c) {
  c = EnvironmentConfig{};
  if (j.contains("keywords")) c.keywords = j["keywords"].get<std::vector<std::string>>();
  if (j.contains("closing_phrase")) c.closing_phrase = j["closing_phrase"].get<std::string>();
  if (j.contains("max_bullets")) c.max_bullets = j["max_bullets"].get<int>();
  if (j.contains("pad_values")) c.pad_values = j["pad_values"].get<std::vector<int>>();
  if (j.contains("word_thresholds")) c.word_thresholds = j["word_thresholds"].get<std::vector<int>>();
}

Environment::Environment(EnvironmentConfig config) : config_(std::move(config)) {
  config_.validate();
  sizes_.push_back(config_.max_bullets);
  names_.emplace_back("bullet_count");
  for (const auto& kw : config_.keywords) {
    sizes_.push_back(2);
    names_.push_back("keyword:" + kw);
  }
  sizes_.push_back(static_cast<int>(config_.pad_values.size()));
  names_.emplace_back("word_pad");
  sizes_.push_back(2);
  names_.emplace_back("casing");
  sizes_.push_back(2);
  names_.emplace_back("closing");
  for (int s : sizes_) space_size_ *= static_cast<std::size_t>(s);
}

ResponseSlots Environment::decode(std::size_t index) const {
  if (index >= space_size_) throw InvalidArgument("response index out of range");
  ResponseSlots r;
  r.values.resize(sizes_.size());
  for (std::size_t m = sizes_.size(); m-- > 0;) {
    r.values[m] = static_cast<int>(index % static_cast<std::size_t>(sizes_[m]));
    index /= static_cast<std::size_t>(sizes_[m]);
  }
  return r;
}

std::size_t Environment::encode(const ResponseSlots& slots) const {
  if (slots.values.size() != sizes_.size()) throw InvalidArgument("slot vector has wrong length");
  std::size_t index = 0;
  for (std::size_t m = 0; m < sizes_.size(); ++m) {
    const int v = slots.values[m];
    if (v < 0 || v >= sizes_[m]) throw InvalidArgument("slot value out of range");
    index = index * static_cast<std::size_t>(sizes_[m]) + static_cast<std::size_t>(v);
  }
  return index;
}

std::string Environment::render(const ResponseSlots& slots) const {
  encode(slots);  // range check
  std::string out;
  const int bullets = slots.values[bullet_slot()] + 1;
  for (int b = 1; b <= bullets; ++b) out += "* Point " + std::to_string(b) + " of the list is here.\n";
  for (std::size_t k = 0; k < config_.keywords.size(); ++k)
    if (slots.values[keyword_slot(k)] == 1) out += "This mentions " + config_.keywords[k] + ".\n";
  const int pad = config_.pad_values[static_cast<std::size_t>(slots.values[pad_slot()])];
  if (pad > 0) {
    for (int i = 0; i < pad; ++i) out += i == 0 ? "filler" : " filler";
    out += "\n";
  }
  if (slots.values[closing_slot()] == 1) out += config_.closing_phrase + "\n";
  if (slots.values[casing_slot()] == 0)
    for (char& ch : out) ch = lower(ch);
  return out;
}

int Environment::word_count(const ResponseSlots& slots) const {
  return static_cast<int>(split_words(render(slots)).size());
}

std::optional<ResponseSlots> Environment::find_witness(const ConstraintSpec& spec) const {
  for (std::size_t i = 0; i < space_size_; ++i) {
    auto slots = decode(i);
    const auto text = render(slots);
    if (std::all_of(spec.constraints.begin(), spec.constraints.end(),
                    [&](const Constraint& c) { return check_constraint(c, text); }))
      return slots;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

void FamilyConfig::validate() const {
  if (kinds.empty()) throw InvalidArgument("family needs at least one kind");
  if (min_constraints < 1 || max_constraints > 8 || min_constraints > max_constraints)
    throw InvalidArgument("family constraint count must satisfy 1 <= min <= max <= 8");
  if (item_count_min < 1 || item_count_min > item_count_max) throw InvalidArgument("bad item_count range");
  if (min_words_lo < 1 || min_words_lo > min_words_hi) throw InvalidArgument("bad min_words range");
  if (max_words_lo < 1 || max_words_lo > max_words_hi) throw InvalidArgument("bad max_words range");
  if (max_attempts < 1) throw InvalidArgument("max_attempts must be >= 1");
}

void to_json(Json& j, const FamilyConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.kinds) kinds.emplace_back(to_string(k));
  j = Json{{"kinds", kinds},
           {"min_constraints", c.min_constraints},
           {"max_constraints", c.max_constraints},
           {"item_count_min", c.item_count_min},
           {"item_count_max", c.item_count_max},
           {"min_words_lo", c.min_words_lo},
           {"min_words_hi", c.min_words_hi},
           {"max_words_lo", c.max_words_lo},
           {"max_words_hi", c.max_words_hi},
           {"max_attempts", c.max_attempts}};
}

void from_json(const Json& j, FamilyConfig& c) {
  c = FamilyConfig{};
  if (j.contains("kinds")) {
    c.kinds.clear();
    for (const auto& k : j["kinds"]) c.kinds.push_back(parse_constraint_kind(k.get<std::string>()));
  }
  auto get = [&](const char* key, int& field) {
    if (j.contains(key)) field = j[key].get<int>();
  };
  get("min_constraints", c.min_constraints);
  get("max_constraints", c.max_constraints);
  get("item_count_min", c.item_count_min);
  get("item_count_max", c.item_count_max);
  get("min_words_lo", c.min_words_lo);
  get("min_words_hi", c.min_words_hi);
  get("max_words_lo", c.max_words_lo);
  get("max_words_hi", c.max_words_hi);
  get("max_attempts", c.max_attempts);
}

ConstraintSpec sample_spec(const FamilyConfig& family, const Environment& env, std::uint64_t seed) {
  family.validate();
  const auto& ec = env.config();
  auto thresholds_in = [&](int lo, int hi) {
    std::vector<int> out;
    for (int w : ec.word_thresholds)
      if (w >= lo && w <= hi) out.push_back(w);
    return out;
  };
  const auto min_values = thresholds_in(family.min_words_lo, family.min_words_hi);
  const auto max_values = thresholds_in(family.max_words_lo, family.max_words_hi);

  Rng rng = Rng::keyed(seed, {0x5bec});
  char id[32];
  std::snprintf(id, sizeof id, "spec-%016llx", static_cast<unsigned long long>(seed));

  for (int attempt = 0; attempt < family.max_attempts; ++attempt) {
    const int span = family.max_constraints - family.min_constraints + 1;
    const int count = family.min_constraints + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    ConstraintSpec spec{id, {}, seed};
    bool ok = true;
    for (int c = 0; c < count && ok; ++c) {
      const auto kind = family.kinds[rng.below(family.kinds.size())];
      Constraint con;
      switch (kind) {
        case ConstraintKind::ItemCount: {
          const int span_n = family.item_count_max - family.item_count_min + 1;
          con = Constraint::item_count(family.item_count_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(span_n))));
          break;
        }
        case ConstraintKind::IncludeKeyword:
          con = Constraint::include_keyword(ec.keywords[rng.below(ec.keywords.size())]);
          break;
        case ConstraintKind::ExcludeKeyword:
          con = Constraint::exclude_keyword(ec.keywords[rng.below(ec.keywords.size())]);
          break;
        case ConstraintKind::MinWords:
          if (min_values.empty()) throw UnsatisfiableFamily("no environment word threshold in min_words range");
          con = Constraint::min_words(min_values[rng.below(min_values.size())]);
          break;
        case ConstraintKind::MaxWords:
          if (max_values.empty()) throw UnsatisfiableFamily("no environment word threshold in max_words range");
          con = Constraint::max_words(max_values[rng.below(max_values.size())]);
          break;
        case ConstraintKind::EndsWith:
          con = Constraint::ends_with(ec.closing_phrase);
          break;
        case ConstraintKind::AllLowercase:
          con = Constraint::all_lowercase();
          break;
      }
      const bool duplicate = std::any_of(spec.constraints.begin(), spec.constraints.end(),
                                         [&](const Constraint& other) { return other == con; });
      if (duplicate) ok = false;
      else spec.constraints.push_back(std::move(con));
    }
    if (!ok) continue;
    try {
      spec.validate();
    } catch (const InvalidArgument&) {
      continue;
    }
    if (env.find_witness(spec)) return spec;
  }
  throw UnsatisfiableFamily("no jointly satisfiable spec found after " + std::to_string(family.max_attempts) +
                            " attempts");
}

// ---------------------------------------------------------------------------

std::size_t GroundTruthVector::defined_count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](const auto& b) { return b.has_value(); }));
}

std::vector<bool> constraint_bits(const ConstraintSpec& spec, std::string_view text) {
  std::vector<bool> out;
  out.reserve(spec.constraints.size());
  for (const auto& c : spec.constraints) out.push_back(check_constraint(c, text));
  return out;
}

GroundTruthVector ground_truth(const ConstraintSpec& spec, const Checklist& checklist, std::string_view text) {
  if (!checklist.source_spec.empty() && checklist.source_spec != spec.id)
    throw ChecklistSpecMismatch("checklist derived from '" + checklist.source_spec + "', not '" + spec.id + "'");
  GroundTruthVector out;
  out.bits.reserve(checklist.items.size());
  for (const auto& item : checklist.items) {
    if (item.semantics == ItemSemantics::Spurious) {
      out.bits.emplace_back(std::nullopt);
      continue;
    }
    bool all = true;
    for (std::size_t idx : item.constraints) {
      if (idx >= spec.constraints.size())
        throw ChecklistSpecMismatch("item " + item.id + " references constraint " + std::to_string(idx) +
                                    " absent from spec " + spec.id);
      all = all && check_constraint(spec.constraints[idx], text);
    }
    out.bits.emplace_back(all);
  }
  return out;
}

}  // namespace softcheck
