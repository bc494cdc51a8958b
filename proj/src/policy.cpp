#include "softcheck/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "softcheck/errors.hpp"

namespace softcheck {

namespace {

double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - hi);
  for (auto& v : p) v /= z;
  return p;
}

double log_sum_exp(const std::vector<double>& logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return hi + std::log(z);
}

std::vector<std::string> vocabulary_keys(const EnvironmentConfig& c) {
  std::vector<std::string> keys;
  for (int b = 1; b <= c.max_bullets; ++b) keys.push_back(Constraint::item_count(b).key());
  for (const auto& kw : c.keywords) keys.push_back(Constraint::include_keyword(kw).key());
  for (const auto& kw : c.keywords) keys.push_back(Constraint::exclude_keyword(kw).key());
  for (int t : c.word_thresholds) keys.push_back(Constraint::min_words(t).key());
  for (int t : c.word_thresholds) keys.push_back(Constraint::max_words(t).key());
  keys.push_back(Constraint::ends_with(c.closing_phrase).key());
  keys.push_back(Constraint::all_lowercase().key());
  return keys;
}

}  // namespace

PolicyModel::PolicyModel(const Environment& env, std::size_t dim) : env_(env) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be positive");
  prompt_keys_ = vocabulary_keys(env_.config());
  auto& L = layout_;
  L.dim = dim;
  L.slots = env_.slot_count();
  L.prompt_rows = prompt_keys_.size();
  std::size_t acc = 0;
  for (int s : env_.slot_sizes()) {
    slot_offset_.push_back(acc);
    acc += static_cast<std::size_t>(s);
  }
  L.slot_rows = acc;
  L.item_rows = prompt_keys_.size() + 1;
  L.embedding = 0;
  L.out_maps = L.rows() * dim;
  L.out_bias = L.out_maps + L.slots * dim * dim;
  L.head = L.out_bias + L.slots * dim;
  L.head_bias = L.head + 4 * dim;
  L.total = L.head_bias + 1;
}

std::vector<double> PolicyModel::init(std::uint64_t seed, double scale) const {
  std::vector<double> theta(layout_.total, 0.0);
  Rng rng = Rng::keyed(seed, {0x9011c7});
  for (std::size_t i = 0; i < layout_.out_bias; ++i) theta[i] = scale * rng.normal();
  for (std::size_t i = layout_.head; i < layout_.head_bias; ++i) theta[i] = scale * rng.normal();
  return theta;
}

std::size_t PolicyModel::key_index(const std::string& key) const {
  const auto it = std::find(prompt_keys_.begin(), prompt_keys_.end(), key);
  if (it == prompt_keys_.end()) throw InvalidArgument("constraint '" + key + "' is outside the policy vocabulary");
  return static_cast<std::size_t>(it - prompt_keys_.begin());
}

PromptTokens PolicyModel::prompt_tokens(const ConstraintSpec& spec) const {
  PromptTokens p;
  for (const auto& c : spec.constraints) p.rows.push_back(key_index(c.key()));
  if (p.rows.empty()) throw InvalidArgument("prompt has no constraints");
  return p;
}

ItemTokens PolicyModel::item_tokens(const ConstraintSpec& spec, const ChecklistItem& item) const {
  const std::size_t base = layout_.prompt_rows + layout_.slot_rows;
  ItemTokens t;
  if (item.semantics == ItemSemantics::Spurious) {
    t.rows.push_back(base + prompt_keys_.size());
    return t;
  }
  for (std::size_t idx : item.constraints) {
    if (idx >= spec.constraints.size()) throw ChecklistSpecMismatch("item references a missing constraint");
    t.rows.push_back(base + key_index(spec.constraints[idx].key()));
  }
  return t;
}

std::size_t PolicyModel::slot_row(std::size_t slot, int value) const {
  return layout_.prompt_rows + slot_offset_.at(slot) + static_cast<std::size_t>(value);
}

std::vector<std::size_t> PolicyModel::generator_rows(const PromptTokens& prompt) const {
  std::vector<std::size_t> rows = prompt.rows;
  for (std::size_t r = 0; r < layout_.slot_rows; ++r) rows.push_back(layout_.prompt_rows + r);
  return rows;
}

void PolicyModel::check(std::span<const double> theta) const {
  if (theta.size() != layout_.total) throw InvalidArgument("parameter vector has the wrong length");
}

std::vector<double> PolicyModel::mean_rows(std::span<const double> theta, std::span<const std::size_t> rows) const {
  const std::size_t d = layout_.dim;
  std::vector<double> out(d, 0.0);
  for (std::size_t r : rows) {
    if (r >= layout_.rows()) throw InvalidArgument("embedding row out of range");
    for (std::size_t i = 0; i < d; ++i) out[i] += theta[layout_.embedding + r * d + i];
  }
  for (auto& v : out) v /= static_cast<double>(rows.size());
  return out;
}

std::vector<double> PolicyModel::prompt_embedding(std::span<const double> theta, const PromptTokens& prompt) const {
  if (prompt.rows.empty()) throw InvalidArgument("prompt has no tokens");
  for (std::size_t r : prompt.rows)
    if (r >= layout_.prompt_rows) throw InvalidArgument("prompt token out of range");
  return mean_rows(theta, prompt.rows);
}

std::vector<double> PolicyModel::slot_mean(std::span<const double> theta, const ResponseSlots& slots) const {
  if (slots.values.size() != layout_.slots) throw InvalidArgument("slot vector has the wrong length");
  std::vector<std::size_t> rows;
  for (std::size_t m = 0; m < layout_.slots; ++m) {
    if (slots.values[m] < 0 || slots.values[m] >= env_.slot_sizes()[m]) throw InvalidArgument("slot value out of range");
    rows.push_back(slot_row(m, slots.values[m]));
  }
  return mean_rows(theta, rows);
}

std::vector<double> PolicyModel::slot_logits(std::span<const double> theta, const std::vector<double>& h,
                                             std::size_t m, std::vector<double>* z_out) const {
  const std::size_t d = layout_.dim;
  std::vector<double> z(d);
  const double* U = theta.data() + layout_.out_maps + m * d * d;
  const double* u = theta.data() + layout_.out_bias + m * d;
  for (std::size_t a = 0; a < d; ++a) {
    double acc = u[a];
    for (std::size_t b = 0; b < d; ++b) acc += U[a * d + b] * h[b];
    z[a] = acc;
  }
  const int n = env_.slot_sizes()[m];
  std::vector<double> logits(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    const double* e = theta.data() + layout_.embedding + slot_row(m, v) * d;
    double acc = 0.0;
    for (std::size_t a = 0; a < d; ++a) acc += e[a] * z[a];
    logits[static_cast<std::size_t>(v)] = acc;
  }
  if (z_out) *z_out = std::move(z);
  return logits;
}

std::vector<std::vector<double>> PolicyModel::slot_probs(std::span<const double> theta,
                                                         const PromptTokens& prompt) const {
  check(theta);
  const auto h = prompt_embedding(theta, prompt);
  std::vector<std::vector<double>> out;
  for (std::size_t m = 0; m < layout_.slots; ++m) out.push_back(softmax(slot_logits(theta, h, m)));
  return out;
}

ResponseSample PolicyModel::sample_response(std::span<const double> theta, const PromptTokens& prompt, Rng& rng,
                                            bool greedy) const {
  check(theta);
  const auto h = prompt_embedding(theta, prompt);
  ResponseSample s;
  s.slots.values.resize(layout_.slots);
  for (std::size_t m = 0; m < layout_.slots; ++m) {
    const auto logits = slot_logits(theta, h, m);
    std::size_t pick = 0;
    if (greedy) {
      for (std::size_t v = 1; v < logits.size(); ++v)
        if (logits[v] > logits[pick]) pick = v;
    } else {
      const auto p = softmax(logits);
      double u = rng.uniform();
      pick = p.size() - 1;
      for (std::size_t v = 0; v < p.size(); ++v) {
        if (u < p[v]) {
          pick = v;
          break;
        }
        u -= p[v];
      }
    }
    s.slots.values[m] = static_cast<int>(pick);
    s.log_prob += logits[pick] - log_sum_exp(logits);
  }
  s.text = env_.render(s.slots);
  return s;
}

double PolicyModel::log_prob(std::span<const double> theta, const PromptTokens& prompt,
                             const ResponseSlots& slots) const {
  check(theta);
  if (slots.values.size() != layout_.slots) throw InvalidArgument("slot vector has the wrong length");
  const auto h = prompt_embedding(theta, prompt);
  double total = 0.0;
  for (std::size_t m = 0; m < layout_.slots; ++m) {
    const auto logits = slot_logits(theta, h, m);
    const auto v = static_cast<std::size_t>(slots.values[m]);
    if (v >= logits.size()) throw InvalidArgument("slot value out of range");
    total += logits[v] - log_sum_exp(logits);
  }
  return total;
}

void PolicyModel::add_grad_log_prob(std::span<const double> theta, const PromptTokens& prompt,
                                    const ResponseSlots& slots, double scale, std::span<double> grad) const {
  check(theta);
  check(grad);
  if (slots.values.size() != layout_.slots) throw InvalidArgument("slot vector has the wrong length");
  const std::size_t d = layout_.dim;
  const auto h = prompt_embedding(theta, prompt);
  std::vector<double> gh(d, 0.0);
  for (std::size_t m = 0; m < layout_.slots; ++m) {
    std::vector<double> z;
    const auto logits = slot_logits(theta, h, m, &z);
    const auto p = softmax(logits);
    const auto y = static_cast<std::size_t>(slots.values[m]);
    if (y >= p.size()) throw InvalidArgument("slot value out of range");
    std::vector<double> gz(d, 0.0);
    for (std::size_t v = 0; v < p.size(); ++v) {
      const double delta = (v == y ? 1.0 : 0.0) - p[v];
      const std::size_t row = layout_.embedding + slot_row(m, static_cast<int>(v)) * d;
      for (std::size_t a = 0; a < d; ++a) {
        grad[row + a] += scale * delta * z[a];
        gz[a] += delta * theta[row + a];
      }
    }
    const std::size_t U = layout_.out_maps + m * d * d;
    const std::size_t u = layout_.out_bias + m * d;
    for (std::size_t a = 0; a < d; ++a) {
      grad[u + a] += scale * gz[a];
      for (std::size_t b = 0; b < d; ++b) {
        grad[U + a * d + b] += scale * gz[a] * h[b];
        gh[b] += theta[U + a * d + b] * gz[a];
      }
    }
  }
  const double share = scale / static_cast<double>(prompt.rows.size());
  for (std::size_t r : prompt.rows)
    for (std::size_t a = 0; a < d; ++a) grad[layout_.embedding + r * d + a] += share * gh[a];
}

std::vector<double> PolicyModel::grad_log_prob(std::span<const double> theta, const PromptTokens& prompt,
                                               const ResponseSlots& slots) const {
  std::vector<double> g(layout_.total, 0.0);
  add_grad_log_prob(theta, prompt, slots, 1.0, g);
  return g;
}

std::vector<double> PolicyModel::item_embedding(std::span<const double> theta, const ItemTokens& item) const {
  if (item.rows.empty()) throw InvalidArgument("item has no tokens");
  const std::size_t base = layout_.prompt_rows + layout_.slot_rows;
  for (std::size_t r : item.rows)
    if (r < base || r >= layout_.rows()) throw InvalidArgument("item token out of range");
  return mean_rows(theta, item.rows);
}

double PolicyModel::head_logit(std::span<const double> theta, std::span<const double> h, std::span<const double> s,
                               std::span<const double> c) const {
  const std::size_t d = layout_.dim;
  const double* w = theta.data() + layout_.head;
  double z = theta[layout_.head_bias];
  for (std::size_t a = 0; a < d; ++a)
    z += w[a] * h[a] + w[d + a] * s[a] + w[2 * d + a] * c[a] + w[3 * d + a] * s[a] * c[a];
  return z;
}

double PolicyModel::yes_logit(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                              const ItemTokens& item) const {
  check(theta);
  return head_logit(theta, prompt_embedding(theta, prompt), slot_mean(theta, slots), item_embedding(theta, item));
}

double PolicyModel::yes_prob(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                             const ItemTokens& item) const {
  return logistic(yes_logit(theta, prompt, slots, item));
}

void PolicyModel::add_grad_yes_logit(std::span<const double> theta, const PromptTokens& prompt,
                                     const ResponseSlots& slots, const ItemTokens& item, double scale,
                                     std::span<double> grad) const {
  check(theta);
  check(grad);
  const std::size_t d = layout_.dim;
  const auto h = prompt_embedding(theta, prompt);
  const auto s = slot_mean(theta, slots);
  const auto c = item_embedding(theta, item);
  const double* w = theta.data() + layout_.head;
  for (std::size_t a = 0; a < d; ++a) {
    grad[layout_.head + a] += scale * h[a];
    grad[layout_.head + d + a] += scale * s[a];
    grad[layout_.head + 2 * d + a] += scale * c[a];
    grad[layout_.head + 3 * d + a] += scale * s[a] * c[a];
  }
  grad[layout_.head_bias] += scale;

  const double ph = scale / static_cast<double>(prompt.rows.size());
  for (std::size_t r : prompt.rows)
    for (std::size_t a = 0; a < d; ++a) grad[layout_.embedding + r * d + a] += ph * w[a];
  const double ps = scale / static_cast<double>(layout_.slots);
  for (std::size_t m = 0; m < layout_.slots; ++m) {
    const std::size_t row = layout_.embedding + slot_row(m, slots.values[m]) * d;
    for (std::size_t a = 0; a < d; ++a) grad[row + a] += ps * (w[d + a] + w[3 * d + a] * c[a]);
  }
  const double pc = scale / static_cast<double>(item.rows.size());
  for (std::size_t r : item.rows)
    for (std::size_t a = 0; a < d; ++a) grad[layout_.embedding + r * d + a] += pc * (w[2 * d + a] + w[3 * d + a] * s[a]);
}

std::vector<double> PolicyModel::grad_yes_logit(std::span<const double> theta, const PromptTokens& prompt,
                                                const ResponseSlots& slots, const ItemTokens& item) const {
  std::vector<double> g(layout_.total, 0.0);
  add_grad_yes_logit(theta, prompt, slots, item, 1.0, g);
  return g;
}

void PolicyModel::add_grad_log_vote(std::span<const double> theta, const PromptTokens& prompt,
                                    const ResponseSlots& slots, const ItemTokens& item, bool decision, double scale,
                                    std::span<double> grad) const {
  const double r = yes_prob(theta, prompt, slots, item);
  // d log r / d logit = 1 - r;  d log (1 - r) / d logit = -r.
  add_grad_yes_logit(theta, prompt, slots, item, scale * (decision ? 1.0 - r : -r), grad);
}

Json PolicyModel::shape_manifest() const {
  const auto& L = layout_;
  Json slots = Json::array();
  for (std::size_t m = 0; m < L.slots; ++m) slots.push_back({{"name", env_.slot_name(m)}, {"size", env_.slot_sizes()[m]}});
  return Json{{"format", "float64-le"},
              {"param_count", L.total},
              {"dim", L.dim},
              {"embedding", {{"offset", L.embedding}, {"rows", L.rows()}, {"prompt_rows", L.prompt_rows},
                             {"slot_rows", L.slot_rows}, {"item_rows", L.item_rows}}},
              {"out_maps", {{"offset", L.out_maps}, {"shape", {L.slots, L.dim, L.dim}}}},
              {"out_bias", {{"offset", L.out_bias}, {"shape", {L.slots, L.dim}}}},
              {"head", {{"offset", L.head}, {"size", 4 * L.dim}}},
              {"head_bias", {{"offset", L.head_bias}}},
              {"slots", slots},
              {"vocabulary", prompt_keys_}};
}

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model, std::span<const double> theta) {
  if (theta.size() != model.param_count()) throw InvalidArgument("parameter vector has the wrong length");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputUnwritable("cannot write checkpoint " + path.string());
  for (double v : theta) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  std::ofstream manifest(path.string() + ".json");
  if (!out || !manifest) throw OutputUnwritable("cannot write checkpoint " + path.string());
  manifest << model.shape_manifest().dump(2) << '\n';
}

std::vector<double> load_checkpoint(const std::filesystem::path& path, const PolicyModel& model) {
  std::ifstream manifest(path.string() + ".json");
  if (!manifest) throw InvalidArgument("missing checkpoint manifest for " + path.string());
  const auto shape = Json::parse(manifest);
  if (shape != model.shape_manifest()) throw InvalidArgument("checkpoint shape does not match the model");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path.string());
  std::vector<double> theta(model.param_count());
  for (auto& v : theta) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InvalidArgument("checkpoint is truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    std::memcpy(&v, &bits, sizeof v);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw InvalidArgument("checkpoint has trailing bytes");
  return theta;
}

}  // namespace softcheck
