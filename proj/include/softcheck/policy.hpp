#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "softcheck/checklist.hpp"
#include "softcheck/constraints.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

/// Embedding-row lists for the two conditioning inputs. Rows index the shared
/// embedding table; the embedding of a list is the mean of its rows.
struct PromptTokens {
  std::vector<std::size_t> rows;
};

struct ItemTokens {
  std::vector<std::size_t> rows;
};

struct ResponseSample {
  ResponseSlots slots;
  double log_prob = 0.0;
  std::string text;
};

/// Offsets into the flat parameter vector.
struct PolicyLayout {
  std::size_t dim = 16;
  std::size_t prompt_rows = 0;  // one per constraint key in the vocabulary
  std::size_t slot_rows = 0;    // one per (slot, value)
  std::size_t item_rows = 0;    // one per constraint key plus a spurious-item row
  std::size_t slots = 0;

  std::size_t embedding = 0;  // [rows][dim]
  std::size_t out_maps = 0;   // [slot][dim][dim]
  std::size_t out_bias = 0;   // [slot][dim]
  std::size_t head = 0;       // [4*dim]
  std::size_t head_bias = 0;
  std::size_t total = 0;

  std::size_t rows() const { return prompt_rows + slot_rows + item_rows; }
};

/// Shared-parameter generator and verifier over the environment's slots.
///
/// Generator: h = mean prompt embedding, z_m = U_m h + u_m,
/// logit(m, v) = E[slot m, value v] . z_m, slots independent given the prompt.
/// Verifier: features [h, s, c, s*c] with s the mean embedding of the chosen
/// slot values and c the item embedding; yes_logit = w . features + b.
class PolicyModel {
 public:
  explicit PolicyModel(const Environment& env, std::size_t dim = 16);

  const Environment& environment() const { return env_; }
  const PolicyLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total; }

  /// Zero-mean normal entries with standard deviation `scale`; biases start at 0.
  std::vector<double> init(std::uint64_t seed, double scale = 0.1) const;

  PromptTokens prompt_tokens(const ConstraintSpec& spec) const;
  ItemTokens item_tokens(const ConstraintSpec& spec, const ChecklistItem& item) const;

  /// Per-slot softmax distributions.
  std::vector<std::vector<double>> slot_probs(std::span<const double> theta, const PromptTokens& prompt) const;

  ResponseSample sample_response(std::span<const double> theta, const PromptTokens& prompt, Rng& rng,
                                 bool greedy = false) const;
  double log_prob(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots) const;

  /// grad += scale * d log pi(slots | prompt) / d theta.
  void add_grad_log_prob(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                         double scale, std::span<double> grad) const;
  std::vector<double> grad_log_prob(std::span<const double> theta, const PromptTokens& prompt,
                                    const ResponseSlots& slots) const;

  double yes_logit(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                   const ItemTokens& item) const;
  double yes_prob(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                  const ItemTokens& item) const;

  /// grad += scale * d yes_logit / d theta.
  void add_grad_yes_logit(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                          const ItemTokens& item, double scale, std::span<double> grad) const;
  std::vector<double> grad_yes_logit(std::span<const double> theta, const PromptTokens& prompt,
                                     const ResponseSlots& slots, const ItemTokens& item) const;

  /// grad += scale * d log rho(decision) / d theta for one sampled Yes/No trace.
  void add_grad_log_vote(std::span<const double> theta, const PromptTokens& prompt, const ResponseSlots& slots,
                         const ItemTokens& item, bool decision, double scale, std::span<double> grad) const;

  /// Rows of the embedding table read by the generator for this prompt/response.
  std::vector<std::size_t> generator_rows(const PromptTokens& prompt) const;
  std::size_t slot_row(std::size_t slot, int value) const;

  Json shape_manifest() const;

  // Intermediate features, exposed for batched exact evaluation.
  std::vector<double> prompt_embedding(std::span<const double> theta, const PromptTokens& prompt) const;
  std::vector<double> item_embedding(std::span<const double> theta, const ItemTokens& item) const;
  std::vector<double> slot_mean(std::span<const double> theta, const ResponseSlots& slots) const;
  /// yes_logit from precomputed prompt, slot-mean and item features.
  double head_logit(std::span<const double> theta, std::span<const double> h, std::span<const double> s,
                    std::span<const double> c) const;

 private:
  Environment env_;
  PolicyLayout layout_;
  std::vector<std::string> prompt_keys_;
  std::vector<std::size_t> slot_offset_;  // first slot row of each slot, relative to the slot block

  std::vector<double> mean_rows(std::span<const double> theta, std::span<const std::size_t> rows) const;
  std::vector<double> slot_logits(std::span<const double> theta, const std::vector<double>& h, std::size_t m,
                                  std::vector<double>* z_out = nullptr) const;
  std::size_t key_index(const std::string& key) const;
  void check(std::span<const double> theta) const;
};

/// Flat little-endian doubles at `path` plus a JSON shape manifest at `path` + ".json".
void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model, std::span<const double> theta);
std::vector<double> load_checkpoint(const std::filesystem::path& path, const PolicyModel& model);

}  // namespace softcheck
