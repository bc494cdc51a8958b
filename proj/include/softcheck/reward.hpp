#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "softcheck/checklist.hpp"
#include "softcheck/rational.hpp"

namespace softcheck {

enum class RewardMode { Soft, Strict, Holistic };

std::string_view to_string(RewardMode mode);
RewardMode parse_reward_mode(std::string_view name);

struct RewardConfig {
  double beta_pc = 1.0;
  RewardMode mode = RewardMode::Soft;

  void validate() const;
};

/// Fraction of labels that are 1, exact.
Rational soft_score(const std::vector<bool>& labels);

/// 1 when s = 1, otherwise beta_pc * s.
double generator_reward(const Rational& s, double beta_pc);

struct RewardInputs {
  std::vector<bool> labels;        // soft / strict modes
  std::optional<bool> holistic;    // holistic mode
};

struct RewardBreakdown {
  std::vector<bool> labels;
  Rational s;
  bool strict = false;
  double R = 0.0;
  std::optional<RelaxationStats> oracle;
};

/// Soft: R from aggregated labels; strict: R = 1[s = 1]; holistic: R = judgment.
/// Oracle fields are filled from `truth` when given; `require_oracle` makes a
/// missing truth an error (MissingGroundTruth).
RewardBreakdown reward(const RewardConfig& config, const RewardInputs& inputs,
                       const GroundTruthVector* truth = nullptr, bool require_oracle = false);

Json to_json_row(const RewardBreakdown& r);

/// Exact E[R] for independent per-item pass labels with probabilities
/// `label_probs`, mixed with an all-pass event of probability `all_pass_prob`.
double expected_reward(std::span<const double> label_probs, double all_pass_prob, const RewardConfig& config);

}  // namespace softcheck
