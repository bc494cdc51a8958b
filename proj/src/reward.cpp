#include "softcheck/reward.hpp"

#include <cmath>

#include "softcheck/errors.hpp"

namespace softcheck {

std::string_view to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::Soft: return "soft";
    case RewardMode::Strict: return "strict";
    case RewardMode::Holistic: return "holistic";
  }
  return "unknown";
}

RewardMode parse_reward_mode(std::string_view name) {
  if (name == "soft") return RewardMode::Soft;
  if (name == "strict") return RewardMode::Strict;
  if (name == "holistic") return RewardMode::Holistic;
  throw InvalidArgument("unknown reward mode '" + std::string(name) + "'");
}

void RewardConfig::validate() const {
  if (!std::isfinite(beta_pc) || beta_pc < 0.0) throw InvalidArgument("beta_pc must be finite and >= 0");
}

Rational soft_score(const std::vector<bool>& labels) {
  if (labels.empty()) throw InvalidArgument("soft_score needs at least one label");
  std::int64_t ones = 0;
  for (bool l : labels) ones += l ? 1 : 0;
  return Rational(ones, static_cast<std::int64_t>(labels.size()));
}

double generator_reward(const Rational& s, double beta_pc) {
  if (s < Rational(0) || s > Rational(1)) throw InvalidArgument("soft score outside [0,1]");
  return s == Rational(1) ? 1.0 : beta_pc * to_double(s);
}

RewardBreakdown reward(const RewardConfig& config, const RewardInputs& inputs, const GroundTruthVector* truth,
                       bool require_oracle) {
  config.validate();
  RewardBreakdown out;
  switch (config.mode) {
    case RewardMode::Soft:
      out.labels = inputs.labels;
      out.s = soft_score(inputs.labels);
      out.strict = out.s == Rational(1);
      out.R = generator_reward(out.s, config.beta_pc);
      break;
    case RewardMode::Strict:
      out.labels = inputs.labels;
      out.s = soft_score(inputs.labels);
      out.strict = out.s == Rational(1);
      out.R = out.strict ? 1.0 : 0.0;
      break;
    case RewardMode::Holistic:
      if (!inputs.holistic) throw InvalidArgument("holistic mode needs a holistic judgment");
      out.labels = inputs.labels;
      out.strict = *inputs.holistic;
      out.s = Rational(out.strict ? 1 : 0);
      out.R = out.strict ? 1.0 : 0.0;
      break;
  }
  if (truth) out.oracle = relaxation_stats(*truth);
  else if (require_oracle) throw MissingGroundTruth("oracle reward fields requested without ground truth");
  return out;
}

Json to_json_row(const RewardBreakdown& r) {
  Json labels = Json::array();
  for (bool l : r.labels) labels.push_back(l ? 1 : 0);
  Json j{{"labels", labels}, {"s", to_string(r.s)}, {"strict", r.strict ? 1 : 0}, {"R", r.R}};
  if (r.oracle) {
    j["oracle_strict"] = to_string(r.oracle->strict);
    j["oracle_partial"] = to_string(r.oracle->partial);
    j["oracle_gap"] = to_string(r.oracle->gap);
  }
  return j;
}

double expected_reward(std::span<const double> label_probs, double all_pass_prob, const RewardConfig& config) {
  if (label_probs.empty()) throw InvalidArgument("expected_reward needs at least one item");
  double mean = 0.0, all = 1.0;
  for (double p : label_probs) {
    mean += p;
    all *= p;
  }
  mean /= static_cast<double>(label_probs.size());
  const double p_all = all_pass_prob + (1.0 - all_pass_prob) * all;
  const double e_s = all_pass_prob + (1.0 - all_pass_prob) * mean;
  switch (config.mode) {
    case RewardMode::Soft: return p_all + config.beta_pc * (e_s - p_all);
    case RewardMode::Strict: return p_all;
    case RewardMode::Holistic: break;
  }
  throw InvalidArgument("expected_reward does not apply to holistic mode");
}

}  // namespace softcheck
