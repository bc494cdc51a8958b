#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace softcheck {

/// Exactly enumerable model of a reward-induced generator. Each prompt has a
/// reference distribution over a finite response set; the verifier's item
/// yes-rate is logistic(w . f(x, y, k)) with a small weight vector w, and the
/// KL-regularized optimal generator is pi_ref * exp(R / kl_temperature) / Z.
struct GibbsToyModel {
  std::size_t prompts = 0;
  std::size_t responses = 0;
  int K = 1;
  std::size_t dim = 0;
  double kl_temperature = 1.0;
  std::vector<double> reference;  // [prompt][response]
  std::vector<double> features;   // [prompt][response][item][dim]

  static constexpr std::size_t kMaxResponses = 64;
  static constexpr int kMaxItems = 4;

  /// NonEnumerable past the response/item caps, InvalidArgument otherwise.
  void validate() const;

  static GibbsToyModel random(std::size_t prompts, std::size_t responses, int K, std::size_t dim,
                              double kl_temperature, std::uint64_t seed);

  std::span<const double> feature(std::size_t x, std::size_t y, int k) const;
  double yes_rate(std::span<const double> w, std::size_t x, std::size_t y, int k) const;
  std::vector<double> yes_rate_gradient(std::span<const double> w, std::size_t x, std::size_t y, int k) const;
  /// Mean yes-rate over the checklist.
  double reward(std::span<const double> w, std::size_t x, std::size_t y) const;
  std::vector<double> policy(std::span<const double> w, std::size_t x) const;
  double log_policy(std::span<const double> w, std::size_t x, std::size_t y) const;
};

struct TargetPair {
  std::size_t prompt = 0;
  std::size_t response = 0;
};

/// Mean log-likelihood of the target-good pairs under the induced generator.
double target_log_likelihood(const GibbsToyModel& model, std::span<const double> w,
                             std::span<const TargetPair> targets);

struct PartitionCheckReport {
  std::vector<double> finite_difference;  // central differences of the log-likelihood
  std::vector<double> positive_term;      // (1/(tK)) sum_k E_targets[grad r]
  std::vector<double> partition_term;     // (1/(tK)) sum_k E_x E_{y ~ policy}[grad r]
  std::vector<double> two_term;           // positive - partition
  double max_abs_diff = 0.0;
  bool agrees = false;
};

/// Compares the two-term item decomposition of the log-likelihood gradient
/// with central finite differences. Prompts in the partition term are weighted
/// by their frequency among the targets.
PartitionCheckReport partition_gradient_check(const GibbsToyModel& model, std::span<const double> w,
                                              std::span<const TargetPair> targets, double step = 1e-6,
                                              double tolerance = 1e-6);

}  // namespace softcheck
