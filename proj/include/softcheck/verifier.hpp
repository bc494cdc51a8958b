#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include "softcheck/constraints.hpp"
#include "softcheck/rational.hpp"

namespace softcheck {

/// Holistic (p, q) and item-level (p', q') true-positive / true-negative rates.
struct NoiseParams {
  double p = 1.0;
  double q = 1.0;
  double p_item = 1.0;
  double q_item = 1.0;

  double alpha() const { return p + q - 1.0; }
  double alpha_item() const { return p_item + q_item - 1.0; }
  void validate() const;

  friend bool operator==(const NoiseParams&, const NoiseParams&) = default;
};

/// With probability `lenient_prob` a response is judged in lenient mode and
/// every item vote is Yes; otherwise votes are conditionally independent.
struct CorrelationModel {
  double lenient_prob = 0.0;

  bool independent() const { return lenient_prob == 0.0; }
  void validate() const;

  friend bool operator==(const CorrelationModel&, const CorrelationModel&) = default;
};

void to_json(Json& j, const NoiseParams& n);
void from_json(const Json& j, NoiseParams& n);
void to_json(Json& j, const CorrelationModel& c);
void from_json(const Json& j, CorrelationModel& c);

struct OracleVerifier {};

struct NoisyVerifier {
  NoiseParams noise;
  CorrelationModel correlation;
};

/// Adapter over the shared verification head: yes-probability for item k of
/// the response being judged.
struct LearnedVerifier {
  std::function<double(std::size_t)> yes_prob;
};

using Verifier = std::variant<OracleVerifier, NoisyVerifier, LearnedVerifier>;

/// Address of one response's vote block; votes are keyed by (seed, step,
/// prompt, candidate, item, vote) so any evaluation order gives the same draws.
struct VoteKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t prompt = 0;
  std::uint64_t candidate = 0;
};

/// G x K x J binary decisions.
class VoteMatrix {
 public:
  VoteMatrix() = default;
  VoteMatrix(std::size_t candidates, std::size_t items, std::size_t votes);

  std::size_t candidates() const { return g_; }
  std::size_t items() const { return k_; }
  std::size_t votes() const { return j_; }

  std::uint8_t& at(std::size_t i, std::size_t k, std::size_t j) { return d_[(i * k_ + k) * j_ + j]; }
  std::uint8_t at(std::size_t i, std::size_t k, std::size_t j) const { return d_[(i * k_ + k) * j_ + j]; }

  std::span<std::uint8_t> row(std::size_t i) { return {d_.data() + i * k_ * j_, k_ * j_}; }
  std::span<const std::uint8_t> row(std::size_t i) const { return {d_.data() + i * k_ * j_, k_ * j_}; }

 private:
  std::size_t g_ = 0, k_ = 0, j_ = 0;
  std::vector<std::uint8_t> d_;
};

/// Per-item probability of a Yes vote outside lenient mode. Spurious items
/// (nullopt truth) are treated as satisfied. Learned verifiers use their head.
double item_yes_probability(const Verifier& verifier, std::size_t item, std::optional<bool> truth);

/// K*J votes for one response, item-major. Oracle: d = Y*; noisy:
/// Bernoulli((1-q')+a'Y*) or all-ones in lenient mode; learned: Bernoulli(head).
std::vector<std::uint8_t> sample_item_votes(const Verifier& verifier, const GroundTruthVector& truth, int votes,
                                            const VoteKey& key);

/// Exact vote fractions with denominator J.
class PassRates {
 public:
  PassRates(std::size_t candidates, std::size_t items, int votes, std::vector<int> yes_counts);

  std::size_t candidates() const { return g_; }
  std::size_t items() const { return k_; }
  int votes() const { return j_; }
  int yes_count(std::size_t i, std::size_t k) const { return yes_[i * k_ + k]; }
  Rational at(std::size_t i, std::size_t k) const { return Rational(yes_count(i, k), j_); }
  double value(std::size_t i, std::size_t k) const { return static_cast<double>(yes_count(i, k)) / j_; }
  std::vector<Rational> row(std::size_t i) const;

 private:
  std::size_t g_, k_;
  int j_;
  std::vector<int> yes_;
};

PassRates pass_rates(const VoteMatrix& votes);

/// Inclusive threshold test p >= tau on an exact rational.
bool passes_threshold(const Rational& rate, double tau);

/// label_k = 1 iff rate_k >= tau.
std::vector<bool> aggregate(std::span<const Rational> rates, double tau);

/// P(Binomial(J, yes_prob) / J >= tau): the exact probability of a pass label.
double label_probability(double yes_prob, int votes, double tau);

/// Single pass/fail judgment of a whole response. Oracle returns S*; noisy
/// returns Bernoulli((1-q)+a S*). Learned verifiers have no holistic head.
bool holistic_judgment(const Verifier& verifier, bool strict, const VoteKey& key);

struct EvalExample {
  std::vector<bool> item_truth;
  bool strict() const;
};

struct RateEstimate {
  NoiseParams rates;
  std::size_t n_pos = 0;       // responses with S* = 1
  std::size_t n_neg = 0;       // responses with S* = 0
  std::size_t n_item_pos = 0;  // items with Y* = 1
  std::size_t n_item_neg = 0;  // items with Y* = 0
};

/// Measured (p, q, p', q') of a synthetic verifier over an eval set, single
/// pass per judgment. Throws InsufficientSupport when a cell is empty.
RateEstimate empirical_rates(const Verifier& verifier, std::span<const EvalExample> examples, std::uint64_t seed);

/// Columns: p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg
void write_rates_csv(std::ostream& out, const RateEstimate& estimate);

}  // namespace softcheck
