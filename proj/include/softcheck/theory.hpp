#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softcheck/rational.hpp"
#include "softcheck/verifier.hpp"

namespace softcheck {

/// One conditioning point (x, y) for the estimator analysis: verifier rates,
/// checklist size, strict-success bit and relaxation gap, optionally the
/// explicit item truth vector.
struct TheoryPoint {
  NoiseParams noise;
  int K = 1;
  bool strict = false;
  Rational gap{0};
  std::optional<std::vector<bool>> truth;

  static TheoryPoint from_truth(const NoiseParams& noise, std::vector<bool> truth);
  static TheoryPoint from_gap(const NoiseParams& noise, int K, bool strict, Rational gap);

  void validate() const;

  /// Explicit truth if present, otherwise the canonical vector with
  /// gap*K leading ones (strict points are all ones).
  std::vector<bool> item_truth() const;
};

/// The ideal, single-verifier and checklist gradient estimators at one draw:
/// each is (reward - baseline) * score.
struct EstimatorSample {
  std::vector<double> score;
  double baseline = 0.0;
  std::vector<double> g_star, g_single, g_chk;
};

EstimatorSample estimator_sample(std::span<const double> score, double baseline, double strict_reward,
                                 double single_reward, double checklist_reward);

/// Scalar coefficients multiplying s_theta.
struct BiasPair {
  double single = 0.0;
  double checklist = 0.0;
};

struct VariancePair {
  double single = 0.0;
  double checklist = 0.0;
  double bound = 0.0;  // 1/(4K)
  bool within_bound = true;
};

/// Per unit squared score norm.
struct MsePair {
  double single = 0.0;
  double checklist = 0.0;
};

BiasPair analytic_bias(const TheoryPoint& point);

/// Closed form under conditional independence; throws
/// CorrelatedFormUnavailable for any other correlation model.
VariancePair analytic_variance(const TheoryPoint& point, const CorrelationModel& correlation = {});

MsePair analytic_mse(const TheoryPoint& point, const CorrelationModel& correlation = {});

enum class Branch { Correct, Incorrect };

struct TheoremVerdict {
  bool holds = false;
  Branch branch = Branch::Incorrect;
  double margin = 0.0;  // RHS - LHS of the branch inequality
};

/// Sufficient condition for the checklist estimator to have no larger MSE:
/// p' >= p on correct outputs, (1-q'+a'D)^2 + 1/(4K) <= 1-q on incorrect ones.
TheoremVerdict sufficient_condition(const TheoryPoint& point);

struct KThresholds {
  /// Smallest K with checklist MSE <= single MSE on correct outputs; empty when
  /// (1-p')^2 >= 1-p, in which case `impossible` is set.
  std::optional<std::int64_t> threshold_correct;
  bool impossible = false;
  /// Smallest K guaranteed by the A(1-A) bound when A = 1-q'+a'D <= 1-q.
  std::optional<std::int64_t> threshold_incorrect;
  /// A^2 > 1-q: no K can make the checklist estimator better on incorrect outputs.
  bool impossible_incorrect = false;
  /// ceil(1/(4(1-q)q)): size at which the bias-only condition implies the MSE condition.
  std::optional<std::int64_t> a_implies_b_threshold;
  bool bias_condition = false;  // a'D <= q'-q
};

KThresholds k_thresholds(const TheoryPoint& point);

/// Checklist MSE on correct outputs as a function of K: (1-p')^2 + p'(1-p')/K.
double correct_branch_mse(double p_item, std::int64_t K);

/// Score function of action `action` under softmax(logits): e_action - pi.
std::vector<double> softmax_score(std::span<const double> logits, std::size_t action);

struct MonteCarloConfig {
  std::size_t trials = 100000;
  double baseline = 0.0;
  CorrelationModel correlation;
  std::uint64_t seed = 0;
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

struct MonteCarloReport {
  Estimate mean_single, var_single;  // J
  Estimate mean_chk, var_chk;        // J-bar
  Estimate mse_single, mse_chk;      // E||g - g*||^2
  Estimate mse_diff;                 // paired mse_chk - mse_single
  double score_norm2 = 0.0;
  double g_star_norm2 = 0.0;
  BiasPair bias;                          // closed form
  std::optional<VariancePair> variance;   // closed form, independence only
  std::optional<MsePair> mse;             // closed form * ||s||^2, independence only
  double max_sigma = 0.0;                 // largest |MC - closed| / se over compared moments
  bool agrees = true;                     // all comparisons within 4 sigma (independence only)
};

/// Simulates J, J_1..J_K and the three gradient estimators at a fixed (x, y).
MonteCarloReport monte_carlo_gradient_mse(const TheoryPoint& point, std::span<const double> score,
                                          const MonteCarloConfig& config);

// ---------------------------------------------------------------------------
// Grid harness

/// Random independence points: rates uniform in [0.5, 1], K in {1,2,4,8,16},
/// S* = 1 with probability 1/4, otherwise D in {0, 1/K, ..., (K-1)/K}.
std::vector<TheoryPoint> independence_grid(std::size_t count, std::uint64_t seed);

struct TheoryCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct TheoryRow {
  std::string grid;
  std::size_t index = 0;
  TheoryPoint point;
  BiasPair bias;
  VariancePair variance;
  MsePair mse;
  TheoremVerdict theorem;
  MonteCarloReport mc;
};

struct TheorySuiteConfig {
  std::size_t variance_points = 200;
  std::size_t theorem_points = 500;
  std::size_t variance_trials = 100000;
  std::size_t theorem_trials = 100000;
  std::int64_t scan_cap = 10000;
  double sigma = 4.0;
  std::uint64_t seed = 20240611;
};

struct TheorySuiteResult {
  std::vector<TheoryRow> rows;
  std::vector<TheoryCheck> checks;
  bool passed() const;
};

TheorySuiteResult run_theory_suite(const TheorySuiteConfig& config);

/// Phase-diagram table: point parameters, closed forms, Monte Carlo values, verdicts.
void write_theory_csv(std::ostream& out, const TheorySuiteResult& result);

}  // namespace softcheck
