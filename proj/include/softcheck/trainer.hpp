#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softcheck/checklist.hpp"
#include "softcheck/constraints.hpp"
#include "softcheck/policy.hpp"
#include "softcheck/reward.hpp"
#include "softcheck/verifier.hpp"

namespace softcheck {

enum class TrainMode { External, NaiveSelf, Sverl };
enum class BaselineMode { Zero, GroupMeanStd };

std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(BaselineMode mode);
BaselineMode parse_baseline_mode(std::string_view name);

/// Fixed verifier used in external mode.
struct ExternalVerifierConfig {
  bool oracle = true;
  NoiseParams noise;
  CorrelationModel correlation;

  Verifier make() const;
};

/// Pre-training of the shared model before any measured run: GRPO on the
/// oracle strict reward plus supervised fitting of the verification head on
/// oracle item labels of uniformly drawn responses.
struct WarmStartConfig {
  int steps = 600;
  double learning_rate = 0.02;
  double verifier_weight = 10.0;  // head step relative to the generator step
  int prompts_per_step = 8;
};

struct TrainerConfig {
  TrainMode mode = TrainMode::Sverl;
  int G = 8;
  int J = 3;
  double tau_plus = 0.75;
  double tau_minus = 0.375;
  std::optional<double> tau;  // pass-label threshold, defaults to tau_plus
  RewardConfig reward;
  double lambda_v = 30.0;
  double lambda_p = 0.5;
  double eps_low = 0.1;
  double eps_high = 0.2;
  double learning_rate = 0.5;
  int steps = 150;
  BaselineMode baseline = BaselineMode::GroupMeanStd;
  int prompts_per_step = 4;

  std::size_t gold_size = 512;
  std::size_t replay_capacity = 4096;
  std::size_t cotrain_batch = 32;
  double gold_fraction = 0.5;
  int cotrain_traces = 8;

  WarmStartConfig warm_start;
  ExternalVerifierConfig verifier;
  EnvironmentConfig environment;
  FamilyConfig family;
  CorruptionPlan corruption;

  std::size_t dim = 16;
  double init_scale = 0.5;
  int eval_prompts = 32;
  std::uint64_t eval_seed = 0xe7a15eedULL;
  int checkpoint_every = 0;  // 0: initial and final only
  bool log_candidates = true;

  double pass_threshold() const { return tau.value_or(tau_plus); }
  void validate() const;
};

void to_json(Json& j, const TrainerConfig& c);
/// Strict: unknown keys raise ConfigInvalid.
void from_json(const Json& j, TrainerConfig& c);

// ---------------------------------------------------------------------------
// GRPO core

/// (R - mean) / (population std + 1e-6) per group, or R unchanged for Zero.
std::vector<double> grpo_advantages(std::span<const double> rewards, BaselineMode mode);

/// -min(r A, clip(r, 1 - eps_low, 1 + eps_high) A) with r = exp(new - old).
double clipped_pg_loss(double advantage, double logprob_new, double logprob_old, double eps_low, double eps_high);

/// d loss / d logprob_new.
double clipped_pg_loss_grad(double advantage, double logprob_new, double logprob_old, double eps_low,
                            double eps_high);

enum class Admission { Positive, Negative, Skip };

/// Positive iff rate >= tau_plus, negative iff rate <= tau_minus.
Admission replay_admit(const Rational& rate, double tau_plus, double tau_minus);

/// (i, k) with rate > 0 and soft score < 1. `rates` is G rows of K pass rates.
std::vector<std::pair<std::size_t, std::size_t>> select_partition_subset(
    const std::vector<std::vector<Rational>>& rates, std::span<const Rational> soft_scores);

// ---------------------------------------------------------------------------
// Verifier-side objective terms on the shared head

enum class TupleSource { Gold, Replay };

struct VerifierTuple {
  PromptTokens prompt;
  ResponseSlots slots;
  ItemTokens item;
  bool label = false;
  TupleSource source = TupleSource::Gold;
  std::uint64_t step = 0;
  Rational pass_rate{0};  // replay only: the rate that admitted it
};

/// Sampled co-training term: for every tuple, `traces` decisions z ~ rho with
/// reward 1[z = label] and a per-tuple mean baseline. Adds
/// scale * mean_{tuple,trace} (r - mean r) grad log rho(z) into `grad` and
/// returns the mean agreement.
double verifier_cotrain_term(const PolicyModel& model, std::span<const double> theta,
                             std::span<const VerifierTuple> batch, int traces, std::uint64_t key, double scale,
                             std::span<double> grad);

/// Mean P(z = label) over the batch, the expectation the sampled term ascends.
double cotrain_objective(const PolicyModel& model, std::span<const double> theta, std::span<const VerifierTuple> batch);
std::vector<double> cotrain_objective_gradient(const PolicyModel& model, std::span<const double> theta,
                                               std::span<const VerifierTuple> batch);

/// One selected (response, item) context with the vote traces stored at scoring time.
struct VoteContext {
  PromptTokens prompt;
  ResponseSlots slots;
  ItemTokens item;
  std::vector<std::uint8_t> traces;
};

/// Sampled partition term: scale * mean_{context} mean_j d_j grad log rho(d_j)
/// is added into `grad` (callers pass -lambda_p to subtract it). Returns the
/// mean stored decision.
double partition_penalty_term(const PolicyModel& model, std::span<const double> theta,
                              std::span<const VoteContext> contexts, double scale, std::span<double> grad);

/// Mean yes-probability over the contexts; its gradient is what the sampled term estimates.
double partition_objective(const PolicyModel& model, std::span<const double> theta,
                           std::span<const VoteContext> contexts);
std::vector<double> partition_objective_gradient(const PolicyModel& model, std::span<const double> theta,
                                                 std::span<const VoteContext> contexts);

// ---------------------------------------------------------------------------
// Training

struct EvalMetrics {
  double oracle_strict = 0.0;
  double oracle_soft = 0.0;
  double measured_reward = 0.0;   // exact expected reward under the run's verifier
  double failing_yes_rate = 0.0;  // policy-weighted yes-probability on items with Y* = 0
};

struct StepMetrics {
  std::uint64_t step = 0;
  EvalMetrics eval;
  bool trained = false;  // false on the final evaluation-only row
  double batch_reward = 0.0;
  std::size_t replay_positive = 0;
  std::size_t replay_negative = 0;
  std::size_t replay_size = 0;
  std::size_t partition_size = 0;
  std::size_t partition_cap = 0;  // sum over prompts of G * K
  std::size_t verifier_samples = 0;
  std::size_t expected_verifier_samples = 0;  // sum G*K*J plus co-training batch * traces
  double objective_gen = 0.0;
  double objective_ver = 0.0;
  double objective_part = 0.0;
  double update_norm = 0.0;
  std::vector<RewardBreakdown> candidates;
};

Json to_json_row(const StepMetrics& m);

/// Initial shared model and the gold buffer drawn from it.
struct WarmStart {
  std::vector<double> theta;
  std::vector<VerifierTuple> gold;
};

WarmStart make_warm_start(const TrainerConfig& config, std::uint64_t seed);

struct TrainResult {
  std::vector<StepMetrics> steps;  // T + 1 rows; the last has trained = false
  std::vector<double> initial_theta;
  std::vector<double> final_theta;
  std::vector<std::vector<double>> checkpoints;  // by checkpoint step
  std::vector<std::uint64_t> checkpoint_steps;
  bool replay_pure = true;
};

/// Runs T steps from the warm start. Deterministic in (config, seed).
TrainResult train(const TrainerConfig& config, std::uint64_t seed, const WarmStart* warm = nullptr);

/// Exact metrics of `theta` on the fixed evaluation prompts by enumerating the response space.
EvalMetrics evaluate(const TrainerConfig& config, const PolicyModel& model, std::span<const double> theta);

/// Writes metrics.jsonl, manifest.json and checkpoints under `dir`.
void write_run(const std::filesystem::path& dir, const TrainerConfig& config, std::uint64_t seed,
               const TrainResult& result);

std::string config_hash(const TrainerConfig& config);

}  // namespace softcheck
