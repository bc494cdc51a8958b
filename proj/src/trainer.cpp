#include "softcheck/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "softcheck/errors.hpp"
#include "softcheck/parallel.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

// Stream tags for keyed randomness.
constexpr std::uint64_t kInit = 1, kWarmPrompt = 2, kWarmSample = 3, kGoldPrompt = 4, kGoldSample = 5,
                        kPrompt = 6, kSample = 7, kVote = 8, kBatch = 9, kTrace = 10, kCorrupt = 11;

double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigInvalid(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigInvalid("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

/// P(Binomial(J, r) / J >= tau) with the binomial coefficients cached per J.
class LabelProb {
 public:
  LabelProb(int votes, double tau) : J_(votes) {
    first_ = votes + 1;
    for (int c = 0; c <= votes; ++c)
      if (passes_threshold(Rational(c, votes), tau)) {
        first_ = c;
        break;
      }
    choose_.resize(static_cast<std::size_t>(votes) + 1);
    for (int c = 0; c <= votes; ++c)
      choose_[static_cast<std::size_t>(c)] =
          std::exp(std::lgamma(votes + 1.0) - std::lgamma(c + 1.0) - std::lgamma(votes - c + 1.0));
  }

  double operator()(double r) const {
    double total = 0.0;
    for (int c = first_; c <= J_; ++c)
      total += choose_[static_cast<std::size_t>(c)] * std::pow(r, c) * std::pow(1.0 - r, J_ - c);
    return std::min(1.0, total);
  }

 private:
  int J_;
  int first_;
  std::vector<double> choose_;
};

struct Prompt {
  ConstraintSpec spec;
  Checklist checklist;
  PromptTokens tokens;
  std::vector<ItemTokens> items;
};

Prompt make_prompt(const TrainerConfig& config, const Environment& env, const PolicyModel& model,
                   std::uint64_t spec_seed) {
  Prompt p;
  p.spec = sample_spec(config.family, env, spec_seed);
  p.checklist = derive_checklist(p.spec);
  if (!config.corruption.is_identity()) {
    CorruptionPlan plan = config.corruption;
    plan.seed = derive_key(config.corruption.seed, {kCorrupt, spec_seed});
    p.checklist = corrupt_checklist(p.checklist, p.spec, plan);
  }
  p.tokens = model.prompt_tokens(p.spec);
  for (const auto& item : p.checklist.items) p.items.push_back(model.item_tokens(p.spec, item));
  return p;
}

bool all_true(const std::vector<bool>& bits) {
  return std::all_of(bits.begin(), bits.end(), [](bool b) { return b; });
}

double mean_of(const std::vector<bool>& bits) {
  double s = 0.0;
  for (bool b : bits) s += b ? 1.0 : 0.0;
  return s / static_cast<double>(bits.size());
}

void check_finite(std::span<const double> v, std::uint64_t step, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericalFailure("non-finite " + std::string(what) + " at step " + std::to_string(step) +
                             ", coordinate " + std::to_string(i));
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Fixed evaluation prompts with the oracle truth of every response precomputed.
struct EvalSet {
  std::vector<Prompt> prompts;
  std::vector<std::vector<std::uint8_t>> strict;             // [prompt][response]
  std::vector<std::vector<double>> soft;                     // [prompt][response]
  std::vector<std::vector<std::vector<std::int8_t>>> items;  // [prompt][response][item], -1 undefined
  std::vector<std::vector<std::size_t>> slot_rows;           // [response][slot]
};

EvalSet build_eval_set(const TrainerConfig& config, const Environment& env, const PolicyModel& model) {
  EvalSet set;
  const std::size_t N = env.response_space_size();
  for (std::size_t y = 0; y < N; ++y) {
    const auto slots = env.decode(y);
    std::vector<std::size_t> rows;
    for (std::size_t m = 0; m < slots.values.size(); ++m) rows.push_back(model.slot_row(m, slots.values[m]));
    set.slot_rows.push_back(std::move(rows));
  }
  for (int i = 0; i < config.eval_prompts; ++i) {
    auto p = make_prompt(config, env, model, derive_key(config.eval_seed, {static_cast<std::uint64_t>(i)}));
    std::vector<std::uint8_t> strict(N);
    std::vector<double> soft(N);
    std::vector<std::vector<std::int8_t>> items(N);
    for (std::size_t y = 0; y < N; ++y) {
      const auto text = env.render(env.decode(y));
      const auto bits = constraint_bits(p.spec, text);
      strict[y] = all_true(bits) ? 1 : 0;
      soft[y] = mean_of(bits);
      const auto truth = ground_truth(p.spec, p.checklist, text);
      for (const auto& b : truth.bits) items[y].push_back(b ? (*b ? 1 : 0) : -1);
    }
    set.prompts.push_back(std::move(p));
    set.strict.push_back(std::move(strict));
    set.soft.push_back(std::move(soft));
    set.items.push_back(std::move(items));
  }
  return set;
}

EvalMetrics evaluate_on(const TrainerConfig& config, const PolicyModel& model, const EvalSet& set,
                        std::span<const double> theta) {
  const auto& env = model.environment();
  const std::size_t N = env.response_space_size();
  const std::size_t d = model.layout().dim;
  const bool self = config.mode != TrainMode::External;
  const auto verifier = config.verifier.make();
  const LabelProb label_prob(config.J, config.pass_threshold());

  // Slot-mean features are prompt independent.
  std::vector<double> smean;
  if (self) {
    smean.assign(N * d, 0.0);
    const double inv = 1.0 / static_cast<double>(model.layout().slots);
    for (std::size_t y = 0; y < N; ++y)
      for (std::size_t r : set.slot_rows[y])
        for (std::size_t a = 0; a < d; ++a) smean[y * d + a] += theta[model.layout().embedding + r * d + a] * inv;
  }

  EvalMetrics out;
  double fail_num = 0.0, fail_den = 0.0;
  for (std::size_t x = 0; x < set.prompts.size(); ++x) {
    const auto& prompt = set.prompts[x];
    const auto probs = model.slot_probs(theta, prompt.tokens);
    const std::size_t K = prompt.items.size();

    std::vector<double> item_const(K), item_vec(K * d);
    if (self) {
      const auto h = model.prompt_embedding(theta, prompt.tokens);
      const double* w = theta.data() + model.layout().head;
      for (std::size_t k = 0; k < K; ++k) {
        const auto c = model.item_embedding(theta, prompt.items[k]);
        double base = theta[model.layout().head_bias];
        for (std::size_t a = 0; a < d; ++a) {
          base += w[a] * h[a] + w[2 * d + a] * c[a];
          item_vec[k * d + a] = w[d + a] + w[3 * d + a] * c[a];
        }
        item_const[k] = base;
      }
    }

    double strict = 0.0, soft = 0.0, measured = 0.0;
    std::vector<double> yes(K), lp(K);
    for (std::size_t y = 0; y < N; ++y) {
      double pi = 1.0;
      for (std::size_t m = 0; m < set.slot_rows[y].size(); ++m) {
        const std::size_t v = set.slot_rows[y][m] - model.slot_row(m, 0);
        pi *= probs[m][v];
      }
      if (pi == 0.0) continue;
      strict += pi * set.strict[x][y];
      soft += pi * set.soft[x][y];
      const auto& truth = set.items[x][y];

      double all_pass = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const std::optional<bool> t = truth[k] < 0 ? std::nullopt : std::optional<bool>(truth[k] == 1);
        if (self) {
          double z = item_const[k];
          for (std::size_t a = 0; a < d; ++a) z += item_vec[k * d + a] * smean[y * d + a];
          yes[k] = logistic(z);
        } else {
          yes[k] = item_yes_probability(verifier, k, t);
        }
        lp[k] = label_prob(yes[k]);
      }
      double vote_yes_scale = 1.0;
      if (!self && !config.verifier.oracle) {
        const double lenient = config.verifier.correlation.lenient_prob;
        all_pass = lenient;
        vote_yes_scale = 1.0 - lenient;
      }
      for (std::size_t k = 0; k < K; ++k) {
        if (truth[k] != 0) continue;
        fail_num += pi * (1.0 - vote_yes_scale + vote_yes_scale * yes[k]);
        fail_den += pi;
      }
      if (config.reward.mode == RewardMode::Holistic) {
        const bool s = set.strict[x][y] == 1;
        measured += pi * (config.verifier.oracle
                              ? (s ? 1.0 : 0.0)
                              : (1.0 - config.verifier.noise.q) + config.verifier.noise.alpha() * (s ? 1.0 : 0.0));
      } else {
        measured += pi * expected_reward(lp, all_pass, config.reward);
      }
    }
    out.oracle_strict += strict;
    out.oracle_soft += soft;
    out.measured_reward += measured;
  }
  const double n = static_cast<double>(set.prompts.size());
  out.oracle_strict /= n;
  out.oracle_soft /= n;
  out.measured_reward /= n;
  out.failing_yes_rate = fail_den > 0.0 ? fail_num / fail_den : 0.0;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and config

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::External: return "external";
    case TrainMode::NaiveSelf: return "naive_self";
    case TrainMode::Sverl: return "sverl";
  }
  return "unknown";
}

TrainMode parse_train_mode(std::string_view name) {
  if (name == "external") return TrainMode::External;
  if (name == "naive_self") return TrainMode::NaiveSelf;
  if (name == "sverl") return TrainMode::Sverl;
  throw ConfigInvalid("unknown training mode '" + std::string(name) + "'");
}

std::string_view to_string(BaselineMode mode) { return mode == BaselineMode::Zero ? "zero" : "group_mean_std"; }

BaselineMode parse_baseline_mode(std::string_view name) {
  if (name == "zero") return BaselineMode::Zero;
  if (name == "group_mean_std") return BaselineMode::GroupMeanStd;
  throw ConfigInvalid("unknown baseline '" + std::string(name) + "'");
}

Verifier ExternalVerifierConfig::make() const {
  if (oracle) return OracleVerifier{};
  return NoisyVerifier{noise, correlation};
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigInvalid(m); };
  if (G < 1) fail("G must be >= 1");
  if (baseline == BaselineMode::GroupMeanStd && G < 2) fail("group baselines need G >= 2");
  if (J < 1) fail("J must be >= 1");
  if (!(tau_minus > 0.0 && tau_minus < tau_plus && tau_plus <= 1.0)) fail("need 0 < tau_minus < tau_plus <= 1");
  const double t = pass_threshold();
  if (!(t > 0.0 && t <= 1.0)) fail("pass threshold must lie in (0,1]");
  if (!(eps_low > 0.0) || !(eps_high > 0.0)) fail("clip bounds must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (steps < 0) fail("steps must be >= 0");
  if (prompts_per_step < 1) fail("prompts_per_step must be >= 1");
  if (lambda_v < 0.0 || lambda_p < 0.0) fail("objective weights must be >= 0");
  if (!(gold_fraction >= 0.0 && gold_fraction <= 1.0)) fail("gold_fraction must lie in [0,1]");
  if (cotrain_traces < 1) fail("cotrain_traces must be >= 1");
  if (replay_capacity < 1) fail("replay_capacity must be >= 1");
  if (warm_start.steps < 0 || warm_start.prompts_per_step < 1 || warm_start.learning_rate < 0.0 ||
      warm_start.verifier_weight < 0.0)
    fail("invalid warm_start block");
  if (eval_prompts < 1) fail("eval_prompts must be >= 1");
  if (dim < 1) fail("dim must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (reward.mode == RewardMode::Holistic && mode != TrainMode::External)
    fail("holistic rewards need an external verifier");
  try {
    reward.validate();
    verifier.noise.validate();
    verifier.correlation.validate();
    environment.validate();
    family.validate();
    corruption.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
}

void to_json(Json& j, const TrainerConfig& c) {
  j = Json::object();
  j["mode"] = std::string(to_string(c.mode));
  j["G"] = c.G;
  j["J"] = c.J;
  j["tau_plus"] = c.tau_plus;
  j["tau_minus"] = c.tau_minus;
  if (c.tau) j["tau"] = *c.tau;
  j["beta_pc"] = c.reward.beta_pc;
  j["reward_mode"] = std::string(to_string(c.reward.mode));
  j["lambda_v"] = c.lambda_v;
  j["lambda_p"] = c.lambda_p;
  j["eps_low"] = c.eps_low;
  j["eps_high"] = c.eps_high;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["baseline"] = std::string(to_string(c.baseline));
  j["prompts_per_step"] = c.prompts_per_step;
  j["gold_size"] = c.gold_size;
  j["replay_capacity"] = c.replay_capacity;
  j["cotrain_batch"] = c.cotrain_batch;
  j["gold_fraction"] = c.gold_fraction;
  j["cotrain_traces"] = c.cotrain_traces;
  j["warm_start"] = Json{{"steps", c.warm_start.steps},
                         {"learning_rate", c.warm_start.learning_rate},
                         {"verifier_weight", c.warm_start.verifier_weight},
                         {"prompts_per_step", c.warm_start.prompts_per_step}};
  Json v{{"kind", c.verifier.oracle ? "oracle" : "noisy"}};
  v["noise"] = c.verifier.noise;
  v["correlation"] = c.verifier.correlation;
  j["verifier"] = v;
  j["environment"] = c.environment;
  j["family"] = c.family;
  j["corruption"] = c.corruption;
  j["dim"] = c.dim;
  j["init_scale"] = c.init_scale;
  j["eval_prompts"] = c.eval_prompts;
  j["eval_seed"] = c.eval_seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_candidates"] = c.log_candidates;
}

void from_json(const Json& j, TrainerConfig& c) {
  require_keys(j,
               {"mode", "G", "J", "tau_plus", "tau_minus", "tau", "beta_pc", "reward_mode", "lambda_v", "lambda_p",
                "eps_low", "eps_high", "learning_rate", "steps", "baseline", "prompts_per_step", "gold_size",
                "replay_capacity", "cotrain_batch", "gold_fraction", "cotrain_traces", "warm_start", "verifier",
                "environment", "family", "corruption", "dim", "init_scale", "eval_prompts", "eval_seed",
                "checkpoint_every", "log_candidates"},
               "trainer config");
  c = TrainerConfig{};
  try {
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    read(j, "G", c.G);
    read(j, "J", c.J);
    read(j, "tau_plus", c.tau_plus);
    read(j, "tau_minus", c.tau_minus);
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    read(j, "beta_pc", c.reward.beta_pc);
    if (j.contains("reward_mode")) c.reward.mode = parse_reward_mode(j.at("reward_mode").get<std::string>());
    read(j, "lambda_v", c.lambda_v);
    read(j, "lambda_p", c.lambda_p);
    read(j, "eps_low", c.eps_low);
    read(j, "eps_high", c.eps_high);
    read(j, "learning_rate", c.learning_rate);
    read(j, "steps", c.steps);
    if (j.contains("baseline")) c.baseline = parse_baseline_mode(j.at("baseline").get<std::string>());
    read(j, "prompts_per_step", c.prompts_per_step);
    read(j, "gold_size", c.gold_size);
    read(j, "replay_capacity", c.replay_capacity);
    read(j, "cotrain_batch", c.cotrain_batch);
    read(j, "gold_fraction", c.gold_fraction);
    read(j, "cotrain_traces", c.cotrain_traces);
    if (j.contains("warm_start")) {
      const auto& w = j.at("warm_start");
      require_keys(w, {"steps", "learning_rate", "verifier_weight", "prompts_per_step"}, "warm_start");
      read(w, "steps", c.warm_start.steps);
      read(w, "learning_rate", c.warm_start.learning_rate);
      read(w, "verifier_weight", c.warm_start.verifier_weight);
      read(w, "prompts_per_step", c.warm_start.prompts_per_step);
    }
    if (j.contains("verifier")) {
      const auto& v = j.at("verifier");
      require_keys(v, {"kind", "noise", "correlation"}, "verifier");
      const auto kind = v.value("kind", std::string("oracle"));
      if (kind != "oracle" && kind != "noisy") throw ConfigInvalid("verifier kind must be oracle or noisy");
      c.verifier.oracle = kind == "oracle";
      if (v.contains("noise")) {
        require_keys(v.at("noise"), {"p", "q", "p_item", "q_item"}, "verifier.noise");
        c.verifier.noise = v.at("noise").get<NoiseParams>();
      }
      if (v.contains("correlation")) {
        require_keys(v.at("correlation"), {"lenient_prob"}, "verifier.correlation");
        c.verifier.correlation = v.at("correlation").get<CorrelationModel>();
      }
    }
    if (j.contains("environment")) {
      require_keys(j.at("environment"), {"keywords", "closing_phrase", "max_bullets", "pad_values", "word_thresholds"},
                   "environment");
      c.environment = j.at("environment").get<EnvironmentConfig>();
    }
    if (j.contains("family")) {
      require_keys(j.at("family"),
                   {"kinds", "min_constraints", "max_constraints", "item_count_min", "item_count_max", "min_words_lo",
                    "min_words_hi", "max_words_lo", "max_words_hi", "max_attempts"},
                   "family");
      c.family = j.at("family").get<FamilyConfig>();
    }
    if (j.contains("corruption")) {
      require_keys(j.at("corruption"), {"drop_prob", "duplicate_prob", "merge_prob", "spurious_prob", "seed"},
                   "corruption");
      c.corruption = j.at("corruption").get<CorruptionPlan>();
    }
    read(j, "dim", c.dim);
    read(j, "init_scale", c.init_scale);
    read(j, "eval_prompts", c.eval_prompts);
    read(j, "eval_seed", c.eval_seed);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "log_candidates", c.log_candidates);
  } catch (const ConfigInvalid&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("invalid trainer config: ") + e.what());
  }
  c.validate();
}

std::string config_hash(const TrainerConfig& config) {
  Json j = config;
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// GRPO core

std::vector<double> grpo_advantages(std::span<const double> rewards, BaselineMode mode) {
  std::vector<double> a(rewards.begin(), rewards.end());
  if (mode == BaselineMode::Zero) return a;
  if (rewards.size() < 2) throw InvalidArgument("group baselines need at least two rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(rewards.size()));
  for (auto& v : a) v = (v - mean) / (sd + 1e-6);
  return a;
}

double clipped_pg_loss(double advantage, double logprob_new, double logprob_old, double eps_low, double eps_high) {
  if (!std::isfinite(logprob_new) || !std::isfinite(logprob_old)) throw InvalidArgument("log-probabilities must be finite");
  const double r = std::exp(logprob_new - logprob_old);
  const double clipped = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
  return -std::min(r * advantage, clipped * advantage);
}

double clipped_pg_loss_grad(double advantage, double logprob_new, double logprob_old, double eps_low,
                            double eps_high) {
  if (!std::isfinite(logprob_new) || !std::isfinite(logprob_old)) throw InvalidArgument("log-probabilities must be finite");
  const double r = std::exp(logprob_new - logprob_old);
  const double clipped = std::clamp(r, 1.0 - eps_low, 1.0 + eps_high);
  // The min selects the unclipped branch exactly when it is not larger.
  return r * advantage <= clipped * advantage ? -r * advantage : 0.0;
}

Admission replay_admit(const Rational& rate, double tau_plus, double tau_minus) {
  if (!(tau_minus > 0.0 && tau_minus < tau_plus && tau_plus <= 1.0))
    throw InvalidArgument("need 0 < tau_minus < tau_plus <= 1");
  if (passes_threshold(rate, tau_plus)) return Admission::Positive;
  const double num = static_cast<double>(rate.numerator());
  const double den = static_cast<double>(rate.denominator());
  if (num <= tau_minus * den + 1e-9) return Admission::Negative;
  return Admission::Skip;
}

std::vector<std::pair<std::size_t, std::size_t>> select_partition_subset(
    const std::vector<std::vector<Rational>>& rates, std::span<const Rational> soft_scores) {
  if (rates.size() != soft_scores.size()) throw InvalidArgument("pass-rate rows and soft scores differ in length");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (soft_scores[i] >= Rational(1)) continue;
    for (std::size_t k = 0; k < rates[i].size(); ++k)
      if (rates[i][k] > Rational(0)) out.emplace_back(i, k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verifier-side terms

double verifier_cotrain_term(const PolicyModel& model, std::span<const double> theta,
                             std::span<const VerifierTuple> batch, int traces, std::uint64_t key, double scale,
                             std::span<double> grad) {
  if (batch.empty()) return 0.0;
  if (traces < 1) throw InvalidArgument("trace count must be >= 1");
  const double weight = scale / (static_cast<double>(batch.size()) * traces);
  double agree_total = 0.0;
  std::vector<std::uint8_t> z(static_cast<std::size_t>(traces));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = batch[b];
    const double r = model.yes_prob(theta, t.prompt, t.slots, t.item);
    double mean_agree = 0.0;
    for (int g = 0; g < traces; ++g) {
      z[static_cast<std::size_t>(g)] = keyed_uniform(key, {b, static_cast<std::uint64_t>(g)}) < r ? 1 : 0;
      mean_agree += (z[static_cast<std::size_t>(g)] == (t.label ? 1 : 0)) ? 1.0 : 0.0;
    }
    mean_agree /= traces;
    agree_total += mean_agree;
    // grad log rho(z) = (z - r) grad logit, so the tuple collapses to one logit direction.
    double coef = 0.0;
    for (int g = 0; g < traces; ++g) {
      const double agree = (z[static_cast<std::size_t>(g)] == (t.label ? 1 : 0)) ? 1.0 : 0.0;
      coef += (agree - mean_agree) * (z[static_cast<std::size_t>(g)] - r);
    }
    if (coef != 0.0 && scale != 0.0) model.add_grad_yes_logit(theta, t.prompt, t.slots, t.item, weight * coef, grad);
  }
  return agree_total / static_cast<double>(batch.size());
}

double cotrain_objective(const PolicyModel& model, std::span<const double> theta, std::span<const VerifierTuple> batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : batch) {
    const double r = model.yes_prob(theta, t.prompt, t.slots, t.item);
    total += t.label ? r : 1.0 - r;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<double> cotrain_objective_gradient(const PolicyModel& model, std::span<const double> theta,
                                               std::span<const VerifierTuple> batch) {
  std::vector<double> g(model.param_count(), 0.0);
  for (const auto& t : batch) {
    const double r = model.yes_prob(theta, t.prompt, t.slots, t.item);
    const double dr = r * (1.0 - r) * (t.label ? 1.0 : -1.0);
    model.add_grad_yes_logit(theta, t.prompt, t.slots, t.item, dr / static_cast<double>(batch.size()), g);
  }
  return g;
}

double partition_penalty_term(const PolicyModel& model, std::span<const double> theta,
                              std::span<const VoteContext> contexts, double scale, std::span<double> grad) {
  if (contexts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : contexts) {
    if (c.traces.empty()) throw InvalidArgument("partition context has no stored traces");
    const double r = model.yes_prob(theta, c.prompt, c.slots, c.item);
    double mean_d = 0.0, coef = 0.0;
    for (std::uint8_t d : c.traces) {
      mean_d += d;
      coef += d * (d - r);
    }
    const double J = static_cast<double>(c.traces.size());
    total += mean_d / J;
    if (coef != 0.0 && scale != 0.0)
      model.add_grad_yes_logit(theta, c.prompt, c.slots, c.item, scale * coef / (J * static_cast<double>(contexts.size())),
                               grad);
  }
  return total / static_cast<double>(contexts.size());
}

double partition_objective(const PolicyModel& model, std::span<const double> theta,
                           std::span<const VoteContext> contexts) {
  if (contexts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : contexts) total += model.yes_prob(theta, c.prompt, c.slots, c.item);
  return total / static_cast<double>(contexts.size());
}

std::vector<double> partition_objective_gradient(const PolicyModel& model, std::span<const double> theta,
                                                 std::span<const VoteContext> contexts) {
  std::vector<double> g(model.param_count(), 0.0);
  for (const auto& c : contexts) {
    const double r = model.yes_prob(theta, c.prompt, c.slots, c.item);
    model.add_grad_yes_logit(theta, c.prompt, c.slots, c.item, r * (1.0 - r) / static_cast<double>(contexts.size()), g);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training

Json to_json_row(const StepMetrics& m) {
  Json j{{"step", m.step},
         {"trained", m.trained},
         {"oracle_strict", m.eval.oracle_strict},
         {"oracle_soft", m.eval.oracle_soft},
         {"measured_reward", m.eval.measured_reward},
         {"failing_yes_rate", m.eval.failing_yes_rate}};
  if (!m.trained) return j;
  j["batch_reward"] = m.batch_reward;
  j["replay_positive"] = m.replay_positive;
  j["replay_negative"] = m.replay_negative;
  j["replay_size"] = m.replay_size;
  j["partition_size"] = m.partition_size;
  j["partition_cap"] = m.partition_cap;
  j["verifier_samples"] = m.verifier_samples;
  j["expected_verifier_samples"] = m.expected_verifier_samples;
  j["objective_gen"] = m.objective_gen;
  j["objective_ver"] = m.objective_ver;
  j["objective_part"] = m.objective_part;
  j["update_norm"] = m.update_norm;
  if (!m.candidates.empty()) {
    Json rows = Json::array();
    for (const auto& c : m.candidates) rows.push_back(to_json_row(c));
    j["candidates"] = rows;
  }
  return j;
}

WarmStart make_warm_start(const TrainerConfig& config, std::uint64_t seed) {
  config.validate();
  const Environment env(config.environment);
  const PolicyModel model(env, config.dim);
  WarmStart ws;
  ws.theta = model.init(derive_key(seed, {kInit}), config.init_scale);
  auto& theta = ws.theta;
  const auto& w = config.warm_start;
  const int G = std::max(2, config.G);

  for (int step = 0; step < w.steps; ++step) {
    std::vector<double> grad(theta.size(), 0.0);
    const double norm_g = 1.0 / (static_cast<double>(w.prompts_per_step) * G);
    for (int i = 0; i < w.prompts_per_step; ++i) {
      const auto us = static_cast<std::uint64_t>(step), ui = static_cast<std::uint64_t>(i);
      const auto prompt = make_prompt(config, env, model, derive_key(seed, {kWarmPrompt, us, ui}));
      std::vector<ResponseSample> samples;
      std::vector<double> rewards;
      for (int g = 0; g < G; ++g) {
        Rng rng = Rng::keyed(seed, {kWarmSample, us, ui, static_cast<std::uint64_t>(g)});
        samples.push_back(model.sample_response(theta, prompt.tokens, rng));
        rewards.push_back(all_true(constraint_bits(prompt.spec, samples.back().text)) ? 1.0 : 0.0);
      }
      const auto adv = grpo_advantages(rewards, BaselineMode::GroupMeanStd);
      for (int g = 0; g < G; ++g) {
        const auto& s = samples[static_cast<std::size_t>(g)];
        model.add_grad_log_prob(theta, prompt.tokens, s.slots, norm_g * adv[static_cast<std::size_t>(g)], grad);
        if (w.verifier_weight == 0.0) continue;
        // The head is fitted on uniformly drawn responses so that failing items
        // are well represented even once the policy mostly passes.
        Rng pick = Rng::keyed(seed, {kWarmSample, us, ui, static_cast<std::uint64_t>(g), 1});
        const auto slots = env.decode(pick.below(env.response_space_size()));
        const auto truth = ground_truth(prompt.spec, prompt.checklist, env.render(slots));
        for (std::size_t k = 0; k < prompt.items.size(); ++k) {
          if (!truth.bits[k]) continue;
          const double r = model.yes_prob(theta, prompt.tokens, slots, prompt.items[k]);
          const double label = *truth.bits[k] ? 1.0 : 0.0;
          model.add_grad_yes_logit(theta, prompt.tokens, slots, prompt.items[k],
                                   w.verifier_weight * norm_g * (label - r), grad);
        }
      }
    }
    check_finite(grad, static_cast<std::uint64_t>(step), "warm-start gradient");
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += w.learning_rate * grad[i];
  }

  // Gold tuples: one response per prompt from the frozen initial model, every
  // item with oracle-defined truth.
  for (std::uint64_t i = 0; ws.gold.size() < config.gold_size; ++i) {
    const auto prompt = make_prompt(config, env, model, derive_key(seed, {kGoldPrompt, i}));
    Rng rng = Rng::keyed(seed, {kGoldSample, i});
    const auto s = model.sample_response(theta, prompt.tokens, rng);
    const auto truth = ground_truth(prompt.spec, prompt.checklist, s.text);
    for (std::size_t k = 0; k < prompt.items.size() && ws.gold.size() < config.gold_size; ++k) {
      if (!truth.bits[k]) continue;
      ws.gold.push_back({prompt.tokens, s.slots, prompt.items[k], *truth.bits[k], TupleSource::Gold, 0, Rational(0)});
    }
  }
  return ws;
}

EvalMetrics evaluate(const TrainerConfig& config, const PolicyModel& model, std::span<const double> theta) {
  config.validate();
  const auto set = build_eval_set(config, model.environment(), model);
  return evaluate_on(config, model, set, theta);
}

TrainResult train(const TrainerConfig& config, std::uint64_t seed, const WarmStart* warm) {
  config.validate();
  const Environment env(config.environment);
  const PolicyModel model(env, config.dim);
  const auto eval_set = build_eval_set(config, env, model);
  const bool self = config.mode != TrainMode::External;
  const bool sverl = config.mode == TrainMode::Sverl;
  const auto verifier = config.verifier.make();
  const double tau = config.pass_threshold();
  const std::uint64_t vote_seed = derive_key(seed, {kVote});

  WarmStart local;
  if (!warm) {
    local = make_warm_start(config, seed);
    warm = &local;
  }
  if (warm->theta.size() != model.param_count()) throw InvalidArgument("warm start has the wrong parameter count");
  std::vector<double> theta = warm->theta;
  std::deque<VerifierTuple> replay;

  TrainResult result;
  result.initial_theta = theta;
  auto maybe_checkpoint = [&](std::uint64_t step, bool last) {
    const bool periodic = config.checkpoint_every > 0 && step % static_cast<std::uint64_t>(config.checkpoint_every) == 0;
    if (step == 0 || last || periodic) {
      result.checkpoint_steps.push_back(step);
      result.checkpoints.push_back(theta);
    }
  };

  const auto T = static_cast<std::uint64_t>(config.steps);
  for (std::uint64_t t = 0; t < T; ++t) {
    maybe_checkpoint(t, false);
    StepMetrics m;
    m.step = t;
    m.trained = true;
    m.eval = evaluate_on(config, model, eval_set, theta);

    std::vector<double> grad(theta.size(), 0.0);
    std::vector<VoteContext> partition;
    const double norm_g = 1.0 / (static_cast<double>(config.prompts_per_step) * config.G);
    double reward_total = 0.0, surrogate = 0.0;

    for (int i = 0; i < config.prompts_per_step; ++i) {
      const auto ui = static_cast<std::uint64_t>(i);
      const auto prompt = make_prompt(config, env, model, derive_key(seed, {kPrompt, t, ui}));
      const std::size_t K = prompt.items.size();
      const auto G = static_cast<std::size_t>(config.G);
      m.partition_cap += G * K;
      if (config.reward.mode == RewardMode::Holistic) m.expected_verifier_samples += G;
      else m.expected_verifier_samples += G * K * static_cast<std::size_t>(config.J);

      std::vector<ResponseSample> samples;
      std::vector<GroundTruthVector> truths;
      std::vector<std::vector<std::uint8_t>> votes;  // [i][k*J + j]
      std::vector<std::vector<double>> yes;          // self mode head probabilities
      std::vector<std::vector<Rational>> rates;
      std::vector<Rational> scores;
      std::vector<double> rewards;
      for (std::size_t g = 0; g < G; ++g) {
        Rng rng = Rng::keyed(seed, {kSample, t, ui, g});
        samples.push_back(model.sample_response(theta, prompt.tokens, rng));
        const auto& s = samples.back();
        truths.push_back(ground_truth(prompt.spec, prompt.checklist, s.text));
        const auto& truth = truths.back();
        const VoteKey key{vote_seed, t, ui, g};
        const bool strict = all_true(constraint_bits(prompt.spec, s.text));

        RewardInputs in;
        std::vector<std::uint8_t> v;
        std::vector<double> head;
        if (config.reward.mode == RewardMode::Holistic) {
          in.holistic = holistic_judgment(verifier, strict, key);
          m.verifier_samples += 1;
        } else {
          if (self) {
            v.resize(K * static_cast<std::size_t>(config.J));
            for (std::size_t k = 0; k < K; ++k) {
              head.push_back(model.yes_prob(theta, prompt.tokens, s.slots, prompt.items[k]));
              for (int j = 0; j < config.J; ++j)
                v[k * static_cast<std::size_t>(config.J) + static_cast<std::size_t>(j)] =
                    keyed_uniform(vote_seed, {t, ui, g, k, static_cast<std::uint64_t>(j)}) < head[k] ? 1 : 0;
            }
          } else {
            v = sample_item_votes(verifier, truth, config.J, key);
          }
          m.verifier_samples += v.size();
          std::vector<Rational> row;
          for (std::size_t k = 0; k < K; ++k) {
            int c = 0;
            for (int j = 0; j < config.J; ++j) c += v[k * static_cast<std::size_t>(config.J) + static_cast<std::size_t>(j)];
            row.emplace_back(c, config.J);
          }
          in.labels = aggregate(row, tau);
          rates.push_back(row);
        }
        const bool have_truth = truth.defined_count() > 0;
        auto breakdown = reward(config.reward, in, have_truth ? &truth : nullptr);
        rewards.push_back(breakdown.R);
        scores.push_back(breakdown.s);
        reward_total += breakdown.R;
        if (config.log_candidates) m.candidates.push_back(std::move(breakdown));
        votes.push_back(std::move(v));
        yes.push_back(std::move(head));
      }

      const auto adv = grpo_advantages(rewards, config.baseline);
      for (std::size_t g = 0; g < G; ++g) {
        const auto& s = samples[g];
        // One on-policy update per batch: the old and new log-probabilities coincide.
        const double coef = -clipped_pg_loss_grad(adv[g], s.log_prob, s.log_prob, config.eps_low, config.eps_high);
        surrogate += -clipped_pg_loss(adv[g], s.log_prob, s.log_prob, config.eps_low, config.eps_high);
        model.add_grad_log_prob(theta, prompt.tokens, s.slots, norm_g * coef, grad);
        if (!self || coef == 0.0) continue;
        // The measured reward also depends on the shared head through the vote
        // traces; their score-function terms carry the same advantage.
        const double per_trace = norm_g * coef / (static_cast<double>(K) * config.J);
        for (std::size_t k = 0; k < K; ++k) {
          double c = 0.0;
          for (int j = 0; j < config.J; ++j)
            c += votes[g][k * static_cast<std::size_t>(config.J) + static_cast<std::size_t>(j)] - yes[g][k];
          if (c != 0.0) model.add_grad_yes_logit(theta, prompt.tokens, s.slots, prompt.items[k], per_trace * c, grad);
        }
      }

      if (sverl) {
        for (std::size_t g = 0; g < G; ++g)
          for (std::size_t k = 0; k < K; ++k) {
            const auto adm = replay_admit(rates[g][k], config.tau_plus, config.tau_minus);
            if (adm == Admission::Skip) continue;
            const bool label = adm == Admission::Positive;
            (label ? m.replay_positive : m.replay_negative) += 1;
            replay.push_back({prompt.tokens, samples[g].slots, prompt.items[k], label, TupleSource::Replay, t,
                              rates[g][k]});
            if (replay.size() > config.replay_capacity) replay.pop_front();
          }
        for (const auto& [g, k] : select_partition_subset(rates, scores)) {
          VoteContext c{prompt.tokens, samples[g].slots, prompt.items[k], {}};
          const auto* v = votes[g].data() + k * static_cast<std::size_t>(config.J);
          c.traces.assign(v, v + config.J);
          partition.push_back(std::move(c));
        }
      }
    }

    m.batch_reward = reward_total / (static_cast<double>(config.prompts_per_step) * config.G);
    m.objective_gen = surrogate * norm_g;
    if (sverl) {
      m.partition_size = partition.size();
      m.objective_part = partition_penalty_term(model, theta, partition, -config.lambda_p, grad);

      if (warm->gold.empty() && replay.empty()) throw EmptyBuffers("gold and replay buffers are both empty");
      std::vector<VerifierTuple> batch;
      Rng rng = Rng::keyed(seed, {kBatch, t});
      std::size_t n_gold = replay.empty() ? config.cotrain_batch
                                          : static_cast<std::size_t>(std::llround(config.gold_fraction *
                                                                                  static_cast<double>(config.cotrain_batch)));
      if (warm->gold.empty()) n_gold = 0;
      for (std::size_t b = 0; b < config.cotrain_batch; ++b) {
        if (b < n_gold) batch.push_back(warm->gold[rng.below(warm->gold.size())]);
        else batch.push_back(replay[rng.below(replay.size())]);
      }
      m.objective_ver = verifier_cotrain_term(model, theta, batch, config.cotrain_traces, derive_key(seed, {kTrace, t}),
                                              config.lambda_v, grad);
      m.verifier_samples += batch.size() * static_cast<std::size_t>(config.cotrain_traces);
      m.expected_verifier_samples += config.cotrain_batch * static_cast<std::size_t>(config.cotrain_traces);
      m.replay_size = replay.size();
      for (const auto& tuple : replay) {
        const double rate = to_double(tuple.pass_rate);
        if (tuple.label ? rate < config.tau_plus - 1e-12 : rate > config.tau_minus + 1e-12) result.replay_pure = false;
      }
    }

    check_finite(grad, t, "gradient");
    m.update_norm = config.learning_rate * norm(grad);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += config.learning_rate * grad[i];
    check_finite(theta, t, "parameters");
    result.steps.push_back(std::move(m));
  }

  maybe_checkpoint(T, true);
  StepMetrics last;
  last.step = T;
  last.eval = evaluate_on(config, model, eval_set, theta);
  result.steps.push_back(std::move(last));
  result.final_theta = theta;
  return result;
}

void write_run(const std::filesystem::path& dir, const TrainerConfig& config, std::uint64_t seed,
               const TrainResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "checkpoints", ec);
  if (ec) throw OutputUnwritable("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "metrics.jsonl", std::ios::binary);
    if (!out) throw OutputUnwritable("cannot write " + (dir / "metrics.jsonl").string());
    for (const auto& m : result.steps) out << to_json_row(m).dump() << '\n';
    if (!out) throw OutputUnwritable("write failed for metrics.jsonl");
  }
  const Environment env(config.environment);
  const PolicyModel model(env, config.dim);
  Json checkpoints = Json::array();
  for (std::size_t c = 0; c < result.checkpoints.size(); ++c) {
    std::ostringstream name;
    name << "step_" << std::setw(6) << std::setfill('0') << result.checkpoint_steps[c] << ".bin";
    save_checkpoint(dir / "checkpoints" / name.str(), model, result.checkpoints[c]);
    checkpoints.push_back("checkpoints/" + name.str());
  }
  Json manifest{{"kind", "train"},
                {"code_version", kCodeVersion},
                {"seed", seed},
                {"config_hash", config_hash(config)},
                {"config", config},
                {"metrics", "metrics.jsonl"},
                {"checkpoints", checkpoints}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw OutputUnwritable("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
}

}  // namespace softcheck
