#include "softcheck/verifier.hpp"

#include <cmath>
#include <ostream>

#include "softcheck/errors.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

constexpr std::uint64_t kLenientTag = 0x1e41e47ULL;
constexpr std::uint64_t kHolisticTag = 0x401157cULL;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void NoiseParams::validate() const {
  if (!in_unit(p) || !in_unit(q) || !in_unit(p_item) || !in_unit(q_item))
    throw InvalidArgument("verifier rates must lie in [0,1]");
}

void CorrelationModel::validate() const {
  if (!in_unit(lenient_prob)) throw InvalidArgument("lenient_prob must lie in [0,1]");
}

void to_json(Json& j, const NoiseParams& n) {
  j = Json{{"p", n.p}, {"q", n.q}, {"p_item", n.p_item}, {"q_item", n.q_item}};
}

void from_json(const Json& j, NoiseParams& n) {
  n = NoiseParams{};
  if (j.contains("p")) n.p = j["p"].get<double>();
  if (j.contains("q")) n.q = j["q"].get<double>();
  if (j.contains("p_item")) n.p_item = j["p_item"].get<double>();
  if (j.contains("q_item")) n.q_item = j["q_item"].get<double>();
  n.validate();
}

void to_json(Json& j, const CorrelationModel& c) { j = Json{{"lenient_prob", c.lenient_prob}}; }

void from_json(const Json& j, CorrelationModel& c) {
  c = CorrelationModel{};
  if (j.contains("lenient_prob")) c.lenient_prob = j["lenient_prob"].get<double>();
  c.validate();
}

VoteMatrix::VoteMatrix(std::size_t candidates, std::size_t items, std::size_t votes)
    : g_(candidates), k_(items), j_(votes), d_(candidates * items * votes, 0) {
  if (votes < 1) throw InvalidArgument("vote count J must be >= 1");
}

double item_yes_probability(const Verifier& verifier, std::size_t item, std::optional<bool> truth) {
  const bool y = truth.value_or(true);
  return std::visit(overloaded{
                        [&](const OracleVerifier&) { return y ? 1.0 : 0.0; },
                        [&](const NoisyVerifier& v) {
                          return (1.0 - v.noise.q_item) + v.noise.alpha_item() * (y ? 1.0 : 0.0);
                        },
                        [&](const LearnedVerifier& v) { return v.yes_prob(item); },
                    },
                    verifier);
}

std::vector<std::uint8_t> sample_item_votes(const Verifier& verifier, const GroundTruthVector& truth, int votes,
                                            const VoteKey& key) {
  if (votes < 1) throw InvalidArgument("vote count J must be >= 1");
  const std::size_t K = truth.size();
  const auto J = static_cast<std::size_t>(votes);
  std::vector<std::uint8_t> out(K * J, 0);

  if (std::holds_alternative<OracleVerifier>(verifier)) {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < J; ++j) out[k * J + j] = truth.bits[k].value_or(true) ? 1 : 0;
    return out;
  }
  if (const auto* noisy = std::get_if<NoisyVerifier>(&verifier); noisy && !noisy->correlation.independent()) {
    const double u = keyed_uniform(key.seed, {key.step, key.prompt, key.candidate, kLenientTag});
    if (u < noisy->correlation.lenient_prob) {
      std::fill(out.begin(), out.end(), std::uint8_t{1});
      return out;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double mu = item_yes_probability(verifier, k, truth.bits[k]);
    for (std::size_t j = 0; j < J; ++j) {
      const double u = keyed_uniform(key.seed, {key.step, key.prompt, key.candidate, k, j});
      out[k * J + j] = u < mu ? 1 : 0;
    }
  }
  return out;
}

PassRates::PassRates(std::size_t candidates, std::size_t items, int votes, std::vector<int> yes_counts)
    : g_(candidates), k_(items), j_(votes), yes_(std::move(yes_counts)) {
  if (votes < 1) throw InvalidArgument("vote count J must be >= 1");
  if (yes_.size() != g_ * k_) throw InvalidArgument("pass-rate shape mismatch");
}

std::vector<Rational> PassRates::row(std::size_t i) const {
  std::vector<Rational> out;
  out.reserve(k_);
  for (std::size_t k = 0; k < k_; ++k) out.push_back(at(i, k));
  return out;
}

PassRates pass_rates(const VoteMatrix& votes) {
  std::vector<int> yes(votes.candidates() * votes.items(), 0);
  for (std::size_t i = 0; i < votes.candidates(); ++i)
    for (std::size_t k = 0; k < votes.items(); ++k)
      for (std::size_t j = 0; j < votes.votes(); ++j) yes[i * votes.items() + k] += votes.at(i, k, j);
  return PassRates(votes.candidates(), votes.items(), static_cast<int>(votes.votes()), std::move(yes));
}

bool passes_threshold(const Rational& rate, double tau) {
  // Tolerance absorbs decimal thresholds such as 0.6 * 5 = 3.0000000000000004.
  return static_cast<double>(rate.numerator()) >= tau * static_cast<double>(rate.denominator()) - 1e-9;
}

std::vector<bool> aggregate(std::span<const Rational> rates, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in (0,1]");
  std::vector<bool> labels;
  labels.reserve(rates.size());
  for (const auto& r : rates) labels.push_back(passes_threshold(r, tau));
  return labels;
}

double label_probability(double yes_prob, int votes, double tau) {
  // Sum of binomial terms for counts c with c/J >= tau.
  double total = 0.0;
  for (int c = 0; c <= votes; ++c) {
    if (!passes_threshold(Rational(c, votes), tau)) continue;
    const double log_choose = std::lgamma(votes + 1.0) - std::lgamma(c + 1.0) - std::lgamma(votes - c + 1.0);
    double term;
    if (yes_prob <= 0.0) term = c == 0 ? 1.0 : 0.0;
    else if (yes_prob >= 1.0) term = c == votes ? 1.0 : 0.0;
    else term = std::exp(log_choose + c * std::log(yes_prob) + (votes - c) * std::log1p(-yes_prob));
    total += term;
  }
  return std::min(1.0, total);
}

bool holistic_judgment(const Verifier& verifier, bool strict, const VoteKey& key) {
  return std::visit(overloaded{
                        [&](const OracleVerifier&) { return strict; },
                        [&](const NoisyVerifier& v) {
                          const double mu = (1.0 - v.noise.q) + v.noise.alpha() * (strict ? 1.0 : 0.0);
                          return keyed_uniform(key.seed, {key.step, key.prompt, key.candidate, kHolisticTag}) < mu;
                        },
                        [&](const LearnedVerifier&) -> bool {
                          throw InvalidArgument("the shared verification head has no holistic judgment");
                        },
                    },
                    verifier);
}

bool EvalExample::strict() const {
  for (bool b : item_truth)
    if (!b) return false;
  return true;
}

RateEstimate empirical_rates(const Verifier& verifier, std::span<const EvalExample> examples, std::uint64_t seed) {
  RateEstimate est;
  std::size_t tp = 0, tn = 0, item_tp = 0, item_tn = 0;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    const VoteKey key{seed, 0, 0, e};
    const bool s = ex.strict();
    const bool judged = holistic_judgment(verifier, s, key);
    if (s) {
      ++est.n_pos;
      tp += judged ? 1 : 0;
    } else {
      ++est.n_neg;
      tn += judged ? 0 : 1;
    }
    GroundTruthVector truth;
    for (bool b : ex.item_truth) truth.bits.emplace_back(b);
    const auto votes = sample_item_votes(verifier, truth, 1, key);
    for (std::size_t k = 0; k < ex.item_truth.size(); ++k) {
      if (ex.item_truth[k]) {
        ++est.n_item_pos;
        item_tp += votes[k];
      } else {
        ++est.n_item_neg;
        item_tn += 1 - votes[k];
      }
    }
  }
  if (est.n_pos == 0) throw InsufficientSupport("no responses with S*=1; p is unsupported");
  if (est.n_neg == 0) throw InsufficientSupport("no responses with S*=0; q is unsupported");
  if (est.n_item_pos == 0) throw InsufficientSupport("no items with Y*=1; p_item is unsupported");
  if (est.n_item_neg == 0) throw InsufficientSupport("no items with Y*=0; q_item is unsupported");
  est.rates.p = static_cast<double>(tp) / static_cast<double>(est.n_pos);
  est.rates.q = static_cast<double>(tn) / static_cast<double>(est.n_neg);
  est.rates.p_item = static_cast<double>(item_tp) / static_cast<double>(est.n_item_pos);
  est.rates.q_item = static_cast<double>(item_tn) / static_cast<double>(est.n_item_neg);
  return est;
}

void write_rates_csv(std::ostream& out, const RateEstimate& e) {
  out << "p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg\n";
  out << e.rates.p << ',' << e.rates.q << ',' << e.rates.p_item << ',' << e.rates.q_item << ','
      << e.rates.alpha() << ',' << e.rates.alpha_item() << ',' << e.n_pos << ',' << e.n_neg << '\n';
}

}  // namespace softcheck
