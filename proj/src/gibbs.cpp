#include "softcheck/gibbs.hpp"

#include <algorithm>
#include <cmath>

#include "softcheck/errors.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

void GibbsToyModel::validate() const {
  if (responses > kMaxResponses || K > kMaxItems)
    throw NonEnumerable("toy model exceeds the enumeration cap (64 responses, 4 items)");
  if (prompts == 0 || responses == 0 || K < 1 || dim == 0) throw InvalidArgument("toy model has an empty dimension");
  if (!(kl_temperature > 0.0) || !std::isfinite(kl_temperature)) throw InvalidArgument("kl_temperature must be > 0");
  if (reference.size() != prompts * responses) throw InvalidArgument("reference table has the wrong shape");
  if (features.size() != prompts * responses * static_cast<std::size_t>(K) * dim)
    throw InvalidArgument("feature table has the wrong shape");
  for (std::size_t x = 0; x < prompts; ++x) {
    double total = 0.0;
    for (std::size_t y = 0; y < responses; ++y) {
      const double p = reference[x * responses + y];
      if (!(p > 0.0)) throw InvalidArgument("reference probabilities must be positive");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("reference distribution does not sum to 1");
  }
}

GibbsToyModel GibbsToyModel::random(std::size_t prompts, std::size_t responses, int K, std::size_t dim,
                                    double kl_temperature, std::uint64_t seed) {
  GibbsToyModel m;
  m.prompts = prompts;
  m.responses = responses;
  m.K = K;
  m.dim = dim;
  m.kl_temperature = kl_temperature;
  if (responses > kMaxResponses || K > kMaxItems) m.validate();
  Rng rng = Rng::keyed(seed, {0x61bb5});
  m.reference.resize(prompts * responses);
  for (std::size_t x = 0; x < prompts; ++x) {
    double total = 0.0;
    for (std::size_t y = 0; y < responses; ++y) total += m.reference[x * responses + y] = std::exp(rng.normal());
    for (std::size_t y = 0; y < responses; ++y) m.reference[x * responses + y] /= total;
  }
  m.features.resize(prompts * responses * static_cast<std::size_t>(K) * dim);
  for (auto& f : m.features) f = rng.normal();
  m.validate();
  return m;
}

std::span<const double> GibbsToyModel::feature(std::size_t x, std::size_t y, int k) const {
  const std::size_t at = ((x * responses + y) * static_cast<std::size_t>(K) + static_cast<std::size_t>(k)) * dim;
  return {features.data() + at, dim};
}

double GibbsToyModel::yes_rate(std::span<const double> w, std::size_t x, std::size_t y, int k) const {
  if (w.size() != dim) throw InvalidArgument("weight vector has the wrong dimension");
  const auto f = feature(x, y, k);
  double z = 0.0;
  for (std::size_t d = 0; d < dim; ++d) z += w[d] * f[d];
  return logistic(z);
}

std::vector<double> GibbsToyModel::yes_rate_gradient(std::span<const double> w, std::size_t x, std::size_t y,
                                                     int k) const {
  const double r = yes_rate(w, x, y, k);
  const auto f = feature(x, y, k);
  std::vector<double> g(dim);
  for (std::size_t d = 0; d < dim; ++d) g[d] = r * (1.0 - r) * f[d];
  return g;
}

double GibbsToyModel::reward(std::span<const double> w, std::size_t x, std::size_t y) const {
  double total = 0.0;
  for (int k = 0; k < K; ++k) total += yes_rate(w, x, y, k);
  return total / K;
}

std::vector<double> GibbsToyModel::policy(std::span<const double> w, std::size_t x) const {
  std::vector<double> logits(responses);
  for (std::size_t y = 0; y < responses; ++y)
    logits[y] = std::log(reference[x * responses + y]) + reward(w, x, y) / kl_temperature;
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += l = std::exp(l - hi);
  for (auto& l : logits) l /= z;
  return logits;
}

double GibbsToyModel::log_policy(std::span<const double> w, std::size_t x, std::size_t y) const {
  std::vector<double> logits(responses);
  for (std::size_t v = 0; v < responses; ++v)
    logits[v] = std::log(reference[x * responses + v]) + reward(w, x, v) / kl_temperature;
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - hi);
  return logits[y] - hi - std::log(z);
}

double target_log_likelihood(const GibbsToyModel& model, std::span<const double> w,
                             std::span<const TargetPair> targets) {
  if (targets.empty()) throw InvalidArgument("target set is empty");
  double total = 0.0;
  for (const auto& t : targets) {
    if (t.prompt >= model.prompts || t.response >= model.responses) throw InvalidArgument("target outside the model");
    total += model.log_policy(w, t.prompt, t.response);
  }
  return total / static_cast<double>(targets.size());
}

PartitionCheckReport partition_gradient_check(const GibbsToyModel& model, std::span<const double> w,
                                              std::span<const TargetPair> targets, double step, double tolerance) {
  model.validate();
  if (targets.empty()) throw InvalidArgument("target set is empty");
  if (w.size() != model.dim) throw InvalidArgument("weight vector has the wrong dimension");
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be > 0");

  const std::size_t D = model.dim;
  PartitionCheckReport rep;
  rep.finite_difference.assign(D, 0.0);
  std::vector<double> probe(w.begin(), w.end());
  for (std::size_t d = 0; d < D; ++d) {
    probe[d] = w[d] + step;
    const double up = target_log_likelihood(model, probe, targets);
    probe[d] = w[d] - step;
    const double down = target_log_likelihood(model, probe, targets);
    probe[d] = w[d];
    rep.finite_difference[d] = (up - down) / (2.0 * step);
  }

  const double scale = 1.0 / (model.kl_temperature * model.K);
  const double n = static_cast<double>(targets.size());
  rep.positive_term.assign(D, 0.0);
  rep.partition_term.assign(D, 0.0);
  std::vector<double> prompt_weight(model.prompts, 0.0);
  for (const auto& t : targets) {
    prompt_weight[t.prompt] += 1.0 / n;
    for (int k = 0; k < model.K; ++k) {
      const auto g = model.yes_rate_gradient(w, t.prompt, t.response, k);
      for (std::size_t d = 0; d < D; ++d) rep.positive_term[d] += scale * g[d] / n;
    }
  }
  for (std::size_t x = 0; x < model.prompts; ++x) {
    if (prompt_weight[x] == 0.0) continue;
    const auto pi = model.policy(w, x);
    for (std::size_t y = 0; y < model.responses; ++y)
      for (int k = 0; k < model.K; ++k) {
        const auto g = model.yes_rate_gradient(w, x, y, k);
        for (std::size_t d = 0; d < D; ++d) rep.partition_term[d] += scale * prompt_weight[x] * pi[y] * g[d];
      }
  }
  rep.two_term.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    rep.two_term[d] = rep.positive_term[d] - rep.partition_term[d];
    rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(rep.two_term[d] - rep.finite_difference[d]));
  }
  rep.agrees = rep.max_abs_diff <= tolerance;
  return rep;
}

}  // namespace softcheck
