#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "softcheck/errors.hpp"
#include "softcheck/policy.hpp"

using namespace softcheck;

namespace {

Environment small_env() {
  EnvironmentConfig c;
  c.keywords = {"Paris"};
  c.max_bullets = 2;
  c.pad_values = {0, 5};
  return Environment(c);
}

ConstraintSpec spec() {
  ConstraintSpec s;
  s.id = "s";
  s.constraints = {Constraint::item_count(2), Constraint::include_keyword("Paris")};
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

template <class F>
double central_difference(std::vector<double> theta, std::size_t i, F&& f, double h = 1e-5) {
  const double x = theta[i];
  theta[i] = x + h;
  const double up = f(theta);
  theta[i] = x - h;
  const double down = f(theta);
  return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("zero parameters give uniform slots") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const std::vector<double> theta(model.param_count(), 0.0);
  const auto prompt = model.prompt_tokens(spec());
  double expected = 0.0;
  for (int size : env.slot_sizes()) expected -= std::log(size);
  const auto probs = model.slot_probs(theta, prompt);
  for (std::size_t m = 0; m < probs.size(); ++m)
    for (double p : probs[m]) CHECK(p == doctest::Approx(1.0 / env.slot_sizes()[m]));
  Rng rng(1);
  const auto sample = model.sample_response(theta, prompt, rng);
  CHECK(sample.log_prob == doctest::Approx(expected));
}

TEST_CASE("sampling is deterministic and greedy picks the argmax") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto theta = model.init(5, 0.5);
  const auto prompt = model.prompt_tokens(spec());
  Rng a(9), b(9);
  CHECK(model.sample_response(theta, prompt, a).slots == model.sample_response(theta, prompt, b).slots);
  Rng c(1), d(2);
  const auto g1 = model.sample_response(theta, prompt, c, true);
  const auto g2 = model.sample_response(theta, prompt, d, true);
  CHECK(g1.slots == g2.slots);
  const auto probs = model.slot_probs(theta, prompt);
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const auto best = std::max_element(probs[m].begin(), probs[m].end()) - probs[m].begin();
    CHECK(g1.slots.values[m] == best);
  }
}

TEST_CASE("log-prob gradient matches central differences") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto prompt = model.prompt_tokens(spec());
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto theta = model.init(seed, 0.5);
    const auto slots = env.decode(seed * 7 % env.response_space_size());
    const auto grad = model.grad_log_prob(theta, prompt, slots);
    const auto f = [&](const std::vector<double>& t) { return model.log_prob(t, prompt, slots); };
    for (std::size_t i = 0; i < model.param_count(); ++i) CHECK(rel_err(grad[i], central_difference(theta, i, f)) <= 1e-4);
  }
}

TEST_CASE("score function has zero mean under the policy") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto theta = model.init(3, 0.5);
  const auto prompt = model.prompt_tokens(spec());
  std::vector<double> total(model.param_count(), 0.0);
  double mass = 0.0;
  for (std::size_t r = 0; r < env.response_space_size(); ++r) {
    const auto slots = env.decode(r);
    const double p = std::exp(model.log_prob(theta, prompt, slots));
    mass += p;
    model.add_grad_log_prob(theta, prompt, slots, p, total);
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
  for (double g : total) CHECK(std::abs(g) <= 1e-12);
}

TEST_CASE("generator gradient ignores the verifier head and unused prompt rows") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto theta = model.init(2, 0.5);
  const auto prompt = model.prompt_tokens(spec());
  const auto grad = model.grad_log_prob(theta, prompt, env.decode(3));
  const auto& L = model.layout();
  for (std::size_t i = L.head; i < L.total; ++i) CHECK(grad[i] == 0.0);
  std::vector<bool> used(L.prompt_rows, false);
  for (auto row : prompt.rows) used[row] = true;
  for (std::size_t row = 0; row < L.prompt_rows; ++row)
    if (!used[row])
      for (std::size_t d = 0; d < L.dim; ++d) CHECK(grad[L.embedding + row * L.dim + d] == 0.0);
}

TEST_CASE("verification head") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto s = spec();
  const auto item = model.item_tokens(s, ChecklistItem{"i", "?", ItemSemantics::Faithful, {1}, Provenance::Derived});
  const auto prompt = model.prompt_tokens(s);
  const auto slots = env.decode(5);

  auto theta = model.init(4, 0.5);
  const auto& L = model.layout();
  std::fill(theta.begin() + static_cast<std::ptrdiff_t>(L.head), theta.end(), 0.0);
  CHECK(model.yes_prob(theta, prompt, slots, item) == 0.5);
  theta[L.head_bias] = 40.0;
  CHECK(model.yes_prob(theta, prompt, slots, item) > 1.0 - 1e-12);

  const auto random = model.init(6, 0.5);
  const auto grad = model.grad_yes_logit(random, prompt, slots, item);
  const auto f = [&](const std::vector<double>& t) { return model.yes_logit(t, prompt, slots, item); };
  for (std::size_t i = 0; i < model.param_count(); ++i) CHECK(rel_err(grad[i], central_difference(random, i, f)) <= 1e-4);
}

TEST_CASE("vote log-likelihood gradient") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto s = spec();
  const auto item = model.item_tokens(s, ChecklistItem{"i", "?", ItemSemantics::Faithful, {0}, Provenance::Derived});
  const auto prompt = model.prompt_tokens(s);
  const auto slots = env.decode(2);
  const auto theta = model.init(8, 0.5);
  for (bool decision : {false, true}) {
    std::vector<double> grad(model.param_count(), 0.0);
    model.add_grad_log_vote(theta, prompt, slots, item, decision, 1.0, grad);
    const auto f = [&](const std::vector<double>& t) {
      const double p = model.yes_prob(t, prompt, slots, item);
      return std::log(decision ? p : 1.0 - p);
    };
    for (std::size_t i = 0; i < model.param_count(); ++i) CHECK(rel_err(grad[i], central_difference(theta, i, f)) <= 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto env = small_env();
  const PolicyModel model(env, 4);
  const auto theta = model.init(12, 0.5);
  const auto path = std::filesystem::temp_directory_path() / "softcheck_policy_roundtrip.bin";
  save_checkpoint(path, model, theta);
  CHECK(load_checkpoint(path, model) == theta);
  const PolicyModel other(env, 5);
  CHECK_THROWS(load_checkpoint(path, other));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}
