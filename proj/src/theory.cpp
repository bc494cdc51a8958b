#include "softcheck/theory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "softcheck/errors.hpp"
#include "softcheck/parallel.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace {

double ceil_threshold(double x) { return std::max(1.0, std::ceil(x - 1e-9)); }

double sq(double x) { return x * x; }

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population
  double m4 = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) m.mean += x;
  m.mean /= n;
  for (double x : xs) {
    const double d2 = sq(x - m.mean);
    m.var += d2;
    m.m4 += d2 * d2;
  }
  m.var /= n;
  m.m4 /= n;
  return m;
}

Estimate mean_estimate(const Moments& m, std::size_t n) { return {m.mean, std::sqrt(m.var / static_cast<double>(n))}; }

Estimate var_estimate(const Moments& m, std::size_t n) {
  return {m.var, std::sqrt(std::max(0.0, m.m4 - m.var * m.var) / static_cast<double>(n))};
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

}  // namespace

TheoryPoint TheoryPoint::from_truth(const NoiseParams& noise, std::vector<bool> truth) {
  TheoryPoint pt;
  pt.noise = noise;
  pt.K = static_cast<int>(truth.size());
  std::int64_t ones = 0;
  for (bool b : truth) ones += b ? 1 : 0;
  pt.strict = ones == pt.K;
  pt.gap = pt.strict ? Rational(0) : Rational(ones, std::max<std::int64_t>(1, pt.K));
  pt.truth = std::move(truth);
  pt.validate();
  return pt;
}

TheoryPoint TheoryPoint::from_gap(const NoiseParams& noise, int K, bool strict, Rational gap) {
  TheoryPoint pt;
  pt.noise = noise;
  pt.K = K;
  pt.strict = strict;
  pt.gap = gap;
  pt.validate();
  return pt;
}

void TheoryPoint::validate() const {
  noise.validate();
  if (K < 1) throw InvalidArgument("theory point needs K >= 1");
  if (gap < Rational(0) || gap > Rational(1)) throw InvalidArgument("relaxation gap must lie in [0,1]");
  if (strict && gap != Rational(0)) throw InvalidArgument("relaxation gap must be 0 when S* = 1");
  if (!strict && gap == Rational(1)) throw InvalidArgument("all items satisfied implies S* = 1");
  if (truth) {
    if (truth->size() != static_cast<std::size_t>(K)) throw InvalidArgument("truth vector length differs from K");
    std::int64_t ones = 0;
    for (bool b : *truth) ones += b ? 1 : 0;
    if ((ones == K) != strict) throw InvalidArgument("truth vector inconsistent with S*");
    if (!strict && Rational(ones, K) != gap) throw InvalidArgument("truth vector inconsistent with the gap");
  }
}

std::vector<bool> TheoryPoint::item_truth() const {
  if (truth) return *truth;
  if (strict) return std::vector<bool>(static_cast<std::size_t>(K), true);
  const Rational ones = gap * Rational(K);
  if (ones.denominator() != 1) throw InvalidArgument("gap * K is not an integer; pass an explicit truth vector");
  std::vector<bool> out(static_cast<std::size_t>(K), false);
  for (std::int64_t k = 0; k < ones.numerator(); ++k) out[static_cast<std::size_t>(k)] = true;
  return out;
}

EstimatorSample estimator_sample(std::span<const double> score, double baseline, double strict_reward,
                                 double single_reward, double checklist_reward) {
  EstimatorSample e;
  e.score.assign(score.begin(), score.end());
  e.baseline = baseline;
  for (double s : score) {
    e.g_star.push_back((strict_reward - baseline) * s);
    e.g_single.push_back((single_reward - baseline) * s);
    e.g_chk.push_back((checklist_reward - baseline) * s);
  }
  return e;
}

BiasPair analytic_bias(const TheoryPoint& point) {
  point.validate();
  const auto& n = point.noise;
  const double s = point.strict ? 1.0 : 0.0;
  const double d = to_double(point.gap);
  return {(1.0 - n.q) + (n.alpha() - 1.0) * s, (1.0 - n.q_item) + n.alpha_item() * d + (n.alpha_item() - 1.0) * s};
}

VariancePair analytic_variance(const TheoryPoint& point, const CorrelationModel& correlation) {
  point.validate();
  correlation.validate();
  if (!correlation.independent())
    throw CorrelatedFormUnavailable("closed-form variance needs conditionally independent item votes");
  const auto& n = point.noise;
  const double mu_single = (1.0 - n.q) + n.alpha() * (point.strict ? 1.0 : 0.0);
  double total = 0.0;
  for (bool y : point.item_truth()) {
    const double mu = (1.0 - n.q_item) + n.alpha_item() * (y ? 1.0 : 0.0);
    total += mu * (1.0 - mu);
  }
  VariancePair v;
  v.single = mu_single * (1.0 - mu_single);
  v.checklist = total / sq(static_cast<double>(point.K));
  v.bound = 1.0 / (4.0 * point.K);
  v.within_bound = v.checklist <= v.bound;
  return v;
}

MsePair analytic_mse(const TheoryPoint& point, const CorrelationModel& correlation) {
  const auto b = analytic_bias(point);
  const auto v = analytic_variance(point, correlation);
  return {sq(b.single) + v.single, sq(b.checklist) + v.checklist};
}

TheoremVerdict sufficient_condition(const TheoryPoint& point) {
  point.validate();
  const auto& n = point.noise;
  TheoremVerdict v;
  if (point.strict) {
    v.branch = Branch::Correct;
    v.margin = n.p_item - n.p;
  } else {
    v.branch = Branch::Incorrect;
    const double a = 1.0 - n.q_item + n.alpha_item() * to_double(point.gap);
    v.margin = (1.0 - n.q) - (sq(a) + 1.0 / (4.0 * point.K));
  }
  v.holds = v.margin >= 0.0;
  return v;
}

double correct_branch_mse(double p_item, std::int64_t K) {
  if (K < 1) throw InvalidArgument("K must be >= 1");
  return sq(1.0 - p_item) + p_item * (1.0 - p_item) / static_cast<double>(K);
}

KThresholds k_thresholds(const TheoryPoint& point) {
  point.validate();
  const auto& n = point.noise;
  KThresholds t;

  const double denom = (1.0 - n.p) - sq(1.0 - n.p_item);
  if (denom > 0.0) t.threshold_correct = static_cast<std::int64_t>(ceil_threshold(n.p_item * (1.0 - n.p_item) / denom));
  else t.impossible = true;

  const double a = 1.0 - n.q_item + n.alpha_item() * to_double(point.gap);
  t.bias_condition = a <= 1.0 - n.q;
  if (t.bias_condition) {
    const double spread = a * (1.0 - a);
    // Degenerate A in {0,1}: every vote is deterministic, so K = 1 already suffices.
    t.threshold_incorrect = spread > 0.0 ? static_cast<std::int64_t>(ceil_threshold(1.0 / (4.0 * spread))) : 1;
  }
  t.impossible_incorrect = sq(a) > 1.0 - n.q;

  if (n.q > 0.0 && n.q < 1.0)
    t.a_implies_b_threshold = static_cast<std::int64_t>(ceil_threshold(1.0 / (4.0 * (1.0 - n.q) * n.q)));
  return t;
}

std::vector<double> softmax_score(std::span<const double> logits, std::size_t action) {
  if (logits.empty() || action >= logits.size()) throw InvalidArgument("action outside the softmax support");
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> pi(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += pi[i] = std::exp(logits[i] - hi);
  for (auto& v : pi) v = -v / z;
  pi[action] += 1.0;
  return pi;
}

MonteCarloReport monte_carlo_gradient_mse(const TheoryPoint& point, std::span<const double> score,
                                          const MonteCarloConfig& config) {
  point.validate();
  config.correlation.validate();
  if (score.empty()) throw InvalidArgument("score vector is empty");
  if (config.trials < 10000) throw InvalidArgument("Monte Carlo needs at least 1e4 trials");

  const auto& n = point.noise;
  const auto truth = point.item_truth();
  const std::size_t K = truth.size();
  const double S = point.strict ? 1.0 : 0.0;
  const double b = config.baseline;
  const double lenient = config.correlation.lenient_prob;
  const double mu_single = (1.0 - n.q) + n.alpha() * S;
  std::vector<double> mu(K);
  for (std::size_t k = 0; k < K; ++k) mu[k] = (1.0 - n.q_item) + n.alpha_item() * (truth[k] ? 1.0 : 0.0);

  MonteCarloReport r;
  for (double s : score) r.score_norm2 += s * s;
  r.g_star_norm2 = sq(S - b) * r.score_norm2;
  r.bias = analytic_bias(point);

  const std::size_t N = config.trials;
  std::vector<double> js(N), jc(N), es(N), ec(N), ed(N);
  Rng rng = Rng::keyed(config.seed, {0x7e0});
  for (std::size_t t = 0; t < N; ++t) {
    const double j_single = rng.bernoulli(mu_single) ? 1.0 : 0.0;
    double yes = 0.0;
    if (lenient > 0.0 && rng.uniform() < lenient) {
      yes = static_cast<double>(K);
    } else {
      for (std::size_t k = 0; k < K; ++k) yes += rng.bernoulli(mu[k]) ? 1.0 : 0.0;
    }
    const double j_chk = yes / static_cast<double>(K);
    double e_single = 0.0, e_chk = 0.0;
    for (double s : score) {
      const double g_star = (S - b) * s;
      e_single += sq((j_single - b) * s - g_star);
      e_chk += sq((j_chk - b) * s - g_star);
    }
    js[t] = j_single;
    jc[t] = j_chk;
    es[t] = e_single;
    ec[t] = e_chk;
    ed[t] = e_chk - e_single;
  }

  const auto ms = moments(js), mc = moments(jc), mes = moments(es), mec = moments(ec), med = moments(ed);
  r.mean_single = mean_estimate(ms, N);
  r.var_single = var_estimate(ms, N);
  r.mean_chk = mean_estimate(mc, N);
  r.var_chk = var_estimate(mc, N);
  r.mse_single = mean_estimate(mes, N);
  r.mse_chk = mean_estimate(mec, N);
  r.mse_diff = mean_estimate(med, N);

  if (config.correlation.independent()) {
    r.variance = analytic_variance(point);
    r.mse = analytic_mse(point);
    double mean_mu = 0.0;
    for (double m : mu) mean_mu += m;
    mean_mu /= static_cast<double>(K);
    // A standard error of zero happens when no trial hit a rare outcome; the
    // 1/N floor keeps the z-score finite without hiding real disagreement.
    const double floor = 1.0 / static_cast<double>(N);
    auto z = [&](const Estimate& e, double closed, double scale) {
      return std::abs(e.value - closed) / std::max(e.se, floor * scale);
    };
    const double sn = r.score_norm2;
    r.max_sigma = std::max({z(r.mean_single, mu_single, 1.0), z(r.var_single, r.variance->single, 1.0),
                            z(r.mean_chk, mean_mu, 1.0), z(r.var_chk, r.variance->checklist, 1.0),
                            z(r.mse_single, r.mse->single * sn, sn), z(r.mse_chk, r.mse->checklist * sn, sn)});
    r.agrees = r.max_sigma <= 4.0;
  }
  return r;
}

std::vector<TheoryPoint> independence_grid(std::size_t count, std::uint64_t seed) {
  static constexpr int kSizes[] = {1, 2, 4, 8, 16};
  std::vector<TheoryPoint> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::keyed(seed, {0x671d, i});
    NoiseParams n;
    n.p = 0.5 + 0.5 * rng.uniform();
    n.q = 0.5 + 0.5 * rng.uniform();
    n.p_item = 0.5 + 0.5 * rng.uniform();
    n.q_item = 0.5 + 0.5 * rng.uniform();
    const int K = kSizes[rng.below(5)];
    if (rng.uniform() < 0.25) {
      out.push_back(TheoryPoint::from_gap(n, K, true, Rational(0)));
    } else {
      const auto m = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(K)));
      out.push_back(TheoryPoint::from_gap(n, K, false, Rational(m, K)));
    }
  }
  return out;
}

bool TheorySuiteResult::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const TheoryCheck& c) { return c.passed; });
}

namespace {

std::vector<double> toy_score(std::uint64_t seed, std::size_t index) {
  Rng rng = Rng::keyed(seed, {0x5c0e, index});
  std::vector<double> logits(4);
  for (auto& l : logits) l = rng.normal();
  return softmax_score(logits, rng.below(logits.size()));
}

TheoryRow make_row(const std::string& grid, std::size_t index, const TheoryPoint& pt, std::size_t trials,
                   std::uint64_t seed) {
  TheoryRow row;
  row.grid = grid;
  row.index = index;
  row.point = pt;
  row.bias = analytic_bias(pt);
  row.variance = analytic_variance(pt);
  row.mse = analytic_mse(pt);
  row.theorem = sufficient_condition(pt);
  const auto score = toy_score(seed, index);
  MonteCarloConfig mc;
  mc.trials = trials;
  mc.seed = derive_key(seed, {fnv1a64(grid), index});
  row.mc = monte_carlo_gradient_mse(pt, score, mc);
  return row;
}

void add(std::vector<TheoryCheck>& checks, std::string name, bool ok, std::string detail) {
  checks.push_back({std::move(name), ok, std::move(detail)});
}

}  // namespace

TheorySuiteResult run_theory_suite(const TheorySuiteConfig& config) {
  if (config.scan_cap < 1) throw InvalidArgument("scan cap must be >= 1");
  TheorySuiteResult result;
  auto& checks = result.checks;

  // Closed forms against Monte Carlo on the variance grid.
  const auto vgrid = independence_grid(config.variance_points, config.seed);
  auto vrows = parallel_map<TheoryRow>(vgrid.size(), [&](std::size_t i) {
    return make_row("variance", i, vgrid[i], config.variance_trials, config.seed);
  });
  {
    std::size_t bad_mc = 0, bad_bound = 0, bad_decomp = 0;
    double worst = 0.0, worst_decomp = 0.0;
    for (const auto& row : vrows) {
      worst = std::max(worst, row.mc.max_sigma);
      bad_mc += row.mc.max_sigma <= config.sigma ? 0 : 1;
      bad_bound += row.variance.within_bound ? 0 : 1;
      // Empirical MSE per unit score equals squared empirical bias plus the
      // population variance of the same samples.
      const double S = row.point.strict ? 1.0 : 0.0;
      const double sn = row.mc.score_norm2;
      const double d1 = std::abs(row.mc.mse_single.value / sn - (sq(row.mc.mean_single.value - S) + row.mc.var_single.value));
      const double d2 = std::abs(row.mc.mse_chk.value / sn - (sq(row.mc.mean_chk.value - S) + row.mc.var_chk.value));
      const double d3 = std::abs(row.mse.single - (sq(row.bias.single) + row.variance.single));
      const double d4 = std::abs(row.mse.checklist - (sq(row.bias.checklist) + row.variance.checklist));
      const double d = std::max({d1, d2, d3, d4});
      worst_decomp = std::max(worst_decomp, d);
      bad_decomp += d <= 1e-9 ? 0 : 1;
    }
    add(checks, "closed_forms_match_monte_carlo", bad_mc == 0,
        std::to_string(vrows.size()) + " points, worst " + fmt(worst) + " sigma");
    add(checks, "variance_within_quarter_k_bound", bad_bound == 0, std::to_string(bad_bound) + " violations");
    add(checks, "mse_equals_bias_squared_plus_variance", bad_decomp == 0, "worst residual " + fmt(worst_decomp));
  }

  // Lenient-mode correlation adds nonnegative covariance: Monte Carlo var_chk
  // is never below the independent closed form at the same per-item marginals.
  {
    std::size_t bad = 0, checked = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(vgrid.size(), 40); ++i) {
      for (double lenient : {0.1, 0.3}) {
        const auto& pt = vgrid[i];
        MonteCarloConfig mc;
        mc.trials = config.theorem_trials;
        mc.correlation.lenient_prob = lenient;
        mc.seed = derive_key(config.seed, {0xc0a, i, static_cast<std::uint64_t>(lenient * 10)});
        const auto rep = monte_carlo_gradient_mse(pt, toy_score(config.seed, i), mc);
        double indep = 0.0;
        for (bool y : pt.item_truth()) {
          const double mu = (1.0 - pt.noise.q_item) + pt.noise.alpha_item() * (y ? 1.0 : 0.0);
          const double marginal = lenient + (1.0 - lenient) * mu;
          indep += marginal * (1.0 - marginal);
        }
        indep /= sq(static_cast<double>(pt.K));
        bad += rep.var_chk.value >= indep - config.sigma * rep.var_chk.se - 1e-12 ? 0 : 1;
        ++checked;
      }
    }
    add(checks, "lenient_correlation_never_lowers_variance", bad == 0,
        std::to_string(checked) + " points, " + std::to_string(bad) + " violations");
  }

  // Theorem soundness on the larger grid.
  const auto tgrid = independence_grid(config.theorem_points, derive_key(config.seed, {0x7e0e}));
  auto trows = parallel_map<TheoryRow>(tgrid.size(), [&](std::size_t i) {
    return make_row("theorem", i, tgrid[i], config.theorem_trials, config.seed);
  });
  {
    std::size_t holds = 0, bad = 0;
    for (const auto& row : trows) {
      if (!row.theorem.holds) continue;
      ++holds;
      bad += row.mc.mse_diff.value <= config.sigma * row.mc.mse_diff.se ? 0 : 1;
    }
    add(checks, "theorem_condition_implies_lower_mse", bad == 0,
        std::to_string(holds) + " points satisfy the condition, " + std::to_string(bad) + " violations");
  }

  // Corollary soundness on the same grid.
  {
    std::size_t bad = 0, finite = 0, impossible = 0;
    for (const auto& row : trows) {
      const auto& n = row.point.noise;
      const auto kt = k_thresholds(row.point);
      if (kt.threshold_correct) {
        ++finite;
        const auto k0 = *kt.threshold_correct;
        if (correct_branch_mse(n.p_item, k0) > (1.0 - n.p) + 1e-12) ++bad;
        if (k0 > 1 && correct_branch_mse(n.p_item, k0 - 1) <= (1.0 - n.p) - 1e-9) ++bad;
      }
      if (kt.impossible) {
        ++impossible;
        for (std::int64_t k = 1; k <= config.scan_cap; ++k)
          if (correct_branch_mse(n.p_item, k) <= 1.0 - n.p) {
            ++bad;
            break;
          }
      }
      const double a = 1.0 - n.q_item + n.alpha_item() * to_double(row.point.gap);
      if (kt.threshold_incorrect && a > 0.0 && a < 1.0) {
        ++finite;
        if (sq(a) + 1.0 / (4.0 * static_cast<double>(*kt.threshold_incorrect)) > (1.0 - n.q) + 1e-12) ++bad;
      }
      if (kt.bias_condition && kt.a_implies_b_threshold && row.point.K >= *kt.a_implies_b_threshold &&
          !row.point.strict && !row.theorem.holds)
        ++bad;
    }
    add(checks, "corollary_thresholds_sound", bad == 0,
        std::to_string(finite) + " finite thresholds, " + std::to_string(impossible) + " impossible, " +
            std::to_string(bad) + " violations");
  }

  result.rows = std::move(vrows);
  result.rows.insert(result.rows.end(), std::make_move_iterator(trows.begin()), std::make_move_iterator(trows.end()));
  return result;
}

void write_theory_csv(std::ostream& out, const TheorySuiteResult& result) {
  out << "grid,index,p,q,p_item,q_item,alpha,alpha_item,K,strict,gap,bias_single,bias_chk,var_single,var_chk,"
         "var_bound,mse_single,mse_chk,mc_mean_single,mc_var_single,mc_mean_chk,mc_var_chk,score_norm2,"
         "mc_mse_single,mc_mse_chk,mc_mse_diff,mc_mse_diff_se,max_sigma,mc_agrees,theorem_holds,theorem_branch,"
         "theorem_margin\n";
  out << std::setprecision(10);
  for (const auto& r : result.rows) {
    const auto& n = r.point.noise;
    out << r.grid << ',' << r.index << ',' << n.p << ',' << n.q << ',' << n.p_item << ',' << n.q_item << ','
        << n.alpha() << ',' << n.alpha_item() << ',' << r.point.K << ',' << (r.point.strict ? 1 : 0) << ','
        << to_string(r.point.gap) << ',' << r.bias.single << ',' << r.bias.checklist << ',' << r.variance.single
        << ',' << r.variance.checklist << ',' << r.variance.bound << ',' << r.mse.single << ',' << r.mse.checklist
        << ',' << r.mc.mean_single.value << ',' << r.mc.var_single.value << ',' << r.mc.mean_chk.value << ','
        << r.mc.var_chk.value << ',' << r.mc.score_norm2 << ',' << r.mc.mse_single.value << ','
        << r.mc.mse_chk.value << ',' << r.mc.mse_diff.value << ',' << r.mc.mse_diff.se << ',' << r.mc.max_sigma
        << ',' << (r.mc.agrees ? 1 : 0) << ',' << (r.theorem.holds ? 1 : 0) << ','
        << (r.theorem.branch == Branch::Correct ? "correct" : "incorrect") << ',' << r.theorem.margin << '\n';
  }
}

}  // namespace softcheck
