#include "softcheck/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "softcheck/errors.hpp"
#include "softcheck/gibbs.hpp"
#include "softcheck/parallel.hpp"
#include "softcheck/rng.hpp"

namespace softcheck {

namespace fs = std::filesystem;

namespace {

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

NoiseParams read_noise(const Json& j, const std::string& where) {
  require_keys(j, {"p", "q", "p_item", "q_item"}, where);
  NoiseParams n = j.get<NoiseParams>();
  try {
    n.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigInvalid(where + ": " + e.what());
  }
  return n;
}

Json theory_to_json(const TheorySuiteConfig& t) {
  return Json{{"variance_points", t.variance_points}, {"theorem_points", t.theorem_points},
              {"variance_trials", t.variance_trials}, {"theorem_trials", t.theorem_trials},
              {"scan_cap", t.scan_cap},               {"sigma", t.sigma},
              {"seed", t.seed}};
}

Json partition_to_json(const PartitionCheckConfig& p) {
  return Json{{"instances", p.instances}, {"prompts", p.prompts},   {"responses", p.responses},
              {"K", p.K},                 {"dim", p.dim},           {"kl_temperature", p.kl_temperature},
              {"targets", p.targets},     {"step", p.step},         {"tolerance", p.tolerance}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw OutputUnwritable("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputUnwritable("cannot write " + path.string());
  out << text;
  if (!out) throw OutputUnwritable("write failed for " + path.string());
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::size_t needed(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

NamedCheck count_check(const std::string& name, std::size_t hits, std::size_t n, double fraction,
                       const std::string& what) {
  const std::size_t need = needed(fraction, n);
  return {name, hits >= need, std::to_string(hits) + "/" + std::to_string(n) + " seeds " + what + " (need " +
                                  std::to_string(need) + ")"};
}

constexpr const char* kRunMetrics[] = {"initial_strict",   "final_strict",        "initial_measured",
                                       "final_measured",   "final_soft",          "initial_failing_yes",
                                       "final_failing_yes"};

double digest_value(const RunDigest& d, std::string_view metric) {
  if (metric == "initial_strict") return d.initial_strict;
  if (metric == "final_strict") return d.final_strict;
  if (metric == "initial_measured") return d.initial_measured;
  if (metric == "final_measured") return d.final_measured;
  if (metric == "final_soft") return d.final_soft;
  if (metric == "initial_failing_yes") return d.initial_failing_yes;
  if (metric == "final_failing_yes") return d.final_failing_yes;
  throw InvalidArgument("unknown run metric " + std::string(metric));
}

/// One training run inside a scenario.
struct RunSpec {
  std::string cell;
  std::string arm;
  std::uint64_t seed = 0;
  TrainerConfig config;
  std::size_t warm = 0;  // index into the shared warm starts
};

fs::path run_dir(const RunSpec& r) {
  return fs::path("runs") / r.cell / r.arm / ("seed_" + std::to_string(r.seed));
}

/// Raw per-line values of an auxiliary JSONL table, summarised by field.
struct TableSpec {
  std::string cell;
  std::string file;
  std::string arm_field;  // empty: single arm "all"
  std::vector<std::string> metrics;
};

std::vector<SummaryRow> summarise_table(const fs::path& root, const TableSpec& t) {
  std::ifstream in(root / t.file);
  if (!in) throw OutputUnwritable("cannot read " + (root / t.file).string());
  std::map<std::string, std::map<std::string, std::vector<double>>> values;  // arm -> metric -> values
  std::vector<std::string> arm_order;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json row = Json::parse(line);
    const std::string arm = t.arm_field.empty() ? "all" : row.at(t.arm_field).get<std::string>();
    if (!values.count(arm)) arm_order.push_back(arm);
    for (const auto& m : t.metrics) {
      const auto& v = row.at(m);
      values[arm][m].push_back(v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>());
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& arm : arm_order)
    for (const auto& m : t.metrics) {
      const auto& v = values[arm][m];
      const auto [mean, se] = mean_se(v);
      out.push_back({t.cell, arm, m, mean, se, v.size()});
    }
  return out;
}

std::vector<SummaryRow> summarise_runs(const fs::path& root, const Json& runs) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<RunDigest>> groups;
  for (const auto& r : runs) {
    const auto key = std::make_pair(r.at("cell").get<std::string>(), r.at("arm").get<std::string>());
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(digest_metrics(root / r.at("metrics").get<std::string>()));
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order)
    for (const char* m : kRunMetrics) {
      std::vector<double> v;
      for (const auto& d : groups[key]) v.push_back(digest_value(d, m));
      const auto [mean, se] = mean_se(v);
      out.push_back({key.first, key.second, m, mean, se, v.size()});
    }
  return out;
}

std::vector<SummaryRow> summarise(const fs::path& root, const Json& index) {
  auto rows = summarise_runs(root, index.at("runs"));
  for (const auto& t : index.at("tables")) {
    TableSpec spec{t.at("cell").get<std::string>(), t.at("file").get<std::string>(),
                   t.at("arm_field").get<std::string>(), t.at("metrics").get<std::vector<std::string>>()};
    auto more = summarise_table(root, spec);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "cell,arm,metric,mean,se,n\n";
  for (const auto& r : rows)
    os << r.cell << ',' << r.arm << ',' << r.metric << ',' << fmt(r.mean) << ',' << fmt(r.se) << ',' << r.n << '\n';
  return os.str();
}

Json table_entry(const TableSpec& t) {
  return Json{{"cell", t.cell}, {"file", t.file}, {"arm_field", t.arm_field}, {"metrics", t.metrics}};
}

// ---------------------------------------------------------------------------
// Scenario bodies. Each fills the run list, auxiliary tables and checks.

struct Plan {
  std::vector<RunSpec> runs;
  std::vector<std::pair<TrainerConfig, std::uint64_t>> warm_starts;
};

std::vector<TrainResult> execute(const Plan& plan, const fs::path& out, Json& index) {
  const auto warm = parallel_map<WarmStart>(plan.warm_starts.size(), [&](std::size_t i) {
    return make_warm_start(plan.warm_starts[i].first, plan.warm_starts[i].second);
  });
  auto results = parallel_map<TrainResult>(plan.runs.size(), [&](std::size_t i) {
    const auto& r = plan.runs[i];
    return train(r.config, r.seed, &warm[r.warm]);
  });
  for (std::size_t i = 0; i < plan.runs.size(); ++i) {
    const auto& r = plan.runs[i];
    write_run(out / run_dir(r), r.config, r.seed, results[i]);
    index["runs"].push_back(Json{{"cell", r.cell},
                                 {"arm", r.arm},
                                 {"seed", r.seed},
                                 {"metrics", (run_dir(r) / "metrics.jsonl").generic_string()}});
  }
  return results;
}

/// Adds one run per seed for every arm, sharing the warm start of each seed.
void add_paired(Plan& plan, const ScenarioConfig& c, const std::string& cell,
                const std::vector<std::pair<std::string, TrainerConfig>>& arms) {
  for (auto seed : c.seeds) {
    plan.warm_starts.emplace_back(arms.front().second, seed);
    for (const auto& [name, cfg] : arms) plan.runs.push_back({cell, name, seed, cfg, plan.warm_starts.size() - 1});
  }
}

void theory_scenario(const ScenarioConfig& c, const fs::path& out, Json& index, ScenarioOutcome& outcome) {
  const auto result = run_theory_suite(c.theory);
  std::ostringstream csv;
  write_theory_csv(csv, result);
  write_text(out / "theory.csv", csv.str());
  std::string checks;
  for (const auto& check : result.checks) {
    outcome.checks.push_back({check.name, check.passed, check.detail});
    checks += Json{{"check", check.name}, {"passed", check.passed}, {"detail", check.detail}}.dump() + "\n";
  }
  write_text(out / "checks.jsonl", checks);
  index["tables"].push_back(table_entry({"theory", "checks.jsonl", "check", {"passed"}}));
}

void partition_scenario(const ScenarioConfig& c, const fs::path& out, Json& index, ScenarioOutcome& outcome) {
  const auto& p = c.partition;
  std::string lines;
  std::size_t agree = 0, total = 0;
  double worst = 0.0;
  for (auto seed : c.seeds) {
    const auto reports = parallel_map<PartitionCheckReport>(static_cast<std::size_t>(p.instances), [&](std::size_t i) {
      const auto key = derive_key(seed, {i});
      const auto model = GibbsToyModel::random(p.prompts, p.responses, p.K, p.dim, p.kl_temperature, key);
      Rng rng = Rng::keyed(key, {1});
      std::vector<double> w(p.dim);
      for (auto& v : w) v = rng.normal();
      std::vector<TargetPair> targets;
      for (std::size_t t = 0; t < p.targets; ++t) targets.push_back({rng.below(p.prompts), rng.below(p.responses)});
      return partition_gradient_check(model, w, targets, p.step, p.tolerance);
    });
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      agree += r.agrees ? 1 : 0;
      ++total;
      worst = std::max(worst, r.max_abs_diff);
      lines += Json{{"seed", seed}, {"instance", i}, {"max_abs_diff", r.max_abs_diff}, {"agrees", r.agrees}}.dump() + "\n";
    }
  }
  write_text(out / "partition.jsonl", lines);
  index["tables"].push_back(table_entry({"partition", "partition.jsonl", "", {"max_abs_diff", "agrees"}}));
  std::ostringstream detail;
  detail << agree << "/" << total << " instances agree, worst |diff| " << worst << " (tolerance " << p.tolerance << ")";
  outcome.checks.push_back({"two_term_gradient_matches_finite_difference", agree == total && total >= 10, detail.str()});
}

TrainerConfig naive_arm(TrainerConfig c) {
  c.mode = TrainMode::NaiveSelf;
  c.lambda_v = 0.0;
  c.lambda_p = 0.0;
  return c;
}

TrainerConfig sverl_arm(TrainerConfig c) {
  c.mode = TrainMode::Sverl;
  return c;
}

void collapse_checks(const ScenarioConfig& c, const std::vector<TrainResult>& results, ScenarioOutcome& outcome) {
  const std::size_t n = c.seeds.size();
  std::size_t collapse = 0, witness = 0, stable = 0;
  const std::size_t rows = results.front().steps.size();
  std::vector<double> naive_fy(rows, 0.0), sverl_fy(rows, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& naive = results[2 * s].steps;
    const auto& sverl = results[2 * s + 1].steps;
    const auto &n0 = naive.front().eval, &n1 = naive.back().eval, &v1 = sverl.back().eval;
    collapse += (n1.measured_reward > n0.measured_reward && n1.oracle_strict < n0.oracle_strict) ? 1 : 0;
    witness += n1.failing_yes_rate > n0.failing_yes_rate ? 1 : 0;
    stable += v1.oracle_strict >= n1.oracle_strict ? 1 : 0;
    for (std::size_t t = 0; t < rows; ++t) {
      naive_fy[t] += naive[t].eval.failing_yes_rate / static_cast<double>(n);
      sverl_fy[t] += sverl[t].eval.failing_yes_rate / static_cast<double>(n);
    }
  }
  outcome.checks.push_back(count_check("naive_reward_up_while_strict_success_down", collapse, n, c.pass_fraction,
                                       "with measured reward up and oracle strict success down"));
  outcome.checks.push_back(count_check("naive_failing_item_yes_rate_rises", witness, n, c.pass_fraction,
                                       "with a higher final yes-rate on failing items"));
  outcome.checks.push_back(count_check("sverl_strict_success_not_below_naive", stable, n, c.pass_fraction,
                                       "with sverl final strict success >= naive"));
  std::size_t bad = 0;
  double worst = -1.0;
  for (std::size_t t = static_cast<std::size_t>(std::max(0, c.warmup)); t < rows; ++t) {
    if (!(sverl_fy[t] < naive_fy[t])) ++bad;
    worst = std::max(worst, sverl_fy[t] - naive_fy[t]);
  }
  std::ostringstream detail;
  detail << bad << " logged steps after warmup with sverl mean failing-item yes-rate >= naive; largest sverl - naive "
         << worst;
  outcome.checks.push_back({"sverl_failing_item_yes_rate_below_naive_after_warmup", bad == 0, detail.str()});
}

void holistic_checks(const ScenarioConfig& c, const std::vector<TrainResult>& results, ScenarioOutcome& outcome) {
  const std::size_t n = c.seeds.size();
  std::size_t wins = 0;
  double gap_noisy = 0.0, gap_clean = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    auto final_strict = [&](std::size_t arm) { return results[4 * s + arm].steps.back().eval.oracle_strict; };
    const double noisy = final_strict(0) - final_strict(1);
    const double clean = final_strict(2) - final_strict(3);
    wins += noisy > 0.0 ? 1 : 0;
    gap_noisy += noisy / static_cast<double>(n);
    gap_clean += clean / static_cast<double>(n);
  }
  outcome.checks.push_back(count_check("checklist_beats_holistic_under_noisy_verifier", wins, n, c.pass_fraction,
                                       "with checklist final strict success above holistic"));
  std::ostringstream detail;
  detail << "mean checklist - holistic gap: noisy " << gap_noisy << ", near-oracle " << gap_clean;
  outcome.checks.push_back({"checklist_advantage_shrinks_with_cleaner_verifier", gap_clean < gap_noisy, detail.str()});
}

std::vector<std::string> split_dotted(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  return parts;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Theory: return "theory";
    case Scenario::PartitionCheck: return "partition-check";
    case Scenario::Train: return "train";
    case Scenario::CollapseDemo: return "collapse-demo";
    case Scenario::ChecklistVsHolistic: return "checklist-vs-holistic";
    case Scenario::AblationGrid: return "ablation-grid";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  for (auto s : {Scenario::Theory, Scenario::PartitionCheck, Scenario::Train, Scenario::CollapseDemo,
                 Scenario::ChecklistVsHolistic, Scenario::AblationGrid})
    if (name == to_string(s)) return s;
  if (name == "sweep") return Scenario::AblationGrid;
  throw ConfigInvalid("unknown scenario '" + std::string(name) + "'");
}

void ScenarioConfig::validate() const {
  if (seeds.empty()) throw ConfigInvalid("seed list is empty");
  if (!(pass_fraction > 0.0 && pass_fraction <= 1.0)) throw ConfigInvalid("pass_fraction must lie in (0,1]");
  if (warmup < 0) throw ConfigInvalid("warmup must be >= 0");
  if (max_cells < 1) throw ConfigInvalid("max_cells must be >= 1");
  if (!grid.is_object()) throw ConfigInvalid("grid must be an object");
  if (theory.variance_trials < 10000 || theory.theorem_trials < 10000)
    throw ConfigInvalid("theory trials must be >= 10000");
  if (partition.instances < 1 || partition.targets < 1) throw ConfigInvalid("partition check needs instances and targets");
  if (scenario == Scenario::CollapseDemo || scenario == Scenario::ChecklistVsHolistic) {
    if (trainer.steps < 1) throw ConfigInvalid("paired scenarios need at least one training step");
    if (warmup > trainer.steps) throw ConfigInvalid("warmup exceeds the step count");
  }
  trainer.validate();
}

void to_json(Json& j, const ScenarioConfig& c) {
  j = Json::object();
  j["scenario"] = std::string(to_string(c.scenario));
  j["seeds"] = c.seeds;
  if (c.out) j["out"] = *c.out;
  j["trainer"] = c.trainer;
  j["theory"] = theory_to_json(c.theory);
  j["partition"] = partition_to_json(c.partition);
  j["noisy_verifier"] = c.noisy_verifier;
  j["clean_verifier"] = c.clean_verifier;
  j["grid"] = c.grid;
  j["max_cells"] = c.max_cells;
  j["warmup"] = c.warmup;
  j["pass_fraction"] = c.pass_fraction;
}

void from_json(const Json& j, ScenarioConfig& c) {
  require_keys(j,
               {"scenario", "seeds", "out", "trainer", "theory", "partition", "noisy_verifier", "clean_verifier",
                "grid", "max_cells", "warmup", "pass_fraction"},
               "scenario config");
  c = ScenarioConfig{};
  try {
    if (!j.contains("scenario")) throw ConfigInvalid("scenario config needs a 'scenario' key");
    c.scenario = parse_scenario(j.at("scenario").get<std::string>());
    read(j, "seeds", c.seeds);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("trainer")) c.trainer = j.at("trainer").get<TrainerConfig>();
    if (j.contains("theory")) {
      const auto& t = j.at("theory");
      require_keys(t, {"variance_points", "theorem_points", "variance_trials", "theorem_trials", "scan_cap", "sigma", "seed"},
                   "theory");
      read(t, "variance_points", c.theory.variance_points);
      read(t, "theorem_points", c.theory.theorem_points);
      read(t, "variance_trials", c.theory.variance_trials);
      read(t, "theorem_trials", c.theory.theorem_trials);
      read(t, "scan_cap", c.theory.scan_cap);
      read(t, "sigma", c.theory.sigma);
      read(t, "seed", c.theory.seed);
    }
    if (j.contains("partition")) {
      const auto& p = j.at("partition");
      require_keys(p, {"instances", "prompts", "responses", "K", "dim", "kl_temperature", "targets", "step", "tolerance"},
                   "partition");
      read(p, "instances", c.partition.instances);
      read(p, "prompts", c.partition.prompts);
      read(p, "responses", c.partition.responses);
      read(p, "K", c.partition.K);
      read(p, "dim", c.partition.dim);
      read(p, "kl_temperature", c.partition.kl_temperature);
      read(p, "targets", c.partition.targets);
      read(p, "step", c.partition.step);
      read(p, "tolerance", c.partition.tolerance);
    }
    if (j.contains("noisy_verifier")) c.noisy_verifier = read_noise(j.at("noisy_verifier"), "noisy_verifier");
    if (j.contains("clean_verifier")) c.clean_verifier = read_noise(j.at("clean_verifier"), "clean_verifier");
    if (j.contains("grid")) c.grid = j.at("grid");
    read(j, "max_cells", c.max_cells);
    read(j, "warmup", c.warmup);
    read(j, "pass_fraction", c.pass_fraction);
  } catch (const ConfigInvalid&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("invalid scenario config: ") + e.what());
  }
  c.validate();
  if (c.scenario == Scenario::AblationGrid) expand_grid(c.trainer, c.grid, c.max_cells);
}

ScenarioConfig load_scenario_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigInvalid("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "scenario") return j.at("config").get<ScenarioConfig>();
    if (kind == "train") {
      ScenarioConfig c;
      c.scenario = Scenario::Train;
      c.trainer = j.at("config").get<TrainerConfig>();
      c.seeds = {j.at("seed").get<std::uint64_t>()};
      c.validate();
      return c;
    }
    throw ConfigInvalid("unknown manifest kind '" + kind + "'");
  }
  return j.get<ScenarioConfig>();
}

std::string scenario_hash(const ScenarioConfig& config) {
  Json j = config;
  j.erase("out");  // where a run is written does not change what it computes
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

bool ScenarioOutcome::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const NamedCheck& c) { return c.passed; });
}

const NamedCheck* ScenarioOutcome::first_failure() const {
  for (const auto& c : checks)
    if (!c.passed) return &c;
  return nullptr;
}

RunDigest digest_metrics(const fs::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw OutputUnwritable("cannot read " + jsonl.string());
  RunDigest d;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json row = Json::parse(line);
    const double strict = row.at("oracle_strict").get<double>();
    const double measured = row.at("measured_reward").get<double>();
    const double fy = row.at("failing_yes_rate").get<double>();
    if (first) {
      d.initial_strict = strict;
      d.initial_measured = measured;
      d.initial_failing_yes = fy;
      first = false;
    }
    d.final_strict = strict;
    d.final_measured = measured;
    d.final_soft = row.at("oracle_soft").get<double>();
    d.final_failing_yes = fy;
    d.failing_yes.push_back(fy);
  }
  if (first) throw InvalidArgument("metrics file " + jsonl.string() + " is empty");
  return d;
}

std::pair<double, double> mean_se(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

std::vector<std::pair<std::string, TrainerConfig>> expand_grid(const TrainerConfig& base, const Json& grid,
                                                               std::size_t max_cells) {
  if (!grid.is_object()) throw ConfigInvalid("grid must be an object");
  const Json declared = base;
  std::size_t cells = 1;
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ConfigInvalid("grid values for '" + key + "' must be a non-empty list");
    const Json* node = &declared;
    for (const auto& part : split_dotted(key)) {
      const bool optional_tau = node == &declared && part == "tau";
      if (!optional_tau && (!node->is_object() || !node->contains(part)))
        throw ConfigInvalid("grid key '" + key + "' is not a trainer config key");
      if (optional_tau) break;
      node = &node->at(part);
    }
    cells *= values.size();
    if (cells > max_cells)
      throw GridTooLarge("grid has more than " + std::to_string(max_cells) + " cells");
  }
  std::vector<std::pair<std::string, TrainerConfig>> out;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    Json j = declared;
    std::size_t rest = cell;
    std::string name;
    // Last key varies fastest.
    std::vector<std::pair<std::string, Json>> picks;
    std::vector<std::pair<std::string, const Json*>> keys;
    for (const auto& [key, values] : grid.items()) keys.emplace_back(key, &values);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) {
      const auto& values = *it->second;
      picks.emplace_back(it->first, values[rest % values.size()]);
      rest /= values.size();
    }
    std::reverse(picks.begin(), picks.end());
    for (const auto& [key, value] : picks) {
      Json* node = &j;
      const auto parts = split_dotted(key);
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      (*node)[parts.back()] = value;
      if (!name.empty()) name += "__";
      name += key + "=" + (value.is_string() ? value.get<std::string>() : value.dump());
    }
    if (name.empty()) name = "base";
    for (auto& ch : name)
      if (ch == '/' || ch == ',' || ch == ' ' || ch == '"') ch = '_';
    out.emplace_back(name, j.get<TrainerConfig>());
  }
  return out;
}

ScenarioOutcome run_scenario(const ScenarioConfig& config, const fs::path& out) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw OutputUnwritable("cannot create output directory " + out.string());

  ScenarioOutcome outcome;
  Json index{{"runs", Json::array()}, {"tables", Json::array()}};
  const auto& base = config.trainer;

  switch (config.scenario) {
    case Scenario::Theory:
      theory_scenario(config, out, index, outcome);
      break;
    case Scenario::PartitionCheck:
      partition_scenario(config, out, index, outcome);
      break;
    case Scenario::Train: {
      Plan plan;
      add_paired(plan, config, "main", {{std::string(to_string(base.mode)), base}});
      execute(plan, out, index);
      break;
    }
    case Scenario::CollapseDemo: {
      Plan plan;
      add_paired(plan, config, "main", {{"naive_self", naive_arm(base)}, {"sverl", sverl_arm(base)}});
      collapse_checks(config, execute(plan, out, index), outcome);
      break;
    }
    case Scenario::ChecklistVsHolistic: {
      std::vector<std::pair<std::string, TrainerConfig>> arms;
      for (const auto& [level, noise] : {std::pair{"noisy", config.noisy_verifier}, std::pair{"clean", config.clean_verifier}})
        for (auto mode : {RewardMode::Soft, RewardMode::Holistic}) {
          TrainerConfig c = base;
          c.mode = TrainMode::External;
          c.verifier.oracle = false;
          c.verifier.noise = noise;
          c.reward.mode = mode;
          arms.emplace_back(std::string(level) + "_" + (mode == RewardMode::Soft ? "checklist" : "holistic"), c);
        }
      Plan plan;
      add_paired(plan, config, "main", arms);
      holistic_checks(config, execute(plan, out, index), outcome);
      break;
    }
    case Scenario::AblationGrid: {
      Plan plan;
      for (const auto& [name, cell] : expand_grid(base, config.grid, config.max_cells))
        add_paired(plan, config, name, {{std::string(to_string(cell.mode)), cell}});
      execute(plan, out, index);
      break;
    }
  }

  outcome.summary = summarise(out, index);
  write_text(out / "summary.csv", summary_csv(outcome.summary));
  Json checks = Json::array();
  for (const auto& c : outcome.checks) checks.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  index["checks"] = checks;
  index["passed"] = outcome.passed();
  write_text(out / "summary.json", index.dump(2) + "\n");
  Json manifest{{"kind", "scenario"},
                {"scenario", std::string(to_string(config.scenario))},
                {"code_version", kCodeVersion},
                {"config_hash", scenario_hash(config)},
                {"config", config},
                {"summary", "summary.csv"}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

std::vector<SummaryRow> read_summary_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw OutputUnwritable("cannot read " + path.string());
  std::vector<SummaryRow> rows;
  std::string line;
  std::getline(in, line);
  if (line != "cell,arm,metric,mean,se,n") throw InvalidArgument("unexpected summary header in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string part;
    while (std::getline(ss, part, ',')) f.push_back(part);
    if (f.size() != 6) throw InvalidArgument("malformed summary row: " + line);
    rows.push_back({f[0], f[1], f[2], std::stod(f[3]), std::stod(f[4]), std::stoul(f[5])});
  }
  return rows;
}

ReportResult report(const fs::path& out) {
  std::ifstream in(out / "summary.json");
  if (!in) throw OutputUnwritable("no summary.json under " + out.string());
  const Json index = Json::parse(in);
  ReportResult r;
  r.recomputed = summarise(out, index);
  const auto stored = read_summary_csv(out / "summary.csv");
  r.matches = stored.size() == r.recomputed.size();
  for (std::size_t i = 0; r.matches && i < stored.size(); ++i) {
    const auto &a = stored[i], &b = r.recomputed[i];
    if (a.cell != b.cell || a.arm != b.arm || a.metric != b.metric || a.n != b.n) {
      r.matches = false;
      break;
    }
    r.max_abs_diff = std::max({r.max_abs_diff, std::abs(a.mean - b.mean), std::abs(a.se - b.se)});
  }
  r.matches = r.matches && r.max_abs_diff <= 1e-9;
  return r;
}

}  // namespace softcheck
