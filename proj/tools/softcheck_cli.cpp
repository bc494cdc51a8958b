// Command-line entry point: one subcommand per scenario plus `report`.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "softcheck/errors.hpp"
#include "softcheck/experiments.hpp"

namespace fs = std::filesystem;
using namespace softcheck;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitConfig = 2;
constexpr int kExitAssertion = 3;
constexpr int kExitRuntime = 1;

struct ScenarioArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

fs::path output_root(const ScenarioArgs& args, const ScenarioConfig& config) {
  if (!args.out.empty()) return args.out;
  if (config.out) return *config.out;
  const char* env = std::getenv("SOFTCHECK_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("softcheck_out");
  return root / std::string(to_string(config.scenario));
}

int run(Scenario scenario, const ScenarioArgs& args) {
  ScenarioConfig config;
  if (!args.config.empty()) {
    config = load_scenario_config(args.config);
    if (config.scenario != scenario)
      throw ConfigInvalid("config is for scenario '" + std::string(to_string(config.scenario)) + "', not '" +
                          std::string(to_string(scenario)) + "'");
  } else {
    config.scenario = scenario;
  }
  if (!args.seeds.empty()) config.seeds = args.seeds;
  config.validate();

  const fs::path out = output_root(args, config);
  std::cout << "scenario " << to_string(scenario) << " -> " << out.string() << "\n";
  const auto outcome = run_scenario(config, out);
  for (const auto& row : outcome.summary)
    if (row.metric == "final_strict" || row.metric == "final_measured" || row.metric == "max_abs_diff")
      std::cout << "  " << row.cell << " " << row.arm << " " << row.metric << " = " << std::setprecision(4) << row.mean
                << " +/- " << row.se << " (n=" << row.n << ")\n";
  for (const auto& check : outcome.checks)
    std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << "\n";
  if (const auto* failed = outcome.first_failure()) {
    std::cerr << "assertion failed: " << failed->name << "\n";
    return kExitAssertion;
  }
  return kExitPass;
}

int run_report(const std::string& dir) {
  const auto result = report(dir);
  std::cout << "cell,arm,metric,mean,se,n\n";
  for (const auto& r : result.recomputed)
    std::cout << r.cell << ',' << r.arm << ',' << r.metric << ',' << std::setprecision(10) << r.mean << ',' << r.se
              << ',' << r.n << '\n';
  std::cout << (result.matches ? "summary matches raw metrics" : "summary does NOT match raw metrics")
            << " (max |diff| " << result.max_abs_diff << ")\n";
  return result.matches ? kExitPass : kExitAssertion;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softcheck: checklist-based soft verification laboratory"};
  app.require_subcommand(1);

  struct Entry {
    Scenario scenario;
    const char* name;
    const char* help;
  };
  const Entry entries[] = {
      {Scenario::Theory, "theory", "Closed-form bias/variance/MSE checks against Monte Carlo"},
      {Scenario::PartitionCheck, "partition-check", "Two-term partition gradient against finite differences"},
      {Scenario::Train, "train", "Train one configuration over the seed list"},
      {Scenario::CollapseDemo, "collapse-demo", "Naive self-verification against the stabilized trainer"},
      {Scenario::ChecklistVsHolistic, "checklist-vs-holistic", "Checklist and holistic rewards at two noise levels"},
      {Scenario::AblationGrid, "sweep", "Cartesian sweep over trainer keys (ablation grid)"},
  };
  std::vector<ScenarioArgs> args(std::size(entries));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(entries); ++i) {
    auto* sub = app.add_subcommand(entries[i].name, entries[i].help);
    sub->add_option("-c,--config", args[i].config, "Scenario config or run manifest (JSON)");
    sub->add_option("-s,--seed", args[i].seeds, "Seed(s); replaces the config's seed list");
    sub->add_option("-o,--out", args[i].out, "Output directory (default $SOFTCHECK_OUT/<scenario>)");
    subs.push_back(sub);
  }
  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Recompute a finished run's summary from its raw metrics");
  rep->add_option("dir", report_dir, "Scenario output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  try {
    if (rep->parsed()) return run_report(report_dir);
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (subs[i]->parsed()) return run(entries[i].scenario, args[i]);
  } catch (const ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GridTooLarge& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const AssertionFailed& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kExitAssertion;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
