#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "softcheck/theory.hpp"
#include "softcheck/trainer.hpp"

namespace softcheck {

enum class Scenario { Theory, PartitionCheck, Train, CollapseDemo, ChecklistVsHolistic, AblationGrid };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

struct PartitionCheckConfig {
  int instances = 12;
  std::size_t prompts = 3;
  std::size_t responses = 8;
  int K = 3;
  std::size_t dim = 4;
  double kl_temperature = 0.7;
  std::size_t targets = 6;
  double step = 1e-6;
  double tolerance = 1e-6;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::Train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::optional<std::string> out;
  TrainerConfig trainer;
  TheorySuiteConfig theory;
  PartitionCheckConfig partition;
  NoiseParams noisy_verifier{0.477, 0.662, 0.873, 0.717};
  NoiseParams clean_verifier{0.98, 0.98, 0.98, 0.98};
  Json grid = Json::object();  // dotted trainer key -> list of values
  std::size_t max_cells = 64;
  int warmup = 15;             // steps excluded from the after-warmup comparisons
  double pass_fraction = 0.8;  // share of paired seeds a directional check needs

  void validate() const;
};

void to_json(Json& j, const ScenarioConfig& c);
/// Strict: unknown keys at any level raise ConfigInvalid.
void from_json(const Json& j, ScenarioConfig& c);

/// Reads a scenario config, or the config embedded in a run manifest.
ScenarioConfig load_scenario_config(const std::filesystem::path& path);
std::string scenario_hash(const ScenarioConfig& config);

struct NamedCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SummaryRow {
  std::string cell;
  std::string arm;
  std::string metric;
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

struct ScenarioOutcome {
  std::vector<NamedCheck> checks;
  std::vector<SummaryRow> summary;
  bool passed() const;
  const NamedCheck* first_failure() const;
};

/// Per-run metrics reduced from a metrics.jsonl file.
struct RunDigest {
  double initial_strict = 0.0, final_strict = 0.0;
  double initial_measured = 0.0, final_measured = 0.0;
  double final_soft = 0.0;
  double initial_failing_yes = 0.0, final_failing_yes = 0.0;
  std::vector<double> failing_yes;  // per logged step
};

RunDigest digest_metrics(const std::filesystem::path& jsonl);

/// Mean and standard error (sample standard deviation / sqrt n; 0 for n = 1).
std::pair<double, double> mean_se(const std::vector<double>& values);

/// Cartesian product of the grid applied to `base`; GridTooLarge past `max_cells`,
/// ConfigInvalid for keys the trainer config does not declare.
std::vector<std::pair<std::string, TrainerConfig>> expand_grid(const TrainerConfig& base, const Json& grid,
                                                               std::size_t max_cells);

/// Runs the scenario across its seed list and writes manifest.json,
/// summary.csv, summary.json and per-run artifacts under `out`.
ScenarioOutcome run_scenario(const ScenarioConfig& config, const std::filesystem::path& out);

struct ReportResult {
  std::vector<SummaryRow> recomputed;
  double max_abs_diff = 0.0;
  bool matches = false;
};

/// Recomputes the summary of a finished scenario from its raw metrics files
/// and compares it with summary.csv (tolerance 1e-9).
ReportResult report(const std::filesystem::path& out);

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

}  // namespace softcheck
