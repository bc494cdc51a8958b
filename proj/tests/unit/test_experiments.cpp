#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "softcheck/errors.hpp"
#include "softcheck/experiments.hpp"

using namespace softcheck;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ScenarioConfig small_train(Scenario scenario) {
  ScenarioConfig c;
  c.scenario = scenario;
  c.seeds = {1, 2};
  c.trainer.steps = 4;
  c.trainer.warm_start.steps = 30;
  c.trainer.eval_prompts = 6;
  c.trainer.gold_size = 32;
  c.trainer.dim = 8;
  c.trainer.environment.keywords = {"Paris", "river"};
  c.trainer.environment.max_bullets = 3;
  c.trainer.environment.pad_values = {0, 10};
  c.trainer.environment.word_thresholds = {5, 10, 15, 20, 25, 30, 35, 40};
  c.trainer.family.item_count_max = 3;
  c.trainer.family.min_words_hi = 25;
  c.trainer.family.max_words_lo = 15;
  c.trainer.family.max_words_hi = 40;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("softcheck_exp_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("mean and standard error") {
  auto [m, se] = mean_se({1.0, 2.0, 3.0, 4.0});
  CHECK(m == doctest::Approx(2.5));
  CHECK(se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  auto [m1, se1] = mean_se({0.7});
  CHECK(m1 == 0.7);
  CHECK(se1 == 0.0);
}

TEST_CASE("grid expansion") {
  const TrainerConfig base;
  Json grid = Json::parse(R"({"lambda_p": [0.1, 0.5], "warm_start.steps": [10, 20, 30]})");
  const auto cells = expand_grid(base, grid, 64);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0].first == "lambda_p=0.1__warm_start.steps=10");
  CHECK(cells[0].second.lambda_p == 0.1);
  CHECK(cells[5].second.warm_start.steps == 30);
  CHECK_THROWS_AS(expand_grid(base, grid, 5), GridTooLarge);
  CHECK_THROWS_AS(expand_grid(base, Json::parse(R"({"lambda_q": [1]})"), 64), ConfigInvalid);
  CHECK_THROWS_AS(expand_grid(base, Json::parse(R"({"warm_start.rate": [1]})"), 64), ConfigInvalid);
  CHECK(expand_grid(base, Json::parse(R"({"tau": [0.5]})"), 64)[0].second.tau == 0.5);
}

TEST_CASE("scenario config is strict") {
  ScenarioConfig c = small_train(Scenario::Train);
  Json j = c;
  ScenarioConfig back;
  from_json(j, back);
  CHECK(Json(back).dump() == j.dump());
  Json bad = j;
  bad["trainer"]["stepz"] = 1;
  CHECK_THROWS_AS(from_json(bad, back), ConfigInvalid);
  Json top = j;
  top["extra"] = true;
  CHECK_THROWS_AS(from_json(top, back), ConfigInvalid);
}

TEST_CASE("one-cell sweep matches a plain run") {
  auto train = small_train(Scenario::Train);
  auto sweep = small_train(Scenario::AblationGrid);
  sweep.grid = Json::parse(R"({"lambda_p": [0.5]})");
  const auto a = scratch("plain"), b = scratch("sweep");
  run_scenario(train, a);
  const auto outcome = run_scenario(sweep, b);
  for (std::uint64_t seed : train.seeds) {
    const auto tail = fs::path("sverl") / ("seed_" + std::to_string(seed)) / "metrics.jsonl";
    CHECK(slurp(a / "runs" / "main" / tail) == slurp(b / "runs" / "lambda_p=0.5" / tail));
  }
  const auto plain_rows = read_summary_csv(a / "summary.csv");
  REQUIRE(plain_rows.size() == outcome.summary.size());
  for (std::size_t i = 0; i < plain_rows.size(); ++i) {
    CHECK(plain_rows[i].metric == outcome.summary[i].metric);
    CHECK(plain_rows[i].mean == outcome.summary[i].mean);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("two-cell ablation gives one row set per cell, report and rerun agree") {
  auto sweep = small_train(Scenario::AblationGrid);
  sweep.grid = Json::parse(R"({"lambda_p": [0.1, 0.5]})");
  const auto out = scratch("ablation");
  const auto outcome = run_scenario(sweep, out);
  std::set<std::string> cells;
  for (const auto& row : outcome.summary)
    if (row.metric == "final_strict") cells.insert(row.cell);
  CHECK(cells == std::set<std::string>{"lambda_p=0.1", "lambda_p=0.5"});

  const auto rep = report(out);
  CHECK(rep.matches);
  CHECK(rep.max_abs_diff <= 1e-9);

  const auto again = scratch("ablation_again");
  run_scenario(load_scenario_config(out / "manifest.json"), again);
  const auto tail = fs::path("runs") / "lambda_p=0.1" / "sverl" / "seed_2" / "metrics.jsonl";
  CHECK(slurp(out / tail) == slurp(again / tail));
  CHECK(slurp(out / "summary.csv") == slurp(again / "summary.csv"));
  fs::remove_all(out);
  fs::remove_all(again);
}

TEST_CASE("report detects a tampered summary") {
  auto train = small_train(Scenario::Train);
  train.seeds = {3};
  const auto out = scratch("tamper");
  run_scenario(train, out);
  auto text = slurp(out / "summary.csv");
  const auto pos = text.find("final_strict,");
  REQUIRE(pos != std::string::npos);
  text.insert(pos + std::string("final_strict,").size(), "1");
  std::ofstream(out / "summary.csv", std::ios::binary) << text;
  CHECK_FALSE(report(out).matches);
  fs::remove_all(out);
}

TEST_CASE("manifest hash and config loading") {
  auto train = small_train(Scenario::Train);
  train.seeds = {4};
  const auto out = scratch("manifest");
  run_scenario(train, out);
  std::ifstream in(out / "manifest.json");
  const auto manifest = Json::parse(in);
  CHECK(manifest.at("config_hash") == scenario_hash(train));
  const auto run_manifest = out / "runs" / "main" / "sverl" / "seed_4" / "manifest.json";
  const auto from_run = load_scenario_config(run_manifest);
  CHECK(from_run.seeds == std::vector<std::uint64_t>{4});
  CHECK(Json(from_run.trainer).dump() == Json(train.trainer).dump());
  fs::remove_all(out);
}

TEST_CASE("partition-check scenario") {
  ScenarioConfig c;
  c.scenario = Scenario::PartitionCheck;
  c.seeds = {1};
  const auto out = scratch("partition");
  const auto outcome = run_scenario(c, out);
  CHECK(outcome.passed());
  CHECK(fs::exists(out / "partition.jsonl"));
  fs::remove_all(out);
}
