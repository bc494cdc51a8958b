// Python surface for smoke tests and notebooks. Values cross as plain Python
// types; configs and specs cross as JSON strings.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "softcheck/constraints.hpp"
#include "softcheck/errors.hpp"
#include "softcheck/experiments.hpp"
#include "softcheck/reward.hpp"
#include "softcheck/theory.hpp"
#include "softcheck/trainer.hpp"
#include "softcheck/verifier.hpp"

namespace py = pybind11;
using namespace softcheck;

namespace {

NoiseParams noise(double p, double q, double p_item, double q_item) { return NoiseParams{p, q, p_item, q_item}; }

py::dict outcome_dict(const ScenarioOutcome& o) {
  py::list checks;
  for (const auto& c : o.checks) {
    py::dict d;
    d["name"] = c.name;
    d["passed"] = c.passed;
    d["detail"] = c.detail;
    checks.append(d);
  }
  py::dict out;
  out["passed"] = o.passed();
  out["checks"] = checks;
  return out;
}

}  // namespace

PYBIND11_MODULE(_softcheck, m) {
  m.doc() = "Checklist-based soft verification laboratory";

  m.def("soft_score", [](const std::vector<bool>& labels) {
    const auto s = soft_score(labels);
    return py::make_tuple(s.numerator(), s.denominator());
  }, py::arg("labels"));

  m.def("generator_reward", [](const std::vector<bool>& labels, double beta_pc) {
    return generator_reward(soft_score(labels), beta_pc);
  }, py::arg("labels"), py::arg("beta_pc") = 1.0);

  m.def("label_probability", &label_probability, py::arg("yes_prob"), py::arg("votes"), py::arg("tau"));

  m.def("bias", [](double p, double q, double p_item, double q_item, const std::vector<bool>& truth) {
    const auto b = analytic_bias(TheoryPoint::from_truth(noise(p, q, p_item, q_item), truth));
    return py::make_tuple(b.single, b.checklist);
  }, py::arg("p"), py::arg("q"), py::arg("p_item"), py::arg("q_item"), py::arg("truth"));

  m.def("variance", [](double p, double q, double p_item, double q_item, const std::vector<bool>& truth) {
    const auto v = analytic_variance(TheoryPoint::from_truth(noise(p, q, p_item, q_item), truth));
    return py::make_tuple(v.single, v.checklist, v.bound);
  }, py::arg("p"), py::arg("q"), py::arg("p_item"), py::arg("q_item"), py::arg("truth"));

  m.def("theorem_margin", [](double p, double q, double p_item, double q_item, const std::vector<bool>& truth) {
    const auto v = sufficient_condition(TheoryPoint::from_truth(noise(p, q, p_item, q_item), truth));
    return py::make_tuple(v.holds, v.margin);
  }, py::arg("p"), py::arg("q"), py::arg("p_item"), py::arg("q_item"), py::arg("truth"));

  m.def("correct_threshold", [](double p, double p_item) -> py::object {
    const auto t = k_thresholds(TheoryPoint::from_truth(noise(p, 0.5, p_item, 0.5), {true}));
    if (t.impossible) return py::none();
    return py::int_(*t.threshold_correct);
  }, py::arg("p"), py::arg("p_item"));

  m.def("grpo_advantages", [](const std::vector<double>& rewards, const std::string& baseline) {
    return grpo_advantages(rewards, parse_baseline_mode(baseline));
  }, py::arg("rewards"), py::arg("baseline") = "group_mean_std");

  m.def("replay_admit", [](std::int64_t num, std::int64_t den, double tau_plus, double tau_minus) {
    switch (replay_admit(Rational(num, den), tau_plus, tau_minus)) {
      case Admission::Positive: return std::string("positive");
      case Admission::Negative: return std::string("negative");
      default: return std::string("skip");
    }
  }, py::arg("num"), py::arg("den"), py::arg("tau_plus") = 0.75, py::arg("tau_minus") = 0.375);

  m.def("render", [](std::size_t index) {
    const Environment env;
    return env.render(env.decode(index));
  }, py::arg("index"));

  m.def("response_space_size", [] { return Environment{}.response_space_size(); });

  m.def("sample_spec", [](std::uint64_t seed) {
    const Environment env;
    return Json(sample_spec(FamilyConfig{}, env, seed)).dump();
  }, py::arg("seed"));

  m.def("constraint_bits", [](const std::string& spec_json, const std::string& text) {
    return constraint_bits(Json::parse(spec_json).get<ConstraintSpec>(), text);
  }, py::arg("spec_json"), py::arg("text"));

  m.def("run_scenario", [](const std::string& config_json, const std::string& out) {
    const auto config = Json::parse(config_json).get<ScenarioConfig>();
    ScenarioOutcome o;
    {
      py::gil_scoped_release release;
      o = run_scenario(config, out);
    }
    return outcome_dict(o);
  }, py::arg("config_json"), py::arg("out"));

  m.def("report_matches", [](const std::string& out) { return report(out).matches; }, py::arg("out"));

  py::register_exception<ConfigInvalid>(m, "ConfigInvalid", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<GridTooLarge>(m, "GridTooLarge", PyExc_ValueError);
}
