// Thin binding layer. JSON documents cross the boundary as strings; the
// Python package converts them to and from dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pdistill/errors.hpp"
#include "pdistill/harness.hpp"
#include "pdistill/verify.hpp"

namespace py = pybind11;
using namespace pdistill;
using nlohmann::json;

namespace {

py::tuple row_tuple(const EvalRow& r) {
  return py::make_tuple(r.mdp_seed, r.run_seed, r.method, r.step, r.ret_student, r.ret_teacher_ref,
                        r.xent_student, r.xent_teacher, r.xent_uniform);
}

std::string sweep_csv(const std::string& config, int parallelism) {
  const ExperimentConfig c = parse_config(json::parse(config));
  SweepResult result;
  {
    py::gil_scoped_release release;
    result = run_sweep(c, parallelism);
  }
  for (const auto& run : result.runs)
    if (run.error) throw std::runtime_error(run.method + ": " + *run.error);
  return format_csv(result.rows());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tabular policy distillation workbench";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidParams>(m, "InvalidParams", PyExc_ValueError);
  py::register_exception<DegenerateCurve>(m, "DegenerateCurve", PyExc_ValueError);
  py::register_exception<InsufficientRuns>(m, "InsufficientRuns", PyExc_ValueError);

  m.def("preset_names", &preset_names);
  m.def("csv_header", [] { return std::string(kCsvHeader); });

  m.def(
      "generate_world_json",
      [](std::uint64_t seed, int width, int height, double eta, double p_term) {
        return to_json(generate_random_mdp(seed, {}, width, height, eta, p_term)).dump();
      },
      py::arg("seed"), py::arg("width") = 20, py::arg("height") = 20, py::arg("eta") = 0.1,
      py::arg("p_term") = 0.01);
  m.def(
      "world_ascii", [](const std::string& doc) { return to_ascii(grid_world_from_json(json::parse(doc))); },
      py::arg("world_json"));
  m.def(
      "world_solvable", [](const std::string& doc) { return path_exists(grid_world_from_json(json::parse(doc))); },
      py::arg("world_json"));

  m.def(
      "normalize_config", [](const std::string& doc) { return config_to_json(parse_config(json::parse(doc))).dump(); },
      py::arg("config_json"));
  m.def("sweep_csv", &sweep_csv, py::arg("config_json"), py::arg("parallelism") = 1);
  m.def(
      "parse_csv",
      [](const std::string& text) {
        py::list out;
        for (const auto& r : parse_csv(text)) out.append(row_tuple(r));
        return out;
      },
      py::arg("text"));
  m.def(
      "summarize_csv", [](const std::string& text) { return summarize(parse_csv(text)).dump(); },
      py::arg("text"));
  m.def("area_speedup", &area_speedup, py::arg("steps"), py::arg("a"), py::arg("b"));

  m.def(
      "verify_report_json",
      [](std::uint64_t seed, int random_thetas, long ode_steps) {
        VerifyOptions o;
        o.seed = seed;
        o.random_thetas = random_thetas;
        o.ode_steps = ode_steps;
        py::gil_scoped_release release;
        return verify_report(o).dump();
      },
      py::arg("seed") = 0, py::arg("random_thetas") = 10, py::arg("ode_steps") = 100000);
  m.def("first_integral", &first_integral, py::arg("x"), py::arg("y"));
  m.def(
      "counterexample_field",
      [](double x, double y) {
        Vector t(2);
        t << x, y;
        const Vector g = counterexample_closed_form(t);
        return std::pair<double, double>(g[0], g[1]);
      },
      py::arg("x"), py::arg("y"));
  m.def(
      "cross_entropy_minimizer",
      [](const std::vector<double>& p, bool teacher_given_student) {
        return cross_entropy_minimizer(
            p, teacher_given_student ? XentDirection::TeacherGivenStudent : XentDirection::StudentGivenTeacher);
      },
      py::arg("p"), py::arg("teacher_given_student") = true);
  m.def(
      "softmax", [](const std::vector<double>& logits) { return softmax(logits); }, py::arg("logits"));
}
