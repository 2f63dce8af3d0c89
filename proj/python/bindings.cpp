#include "h2market/equilibrium.hpp"
#include "h2market/io.hpp"
#include "h2market/manufactured.hpp"
#include "h2market/oracles.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace h2market;

namespace {

py::dict validate(const std::string& network, const std::optional<std::string>& scenario) {
  const NetworkModel model = load_network(network);
  const ValidationReport report = validate_network(model);
  py::list issues;
  for (const auto& i : report.issues) {
    issues.append(py::dict(py::arg("severity") = i.severity == ValidationIssue::Severity::error ? "error" : "warning",
                           py::arg("code") = i.code, py::arg("message") = i.message));
  }
  if (report.ok() && scenario) make_plan(build_plan_inputs(model, load_scenario(*scenario)));
  return py::dict(py::arg("ok") = report.ok(), py::arg("issues") = issues);
}

py::dict simulate(const std::string& network, const std::string& boundary) {
  const NetworkModel model = load_network(network);
  const BoundaryFile file = load_boundary(boundary);
  const SpatialMesh mesh(model, file.cells);
  const TimeGrid grid(file.horizon, file.steps);
  const BoundaryData bd = build_boundary_data(model, mesh, grid, file);
  const GasState y = solve_pde(model, bd, file.initial.build(model, mesh), mesh, grid, {}, file.theta);
  py::dict pipes;
  for (int e = 0; e < mesh.pipes(); ++e) {
    const int n = mesh.cells(e) + 1;
    Eigen::MatrixXd p(grid.nodes(), n), q(grid.nodes(), n);
    for (int k = 0; k < grid.nodes(); ++k) {
      for (int j = 0; j < n; ++j) {
        p(k, j) = y.p(mesh, e, j, k);
        q(k, j) = y.q(mesh, e, j, k);
      }
    }
    pipes[py::str(model.pipes()[e].id)] = py::dict(py::arg("p") = p, py::arg("q") = q);
  }
  Eigen::VectorXd t(grid.nodes());
  for (int k = 0; k < grid.nodes(); ++k) t(k) = grid.time(k);
  return py::dict(py::arg("t") = t, py::arg("pipes") = pipes);
}

py::dict solve(const std::string& network, const std::string& scenario, const std::optional<std::string>& method,
               std::uint64_t seed) {
  ScenarioFile sf = load_scenario(scenario);
  if (method) sf.solver.method = parse_method(*method);
  sf.solver.seed = seed;
  const GamePlan plan = make_plan(build_plan_inputs(load_network(network), sf));
  EquilibriumReport rep;
  {
    py::gil_scoped_release release;
    rep = solve_gnep(plan);
  }
  py::list decisions;
  for (const auto& d : rep.decisions) {
    decisions.append(py::dict(py::arg("g") = d.g, py::arg("s") = d.s, py::arg("c") = d.c, py::arg("p") = d.p));
  }
  return py::dict(py::arg("certified") = rep.certified, py::arg("stalled") = rep.stalled,
                  py::arg("gap") = rep.gap.total, py::arg("profits") = rep.profits,
                  py::arg("decisions") = decisions, py::arg("diagnostics") = rep.diagnostics,
                  py::arg("report") = report_json(rep, plan, RunInfo{"solve", network, scenario, seed, false}));
}

py::list oracle(const std::string& suite, std::uint64_t seed) {
  py::list out;
  for (const auto& r : run_oracle(suite, OracleOptions{seed, {}})) {
    py::list checks;
    for (const auto& c : r.checks) {
      checks.append(py::dict(py::arg("name") = c.name, py::arg("value") = c.value, py::arg("limit") = c.limit,
                             py::arg("pass") = c.pass, py::arg("detail") = c.detail));
    }
    out.append(py::dict(py::arg("suite") = r.suite, py::arg("pass") = r.pass(), py::arg("checks") = checks));
  }
  return out;
}

py::list convergence(const std::vector<int>& cells, double horizon) {
  py::list out;
  for (const auto& r : convergence_study(manufactured_star_network(), cells, horizon)) {
    out.append(py::dict(py::arg("cells") = r.cells, py::arg("h") = r.h, py::arg("dt") = r.dt,
                        py::arg("error") = r.error, py::arg("order") = r.order));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Coupled electricity and hydrogen market equilibria";
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  m.def("validate", &validate, py::arg("network"), py::arg("scenario") = py::none(),
        "Validate a network file and optionally build the plan for a scenario.");
  m.def("simulate", &simulate, py::arg("network"), py::arg("boundary"),
        "Run the gas transport model; returns times and per-pipe (time x node) p and q.");
  m.def("solve", &solve, py::arg("network"), py::arg("scenario"), py::arg("method") = py::none(),
        py::arg("seed") = 0, "Compute a penalized equilibrium.");
  m.def("oracle", &oracle, py::arg("suite"), py::arg("seed") = 0, "Run a reference suite or 'all'.");
  m.def("convergence_study", &convergence, py::arg("cells"), py::arg("horizon") = 0.5,
        "Manufactured-solution refinement study on the verification star.");
  m.def("emit_network", [](const std::string& path) { return emit_network(load_network(path)); },
        py::arg("network"), "Canonical YAML of a network file.");
  m.def("cournot_sales", &cournot_sales, py::arg("agents"), py::arg("a"), py::arg("b"), py::arg("kappa"));
}
