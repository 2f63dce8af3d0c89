// h2market command line: validate, simulate, solve, oracle.
//
// Exit codes: 0 ok, 1 invalid input, 2 solver did not certify / converge.
// Log level comes from H2MARKET_LOG_LEVEL (trace, debug, info, warn, error, off).

#include "h2market/io.hpp"
#include "h2market/manufactured.hpp"
#include "h2market/oracles.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>

using namespace h2market;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kNotConverged = 2;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("h2market");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("H2MARKET_LOG_LEVEL");
  auto level = spdlog::level::info;
  if (env && *env) {
    level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; treat that as a typo rather than silence.
    if (level == spdlog::level::off && std::string(env) != "off") {
      level = spdlog::level::info;
      spdlog::warn("unknown H2MARKET_LOG_LEVEL '{}', using info", env);
    }
  }
  spdlog::set_level(level);
}

struct ValidateArgs {
  std::string network;
  std::string scenario;
};

int cmd_validate(const ValidateArgs& a) {
  const NetworkModel model = load_network(a.network);
  const ValidationReport report = validate_network(model);
  std::cout << fmt::format("network {}: {} nodes, {} lines, {} pipes\n", a.network, model.nodes().size(),
                           model.lines().size(), model.pipes().size());
  std::cout << report.to_string();
  if (!report.ok()) {
    std::cout << "network: invalid\n";
    return kInvalid;
  }
  std::cout << "network: ok\n";
  if (a.scenario.empty()) return kOk;
  const ScenarioFile sc = load_scenario(a.scenario);
  const GamePlan plan = make_plan(build_plan_inputs(model, sc));
  std::cout << fmt::format("scenario {}: {} agents, {} scenarios, {} time steps, {} decision variables per agent\n",
                           a.scenario, plan.agents(), sc.scenarios.size(), plan.grid.steps(), plan.layout.size());
  std::cout << "scenario: ok\n";
  return kOk;
}

struct SimulateArgs {
  std::string network;
  std::string boundary;
  std::string out;
  std::optional<int> cells;
  std::optional<int> steps;
  std::optional<double> theta;
  int convergence = 0;
  double horizon = 0.5;
};

int cmd_simulate(const SimulateArgs& a) {
  const NetworkModel model = load_network(a.network);
  const ValidationReport report = validate_network(model);
  if (!report.ok()) {
    std::cerr << report.to_string();
    return kInvalid;
  }
  if (a.convergence > 0) {
    std::vector<int> cells;
    for (int i = 0, n = a.cells.value_or(8); i < a.convergence; ++i, n *= 2) cells.push_back(n);
    const auto rows = convergence_study(model, cells, a.horizon, 0.5, a.theta.value_or(1.0));
    std::cout << fmt::format("{:>6} {:>12} {:>12} {:>7} {:>14} {:>7}\n", "cells", "h", "dt", "steps", "L2 error",
                             "order");
    for (const auto& r : rows) {
      std::cout << fmt::format("{:>6} {:>12.5e} {:>12.5e} {:>7} {:>14.6e} {:>7}\n", r.cells, r.h, r.dt, r.steps,
                               r.error, r.order == 0.0 ? std::string("-") : fmt::format("{:.3f}", r.order));
    }
    return kOk;
  }
  if (a.boundary.empty()) throw InputError("simulate needs a boundary data file (or --convergence)");
  const BoundaryFile bf = load_boundary(a.boundary);
  const SpatialMesh mesh(model, a.cells.value_or(bf.cells));
  const TimeGrid grid(bf.horizon, a.steps.value_or(bf.steps));
  const double theta = a.theta.value_or(bf.theta);
  const BoundaryData bd = build_boundary_data(model, mesh, grid, bf);
  const Eigen::VectorXd y0 = bf.initial.build(model, mesh);
  const auto coeffs = compute_coefficients(model, mesh, grid);
  const GasSystem system(mesh, coeffs, grid, theta);
  SolveStats stats;
  const GasState y = system.solve(y0, bd, {}, &stats);
  const std::string csv = state_csv(y, model, mesh, grid);

  const ConservationReport cons = check_conservation(y, mesh, coeffs, grid, theta);
  const AprioriReport apr = check_apriori(y, y0, bd, mesh, grid);
  const std::string diag = fmt::format(
      "mass balance residual (max, relative): {:.3e}\n"
      "junction flow balance (max): {:.3e}\n"
      "junction pressure jump (max): {:.3e}\n"
      "a priori: |y|^2 = {:.6e}, |dy/dt|^2 = {:.6e}, data = {:.6e}, ratio = {:.6e}\n"
      "linear solve residual (max, relative): {:.3e}\n",
      cons.max_mass_residual, cons.max_junction_flow, cons.max_junction_pressure, apr.state_norm,
      apr.derivative_norm, apr.data_norm, apr.ratio, stats.max_relative_residual);
  if (a.out.empty()) {
    std::cout << csv;
    std::cerr << diag;
  } else {
    write_file(a.out, csv);
    std::cout << diag;
  }
  return kOk;
}

struct SolveArgs {
  std::string network;
  std::string scenario;
  std::string out;
  std::string method;
  std::string ladder;
  std::optional<double> tol;
  std::uint64_t seed = 0;
  bool record_wall_time = false;
  bool concurrent = false;
  bool randomize_order = false;
};

PenaltyConfig parse_ladder(const std::string& text, PenaltyConfig base) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(':', start);
    const std::string item = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError(fmt::format("--ladder: '{}' is not a number (expected GAMMA0:GAMMA_MAX[:FACTOR])", item));
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  if (parts.size() < 2 || parts.size() > 3) throw InputError("--ladder expects GAMMA0:GAMMA_MAX[:FACTOR]");
  base.gamma0 = parts[0];
  base.gamma_max = parts[1];
  if (parts.size() == 3) base.factor = parts[2];
  base.ladder();  // validates
  return base;
}

int cmd_solve(const SolveArgs& a) {
  const NetworkModel model = load_network(a.network);
  const ValidationReport report = validate_network(model);
  for (const auto& issue : report.issues) {
    if (issue.severity == ValidationIssue::Severity::warning) spdlog::warn("{}: {}", issue.code, issue.message);
  }
  if (!report.ok()) {
    std::cerr << report.to_string();
    return kInvalid;
  }
  ScenarioFile sc = load_scenario(a.scenario);
  PlanInputs in = build_plan_inputs(model, sc);
  if (!a.method.empty()) in.config.method = parse_method(a.method);
  if (!a.ladder.empty()) in.config.penalty = parse_ladder(a.ladder, in.config.penalty);
  if (a.tol) in.config.gap_tol = *a.tol;
  in.config.seed = a.seed;
  in.config.record_wall_time = a.record_wall_time;
  if (a.concurrent) in.config.concurrent = true;
  if (a.randomize_order) in.config.randomize_order = true;

  const GamePlan plan = make_plan(in);
  spdlog::info("solving: {} agents, {} variables each, method {}, ladder {:g} .. {:g}", plan.agents(),
               plan.layout.size(), method_name(plan.config.method), plan.config.penalty.gamma0,
               plan.config.penalty.gamma_max);
  const EquilibriumReport rep = solve_gnep(plan);
  for (const auto& p : rep.path) {
    spdlog::debug("gamma {:g}: {} iterations, residual {:.3e}, state violation {:.3e}, transmission violation {:.3e}",
                  p.gamma, p.iterations, p.residual, p.state_violation, p.transmission_violation);
  }
  spdlog::info("wall time {:.3f} s", rep.wall_time);

  // The output directory is left out so bundles written to different places compare equal.
  RunInfo info{"solve", a.network, a.scenario, a.seed, a.record_wall_time};
  if (!a.out.empty()) {
    write_bundle(a.out, rep, plan, info);
    spdlog::info("bundle written to {}", a.out);
  }
  std::cout << fmt::format("certified: {}\n", rep.certified ? "yes" : "no");
  std::cout << fmt::format("Nikaido-Isoda gap: {:.6e} (tolerance {:g})\n", rep.gap.total, plan.config.gap_tol);
  std::cout << fmt::format("state violation L2: {:.6e}, transmission violation L2: {:.6e}\n",
                           rep.feasibility.state_l2, rep.feasibility.transmission_l2);
  for (std::size_t i = 0; i < rep.profits.size(); ++i) {
    std::cout << fmt::format("agent {} profit: {:.10g}\n", i, rep.profits[i]);
  }
  for (const auto& d : rep.diagnostics) std::cout << "diagnostic: " << d << "\n";
  if (rep.stalled) std::cout << "penalty path stalled: the shared constraints look infeasible\n";
  return rep.certified ? kOk : kNotConverged;
}

struct OracleArgs {
  std::string suite;
  std::vector<std::string> networks;
  std::uint64_t seed = 0;
};

int cmd_oracle(const OracleArgs& a) {
  OracleOptions opts;
  opts.seed = a.seed;
  for (const auto& path : a.networks) opts.networks.push_back(load_network(path));
  bool all = true;
  for (const auto& r : run_oracle(a.suite, opts)) {
    std::cout << fmt::format("[{}] {}\n", r.suite, r.pass() ? "pass" : "FAIL");
    for (const auto& c : r.checks) {
      std::cout << fmt::format("  {:<4} {:<42} {:>12.4e}  limit {:<8g} {}\n", c.pass ? "ok" : "FAIL", c.name, c.value,
                               c.limit, c.detail);
    }
    all = all && r.pass();
  }
  return all ? kOk : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Coupled hydrogen/electricity Cournot market solver"};
  app.require_subcommand(1);

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Check a network file and optionally a scenario file");
  validate->add_option("network", va.network, "Network file")->required();
  validate->add_option("scenario", va.scenario, "Scenario file");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Run the gas transport model alone");
  simulate->add_option("network", sa.network, "Network file")->required();
  simulate->add_option("boundary", sa.boundary, "Boundary data file");
  simulate->add_option("--out", sa.out, "State CSV path (default: stdout)");
  simulate->add_option("--cells", sa.cells, "Cells per pipe")->check(CLI::PositiveNumber);
  simulate->add_option("--steps", sa.steps, "Time steps")->check(CLI::PositiveNumber);
  simulate->add_option("--theta", sa.theta, "Theta of the time scheme")->check(CLI::Range(0.5, 1.0));
  simulate->add_option("--convergence", sa.convergence, "Manufactured-solution study with N refinements")
      ->check(CLI::Range(2, 8));
  simulate->add_option("--horizon", sa.horizon, "Horizon of the convergence study")->check(CLI::PositiveNumber);

  SolveArgs so;
  auto* solve = app.add_subcommand("solve", "Compute a penalized market equilibrium");
  solve->add_option("network", so.network, "Network file")->required();
  solve->add_option("scenario", so.scenario, "Scenario file")->required();
  solve->add_option("--method", so.method, "Inner method")->check(CLI::IsMember({"gs", "jacobi", "eg"}));
  solve->add_option("--ladder", so.ladder, "Penalty ladder GAMMA0:GAMMA_MAX[:FACTOR]");
  solve->add_option("--tol", so.tol, "Nikaido-Isoda gap tolerance")->check(CLI::PositiveNumber);
  solve->add_option("--out", so.out, "Output directory for the result bundle");
  solve->add_option("--seed", so.seed, "Seed for every random choice");
  solve->add_flag("--record-wall-time", so.record_wall_time, "Store the wall time in report.json");
  solve->add_flag("--concurrent", so.concurrent, "Evaluate Jacobi best responses in parallel");
  solve->add_flag("--randomize-order", so.randomize_order, "Shuffle the Gauss-Seidel sweep order");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "Recompute reference values and compare");
  oracle->add_option("suite", oa.suite, "ptdf-tree, cournot, manufactured, coercivity or all")->required();
  oracle->add_option("--network", oa.networks, "Extra networks for the coercivity suite");
  oracle->add_option("--seed", oa.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*validate) return cmd_validate(va);
    if (*simulate) return cmd_simulate(sa);
    if (*solve) return cmd_solve(so);
    if (*oracle) return cmd_oracle(oa);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kNotConverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
