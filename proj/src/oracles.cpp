#include "h2market/oracles.hpp"

#include "h2market/manufactured.hpp"
#include "h2market/power_grid.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace h2market {

bool OracleResult::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.pass; });
}

const std::vector<std::string>& oracle_suites() {
  static const std::vector<std::string> names = {"ptdf-tree", "cournot", "manufactured", "coercivity"};
  return names;
}

double cournot_sales(int agents, double a, double b, double kappa) {
  return (a - kappa) / (b * (agents + 1));
}

PlanInputs cournot_inputs(int agents, double a, double b, double kappa, double horizon, int steps) {
  Node m;
  m.id = "m";
  m.role.electricity = true;
  m.role.generation = true;
  m.role.sale = true;
  m.g_max = 100.0;
  m.s_max = 100.0;
  PlanInputs in;
  in.model = NetworkModel({m}, {}, {}, GasConstants{});
  in.grid = TimeGrid(horizon, steps);
  in.agents = agents;
  in.demand.a = Eigen::MatrixXd::Constant(1, in.grid.nodes(), a);
  in.demand.b = Eigen::MatrixXd::Constant(1, in.grid.nodes(), b);
  for (int i = 0; i < agents; ++i) {
    in.costs.generation.push_back(Eigen::VectorXd::Constant(1, kappa));
    in.costs.conversion.emplace_back(0);
  }
  return in;
}

NetworkModel tree_grid_network(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> susceptance(0.5, 2.0);
  std::vector<Node> nodes;
  for (int v = 1; v <= 6; ++v) {
    Node n;
    n.id = fmt::format("n{}", v);
    n.role.electricity = true;
    n.role.sale = true;
    n.s_max = 1.0;
    nodes.push_back(n);
  }
  // Mixed orientations so the oracle sees lines pointing both ways from the slack.
  const std::vector<std::pair<int, int>> edges = {{1, 2}, {3, 1}, {2, 4}, {5, 2}, {3, 6}};
  std::vector<LineParams> lines;
  for (const auto& [a, b] : edges) {
    LineParams l;
    l.id = fmt::format("l{}{}", a, b);
    l.from = fmt::format("n{}", a);
    l.to = fmt::format("n{}", b);
    l.susceptance = susceptance(rng);
    l.capacity = 1.0;
    lines.push_back(l);
  }
  return NetworkModel(std::move(nodes), std::move(lines), {}, GasConstants{}, "n1");
}

namespace {

OracleCheck at_most(std::string name, double value, double limit, std::string detail = {}) {
  return {std::move(name), value, limit, value <= limit, std::move(detail)};
}

OracleCheck at_least(std::string name, double value, double limit, std::string detail = {}) {
  return {std::move(name), value, limit, value >= limit, std::move(detail)};
}

OracleResult ptdf_suite(std::uint64_t seed) {
  OracleResult r{"ptdf-tree", {}};
  const NetworkModel model = tree_grid_network(seed);
  const GridModel grid = build_ptdf(model);

  std::vector<LineParams> scaled_lines = model.lines();
  for (auto& l : scaled_lines) l.susceptance *= 3.7;
  const GridModel scaled =
      build_ptdf(NetworkModel(model.nodes(), scaled_lines, {}, model.constants(), model.slack()));

  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int nv = static_cast<int>(grid.nodes.size());
  double oracle = 0.0, scaling = 0.0, shift = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd n(nv);
    for (int v = 0; v < nv; ++v) n(v) = u(rng);
    n.array() -= n.mean();
    const Eigen::VectorXd flow = line_flows(grid, Eigen::MatrixXd(n)).flow.col(0);
    oracle = std::max(oracle, (flow - tree_flow_oracle(grid, n)).cwiseAbs().maxCoeff());
    scaling = std::max(scaling, (flow - line_flows(scaled, Eigen::MatrixXd(n)).flow.col(0)).cwiseAbs().maxCoeff());
    const Eigen::VectorXd shifted = n.array() + 0.75 * u(rng);
    shift = std::max(shift, (flow - line_flows(grid, Eigen::MatrixXd(shifted)).flow.col(0)).cwiseAbs().maxCoeff());
  }
  r.checks.push_back(at_most("tree flows vs subtree sums", oracle, 1e-12, "100 balanced injections, 6-node tree"));
  r.checks.push_back(at_most("susceptance scaling invariance", scaling, 1e-12, "all susceptances x3.7"));
  r.checks.push_back(at_most("injection shift invariance", shift, 1e-12, "constant added to every node"));
  const double slack_col = grid.ptdf.col(grid.slack_column).cwiseAbs().maxCoeff();
  r.checks.push_back(at_most("slack column is zero", slack_col, 0.0));
  return r;
}

OracleResult cournot_suite(std::uint64_t seed) {
  OracleResult r{"cournot", {}};
  for (int agents : {2, 1}) {
    PlanInputs in = cournot_inputs(agents, 10.0, 1.0, 1.0);
    in.config.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    const EquilibriumReport rep = solve_gnep(make_plan(in));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double expected = cournot_sales(agents, 10.0, 1.0, 1.0);
    double dev = 0.0;
    for (const auto& d : rep.decisions) dev = std::max(dev, (d.s.array() - expected).abs().maxCoeff());
    const std::string tag = agents == 1 ? "monopoly" : fmt::format("{} agents", agents);
    r.checks.push_back(at_most(fmt::format("{}: sales = {:g}", tag, expected), dev, 1e-6));
    r.checks.push_back(at_most(fmt::format("{}: Nikaido-Isoda gap", tag), rep.gap.total, 1e-6));
    r.checks.push_back(at_most(fmt::format("{}: solve time [s]", tag), secs, 30.0));
  }
  return r;
}

OracleResult manufactured_suite() {
  OracleResult r{"manufactured", {}};
  const auto start = std::chrono::steady_clock::now();
  const auto rows = convergence_study(manufactured_star_network(), {8, 16, 32}, 0.5);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    r.checks.push_back(at_least(fmt::format("order {} -> {} cells", rows[i - 1].cells, rows[i].cells), rows[i].order,
                                1.9, fmt::format("error {:.4e}", rows[i].error)));
  }
  r.checks.push_back(at_most("study time [s]", secs, 60.0));
  return r;
}

OracleResult coercivity_suite(const OracleOptions& options) {
  OracleResult r{"coercivity", {}};
  std::vector<std::pair<std::string, NetworkModel>> nets = {{"manufactured star", manufactured_star_network()}};
  for (std::size_t i = 0; i < options.networks.size(); ++i) {
    nets.emplace_back(fmt::format("network {}", i + 1), options.networks[i]);
  }
  for (const auto& [name, model] : nets) {
    if (model.pipes().empty()) continue;
    const SpatialMesh mesh(model, 8);
    const TimeGrid grid(1.0, 4);
    const auto coeffs = compute_coefficients(model, mesh, grid);
    const CoercivityReport c = check_coercivity(mesh, coeffs, grid, 100, options.seed);
    r.checks.push_back(at_least(fmt::format("{}: worst margin", name), c.worst_margin, 0.0,
                                fmt::format("beta {:.6g}, relative margin {:.3e}, {} samples", c.beta,
                                            c.worst_relative_margin, c.samples)));
  }
  return r;
}

}  // namespace

std::vector<OracleResult> run_oracle(const std::string& suite, const OracleOptions& options) {
  if (suite == "all") {
    std::vector<OracleResult> out;
    for (const auto& name : oracle_suites()) out.push_back(run_oracle(name, options).front());
    return out;
  }
  if (suite == "ptdf-tree") return {ptdf_suite(options.seed)};
  if (suite == "cournot") return {cournot_suite(options.seed)};
  if (suite == "manufactured") return {manufactured_suite()};
  if (suite == "coercivity") return {coercivity_suite(options)};
  throw InputError(fmt::format("unknown oracle suite '{}' (expected ptdf-tree, cournot, manufactured, coercivity or all)",
                               suite));
}

}  // namespace h2market
