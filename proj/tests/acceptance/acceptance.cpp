// Acceptance criteria: one PASS/FAIL line per criterion, non-zero exit on failure.

#include "support/instances.hpp"

#include "h2market/equilibrium.hpp"
#include "h2market/gas_dynamics.hpp"
#include "h2market/io.hpp"
#include "h2market/manufactured.hpp"
#include "h2market/oracles.hpp"
#include "h2market/power_grid.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace h2market;
using namespace h2market::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome mms_order() {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = convergence_study(manufactured_star_network(), {8, 16, 32}, 0.5);
  const double secs = seconds_since(start);
  double worst = INFINITY;
  std::string orders;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    worst = std::min(worst, rows[i].order);
    orders += fmt::format("{}{:.3f}", orders.empty() ? "" : ", ", rows[i].order);
  }
  return {worst >= 1.9 && secs < 60.0, fmt::format("orders [{}], {:.2f} s", orders, secs)};
}

Outcome trivial_instances() {
  // Zero data on the coupled network.
  const NetworkModel coupled = load("coupled_network.yaml");
  const SpatialMesh mesh(coupled, 16);
  const TimeGrid grid(3600.0, 12);
  const BoundaryData zero = BoundaryData::zeros(mesh.boundary_count(), grid.nodes());
  const GasState y0 = solve_pde(coupled, zero, Eigen::VectorXd::Zero(mesh.local_size()), mesh, grid);
  const double zero_err = y0.values.cwiseAbs().maxCoeff();

  // Constant state held by constant boundary data on a flat, single-pipe network.
  const NetworkModel steady = load("steady_network.yaml");
  const BoundaryFile file = load_boundary(data("steady_boundary.yaml"));
  const SpatialMesh smesh(steady, file.cells);
  const TimeGrid sgrid(file.horizon, file.steps);
  const BoundaryData bd = build_boundary_data(steady, smesh, sgrid, file);
  const Eigen::VectorXd init = file.initial.build(steady, smesh);
  const GasState y = solve_pde(steady, bd, init, smesh, sgrid, {}, file.theta);
  Eigen::MatrixXd expected(y.values.rows(), y.values.cols());
  for (int k = 0; k < sgrid.nodes(); ++k) expected.col(k) = init;
  const double scale = std::max(1.0, expected.cwiseAbs().maxCoeff());
  const double const_err = (y.values - expected).cwiseAbs().maxCoeff() / scale;
  return {zero_err <= 1e-12 && const_err <= 1e-12,
          fmt::format("zero instance |y| = {:.2e}, constant instance |y - y*|/|y*| = {:.2e}", zero_err, const_err)};
}

Outcome conservation() {
  const NetworkModel model = without_friction_terms(load("coupled_network.yaml"));
  const SpatialMesh mesh(model, 16);
  const TimeGrid grid(3600.0, 24);
  std::mt19937_64 rng(7);
  BoundaryData bd = smooth_boundary(mesh, grid, 5.0e6, 0.0, 2.0e5, 0.3, rng);
  for (int b = 0; b < mesh.boundary_count(); ++b) bd.flow(b, 0) = 0.0;
  const Eigen::VectorXd init = constant_state(mesh, 5.0e6, 0.0);
  const auto coeffs = compute_coefficients(model, mesh, grid);
  const GasState y = solve_pde(model, bd, init, mesh, grid);
  const ConservationReport c = check_conservation(y, mesh, coeffs, grid);
  const double zero_gamma = std::max(coeffs.sup_gamma(1), coeffs.sup_gamma(2));
  return {zero_gamma == 0.0 && c.max_mass_residual <= 1e-10 && c.max_junction_flow <= 1e-14,
          fmt::format("mass residual {:.2e} per step, junction flow {:.2e}", c.max_mass_residual,
                      c.max_junction_flow)};
}

Outcome coercivity() {
  double worst = INFINITY;
  int checked = 0;
  for (const auto& entry : fs::directory_iterator(data_dir())) {
    const std::string name = entry.path().filename().string();
    if (!name.ends_with("_network.yaml")) continue;
    const NetworkModel model = load_network(entry.path());
    if (model.pipes().empty() || !validate_network(model).ok()) continue;
    const SpatialMesh mesh(model, 8);
    const TimeGrid grid(3600.0, 6);
    const auto coeffs = compute_coefficients(model, mesh, grid);
    const CoercivityReport r = check_coercivity(mesh, coeffs, grid, 100, 0);
    worst = std::min(worst, r.worst_margin);
    ++checked;
  }
  return {checked > 0 && worst >= 0.0, fmt::format("{} networks, worst margin {:.3e}", checked, worst)};
}

Outcome linearity_and_apriori() {
  const NetworkModel model = load("coupled_network.yaml");
  const SpatialMesh mesh(model, 16);
  const TimeGrid grid(3600.0, 12);
  std::mt19937_64 rng(11);
  auto data_pair = [&](double p) {
    BoundaryData bd = smooth_boundary(mesh, grid, p, 0.0, 0.1 * p, 0.4, rng);
    for (int b = 0; b < mesh.boundary_count(); ++b) bd.flow(b, 0) = 0.0;
    return std::make_pair(bd, constant_state(mesh, p, 0.0));
  };
  const auto [bd1, y01] = data_pair(4.0e6);
  const auto [bd2, y02] = data_pair(6.0e6);
  const double a = 0.7, b = -1.3;
  BoundaryData mix = bd1;
  mix.pressure = a * bd1.pressure + b * bd2.pressure;
  mix.flow = a * bd1.flow + b * bd2.flow;
  const GasState s1 = solve_pde(model, bd1, y01, mesh, grid);
  const GasState s2 = solve_pde(model, bd2, y02, mesh, grid);
  const GasState sm = solve_pde(model, mix, a * y01 + b * y02, mesh, grid);
  const Eigen::MatrixXd combo = a * s1.values + b * s2.values;
  const double lin = (sm.values - combo).cwiseAbs().maxCoeff() / combo.cwiseAbs().maxCoeff();

  // Stability ratio R over three refinements of the verification star.
  const NetworkModel star = manufactured_star_network();
  const TimeGrid base(0.5, 1);
  std::vector<double> ratios;
  for (int cells : {8, 16, 32}) {
    const SpatialMesh m(star, cells);
    const double dt = 0.5 * m.max_spacing() * m.max_spacing();
    const TimeGrid g(0.5, static_cast<int>(std::ceil(0.5 / dt)));
    const auto coeffs = compute_coefficients(star, m, g);
    const ManufacturedSolution exact(star, coeffs);
    const BoundaryData bd = exact.boundary(m, g);
    const Eigen::VectorXd init = exact.nodal(m, 0.0);
    const GasState y = solve_pde(star, bd, init, m, g);
    ratios.push_back(check_apriori(y, init, bd, m, g).ratio);
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  const double spread = (*hi - *lo) / *lo;
  return {lin <= 1e-10 && spread <= 0.1,
          fmt::format("linearity {:.2e}, R = [{:.4f}, {:.4f}, {:.4f}] spread {:.2f}%", lin, ratios[0], ratios[1],
                      ratios[2], 100.0 * spread)};
}

/// Line flows B M θ with B̄ θ = n on the full susceptance Laplacian, slack angle fixed.
Eigen::VectorXd laplacian_flows(const GridModel& g, const Eigen::VectorXd& withdrawal) {
  const int n = static_cast<int>(g.node_ids.size());
  const Eigen::MatrixXd& m = g.incidence;
  const Eigen::MatrixXd lap = m.transpose() * g.susceptance.asDiagonal() * m;
  std::vector<int> keep;
  for (int v = 0; v < n; ++v) {
    if (v != g.slack_column) keep.push_back(v);
  }
  Eigen::MatrixXd reduced(keep.size(), keep.size());
  Eigen::VectorXd rhs(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    rhs(r) = withdrawal(keep[r]);
    for (std::size_t c = 0; c < keep.size(); ++c) reduced(r, c) = lap(keep[r], keep[c]);
  }
  const Eigen::VectorXd theta_r = reduced.ldlt().solve(rhs);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  for (std::size_t r = 0; r < keep.size(); ++r) theta(keep[r]) = theta_r(r);
  return g.susceptance.asDiagonal() * (m * theta);
}

Outcome ptdf() {
  const GridModel g = build_ptdf(tree_grid_network(3));
  std::vector<LineParams> lines = tree_grid_network(3).lines();
  for (auto& l : lines) l.susceptance *= 5.0;
  const NetworkModel base = tree_grid_network(3);
  const GridModel scaled = build_ptdf(NetworkModel(base.nodes(), lines, {}, base.constants(), base.slack()));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double tree = 0.0, lap = 0.0, scale = 0.0, shift = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd n(g.node_ids.size());
    for (auto& v : n) v = u(rng);
    n.array() -= n.mean();
    const Eigen::VectorXd f = line_flows(g, Eigen::MatrixXd(n)).flow.col(0);
    tree = std::max(tree, (f - tree_flow_oracle(g, n)).cwiseAbs().maxCoeff());
    lap = std::max(lap, (f - laplacian_flows(g, n)).cwiseAbs().maxCoeff());
    scale = std::max(scale, (f - line_flows(scaled, Eigen::MatrixXd(n)).flow.col(0)).cwiseAbs().maxCoeff());
    const Eigen::VectorXd moved = n.array() + u(rng);
    shift = std::max(shift, (f - line_flows(g, Eigen::MatrixXd(moved)).flow.col(0)).cwiseAbs().maxCoeff());
  }
  const double worst = std::max({tree, lap, scale, shift});
  return {worst <= 1e-12, fmt::format("subtree {:.1e}, laplacian {:.1e}, scaling {:.1e}, shift {:.1e}", tree, lap,
                                      scale, shift)};
}

Outcome cournot() {
  std::string detail;
  bool pass = true;
  for (const auto& [scenario, expected] :
       std::vector<std::pair<std::string, double>>{{"cournot_scenario.yaml", 3.0}, {"monopoly_scenario.yaml", 4.5}}) {
    const auto start = std::chrono::steady_clock::now();
    const EquilibriumReport rep = solve_gnep(shipped_plan("cournot_network.yaml", scenario));
    const double secs = seconds_since(start);
    double dev = 0.0;
    for (const auto& d : rep.decisions) dev = std::max(dev, (d.s.array() - expected).abs().maxCoeff());
    pass = pass && dev <= 1e-6 && rep.gap.total <= 1e-6 && secs < 30.0;
    detail += fmt::format("{}s = {:g}: dev {:.1e} gap {:.1e} {:.2f} s", detail.empty() ? "" : "; ", expected, dev,
                          rep.gap.total, secs);
  }
  return {pass, detail};
}

Outcome adjoint_gradient() {
  const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
  const double gamma = 1.0e3;
  const auto d = stressed_decisions(plan, 1);
  std::mt19937_64 rng(2);
  double worst = 0.0;
  int directions = 0;
  for (int agent = 0; agent < plan.agents(); ++agent) {
    const Eigen::VectorXd grad = penalized_gradient(agent, d, plan, gamma);
    for (int t = 0; t < 10; ++t, ++directions) {
      const Eigen::VectorXd v = free_direction(plan, agent, rng);
      const double h = 1e-6;
      auto dp = d, dm = d;
      dp[agent] = AgentDecision::unstack(plan.layout, d[agent].stacked() + h * v);
      dm[agent] = AgentDecision::unstack(plan.layout, d[agent].stacked() - h * v);
      const double fd =
          (penalized_objective(agent, dp, plan, gamma) - penalized_objective(agent, dm, plan, gamma)) / (2.0 * h);
      const double an = grad.dot(v);
      worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-300));
    }
  }
  const double pen = penalty_value(d, plan, gamma);
  return {pen > 0.0 && worst <= 1e-5,
          fmt::format("{} directions, worst relative error {:.2e}, penalty {:.3e}", directions, worst, pen)};
}

Outcome coupled_solve() {
  const auto start = std::chrono::steady_clock::now();
  const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
  const EquilibriumReport rep = solve_gnep(plan);
  const double secs = seconds_since(start);
  bool monotone = true;
  std::string path;
  for (std::size_t i = 0; i < rep.path.size(); ++i) {
    const double v = rep.path[i].state_violation + rep.path[i].transmission_violation;
    if (i > 0) {
      const double prev = rep.path[i - 1].state_violation + rep.path[i - 1].transmission_violation;
      monotone = monotone && v <= prev + 1e-8;
    }
    path += fmt::format("{}{:.2e}", path.empty() ? "" : " ", v);
  }
  const double final_violation = rep.feasibility.state_l2 + rep.feasibility.transmission_l2;
  return {monotone && final_violation <= 1e-3 && rep.gap.total <= 1e-4 && secs < 600.0,
          fmt::format("violation path [{}], final {:.2e}, gap {:.2e}, {:.2f} s", path, final_violation,
                      rep.gap.total, secs)};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt::format("h2market_acceptance_{}", ::getpid());
  const std::string net = data("coupled_network.yaml").string();
  const std::string scen = data("coupled_scenario.yaml").string();
  std::vector<fs::path> dirs = {root / "a", root / "b"};
  for (const auto& dir : dirs) {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    write_bundle(dir, solve_gnep(plan), plan, RunInfo{"solve", net, scen, 0, false});
  }
  int files = 0;
  bool same = true;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const fs::path other = dirs[1] / entry.path().filename();
    same = same && fs::exists(other) && read_file(entry.path()) == read_file(other);
    ++files;
  }
  fs::remove_all(root);
  return {same && files == 4, fmt::format("{} files compared", files)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"manufactured solution order >= 1.9 in under 60 s", mms_order},
      {"zero and constant instances reproduced to 1e-12", trivial_instances},
      {"mass balance per step and junction flow balance with zero friction terms", conservation},
      {"coercivity margins non-negative on shipped networks", coercivity},
      {"linearity to 1e-10 and a-priori ratio stable to 10%", linearity_and_apriori},
      {"PTDF matches tree and Laplacian oracles, invariances to 1e-12", ptdf},
      {"Cournot duopoly s = 3 and monopoly s = 4.5 to 1e-6", cournot},
      {"adjoint gradient matches finite differences to 1e-5", adjoint_gradient},
      {"coupled instance certified with monotone violation path", coupled_solve},
      {"seeded bundles are byte-identical", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failed += o.pass ? 0 : 1;
    fmt::print("criterion {:2d} {} {} ({})\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail);
  }
  return failed == 0 ? 0 : 1;
}
