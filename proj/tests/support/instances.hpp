#pragma once

#include "h2market/equilibrium.hpp"
#include "h2market/io.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace h2market::testing {

inline std::filesystem::path data_dir() { return H2M_DATA_DIR; }
inline std::filesystem::path data(const std::string& name) { return data_dir() / name; }

inline NetworkModel load(const std::string& name) { return load_network(data(name)); }

/// Plan for a shipped network/scenario pair.
inline GamePlan shipped_plan(const std::string& network, const std::string& scenario) {
  return make_plan(build_plan_inputs(load(network), load_scenario(data(scenario))));
}

/// Same network with every pipe made flat and flow-free, so γ ≡ 0.
inline NetworkModel without_friction_terms(const NetworkModel& m) {
  std::vector<PipeParams> pipes = m.pipes();
  for (auto& p : pipes) {
    p.q_ref = ReferenceField{0.0, std::nullopt};
    p.slope = 0.0;
  }
  return NetworkModel(m.nodes(), m.lines(), pipes, m.constants(), m.slack());
}

/// Smooth boundary data b(t) = base + amp·sin(ω t + phase) per node and field,
/// with the t₀ values equal to `base` so a constant initial state is compatible.
inline BoundaryData smooth_boundary(const SpatialMesh& mesh, const TimeGrid& grid, double p_base, double q_base,
                                    double p_amp, double q_amp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  BoundaryData bd = BoundaryData::zeros(mesh.boundary_count(), grid.nodes());
  for (int b = 0; b < mesh.boundary_count(); ++b) {
    const double wp = u(rng) * 6.283185307179586 / grid.horizon();
    const double wq = u(rng) * 6.283185307179586 / grid.horizon();
    const double ap = p_amp * u(rng);
    const double aq = q_amp * u(rng);
    for (int k = 0; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      bd.pressure(b, k) = p_base + ap * std::sin(wp * t);
      bd.flow(b, k) = q_base + aq * std::sin(wq * t);
    }
  }
  return bd;
}

/// Constant initial state (p, q) on every pipe; with q ≠ 0 only valid on a single pipe.
inline Eigen::VectorXd constant_state(const SpatialMesh& mesh, double p, double q) {
  Eigen::VectorXd y(mesh.local_size());
  for (int e = 0; e < mesh.pipes(); ++e) {
    for (int j = 0; j <= mesh.cells(e); ++j) {
      y(mesh.p_index(e, j)) = p;
      y(mesh.q_index(e, j)) = q;
    }
  }
  return y;
}

/// Random decisions that push the state and lines out of bounds (t₀ values kept at their pins).
inline std::vector<AgentDecision> stressed_decisions(const GamePlan& plan, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto d = feasible_start(plan);
  for (int i = 0; i < plan.agents(); ++i) {
    Eigen::VectorXd x = d[i].stacked();
    const Eigen::VectorXd hi = plan.polytopes[i].upper();
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      if (std::isnan(plan.pins[i](j))) x(j) = hi(j) * (0.3 + 0.9 * u(rng));
    }
    d[i] = AgentDecision::unstack(plan.layout, x);
  }
  return d;
}

/// Random direction with zero entries on pinned t₀ variables, scaled per variable.
inline Eigen::VectorXd free_direction(const GamePlan& plan, int agent, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::VectorXd v(plan.layout.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    v(j) = std::isnan(plan.pins[agent](j)) ? n(rng) * plan.scale(j) : 0.0;
  }
  return v;
}

}  // namespace h2market::testing
