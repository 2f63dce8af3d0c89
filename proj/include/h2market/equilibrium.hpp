#pragma once

#include "h2market/common.hpp"
#include "h2market/gas_dynamics.hpp"
#include "h2market/market.hpp"
#include "h2market/network.hpp"
#include "h2market/power_grid.hpp"
#include "h2market/projection.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace h2market {

enum class InnerMethod { gauss_seidel, jacobi, extragradient };

/// "gs", "jacobi" or "eg".
std::string method_name(InnerMethod m);
InnerMethod parse_method(const std::string& name);

/// Penalty ladder γ₀, 10γ₀, …, γ_max with per-rung tolerances.
struct PenaltyConfig {
  double gamma0 = 1.0;
  double gamma_max = 1e6;
  double factor = 10.0;
  double rung_tol = 1e-4;
  double final_tol = 1e-6;

  /// Throws InputError unless γ₀ > 0, factor > 1 and γ_max ≥ γ₀.
  std::vector<double> ladder() const;
  bool operator==(const PenaltyConfig&) const = default;
};

struct SolverConfig {
  PenaltyConfig penalty;
  InnerMethod method = InnerMethod::gauss_seidel;
  double br_tol = 1e-9;        // scaled projected step of a best response at termination
  int br_max_iter = 20000;
  int max_sweeps = 2000;       // outer iterations per rung (GS/Jacobi)
  int anderson = 5;            // history length of the outer acceleration, 0 disables it
  int eg_max_iter = 200000;
  double tikhonov = 1e-8;
  double gap_tol = 1e-6;
  double violation_target = 1e-3;  // state and transmission violation L² for certification
  double residual_tol = 1e-8;      // balance, boxes and net injection
  bool randomize_order = false;
  bool concurrent = false;
  std::uint64_t seed = 0;
  TimeQuadrature quadrature = TimeQuadrature::trapezoid;
  double theta = 1.0;
  int cells = 8;
  bool record_wall_time = false;

  bool operator==(const SolverConfig&) const = default;
};

/// Linear pressure and flow profile along one pipe.
struct PipeProfile {
  double p_start = 0.0;
  double p_end = 0.0;
  double q_start = 0.0;
  double q_end = 0.0;
  bool operator==(const PipeProfile&) const = default;
};

/// Initial gas state: one constant pair for all pipes, optionally overridden per pipe.
struct InitialStateSpec {
  double pressure = 0.0;
  double flow = 0.0;
  std::map<std::string, PipeProfile> pipes;

  Eigen::VectorXd build(const NetworkModel& model, const SpatialMesh& mesh) const;
  bool operator==(const InitialStateSpec&) const = default;
};

struct PlanInputs {
  NetworkModel model;
  TimeGrid grid;
  DemandCurve demand;
  CostTable costs;
  int agents = 1;
  InitialStateSpec initial;
  std::vector<AgentBounds> bounds;  // empty: node bounds for every agent
  SolverConfig config;
  bool double_sided = false;
};

/// State response to a unit boundary value (𝔭 or 𝔮 of one boundary node at
/// one time node), zero initial state. With time-independent coefficients one
/// response per node and field suffices (later nodes are time shifts).
struct BoundaryResponse {
  bool shift_invariant = true;
  int time_nodes = 0;
  std::vector<Eigen::MatrixXd> columns;

  bool empty() const { return columns.empty(); }
  /// Response matrix for (boundary b, field f, time node k) and the column
  /// offset to apply: state(:, k') = R(:, k' − offset) for k' ≥ k.
  const Eigen::MatrixXd& response(int b, int field, int k, int& offset) const;
};

/// Everything the solver needs, validated and precomputed. Immutable once built,
/// so it may be shared across threads.
struct GamePlan {
  NetworkModel model;
  TimeGrid grid;
  SpatialMesh mesh;
  MarketLayout layout;
  GridModel grid_model;
  DemandCurve demand;
  CostTable costs;
  ConversionMap conversion;
  StateBounds state_bounds;
  Eigen::VectorXd y0;
  std::vector<AgentBounds> bounds;
  SolverConfig config;
  std::shared_ptr<const GasSystem> gas;  // null when the network has no pipes
  std::shared_ptr<const BoundaryResponse> response;  // null when too large to store

  std::vector<AgentPolytope> polytopes;
  std::vector<int> boundary_map;     // layout boundary row -> mesh boundary index
  std::vector<double> boundary_sign; // outward normal n at each layout boundary row
  std::vector<ConversionTerm> conversion_terms;
  std::vector<WithdrawalTerm> withdrawal_terms;
  Eigen::VectorXd scale;        // σ per stacked variable
  Eigen::VectorXd time_weight;  // trapezoid weight per stacked variable
  Eigen::VectorXd tikhonov_mask;  // 1 on g, s, c and 0 on p̂
  std::vector<Eigen::VectorXd> pins;  // NaN where free
  double gradient_scale = 1.0;

  int agents() const { return static_cast<int>(bounds.size()); }
};

GamePlan make_plan(const PlanInputs& in);

/// Aggregate boundary data: 𝔭 = Σᵢ p̂ᵢ and 𝔮 = −n·Σᵢ (signed inflow of agent i).
BoundaryData aggregate_boundary(const std::vector<AgentDecision>& decisions, const GamePlan& plan);

/// Gas state induced by the decisions (empty when there are no pipes).
GasState induced_state(const std::vector<AgentDecision>& decisions, const GamePlan& plan);

/// −profit_i + (γ/2)‖state violation‖²_{L²} + (γ/2)‖transmission violation‖²_{L²}.
double penalized_objective(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                           double gamma);
/// Gradient of penalized_objective with respect to agent i's stacked decision.
Eigen::VectorXd penalized_gradient(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                                   double gamma);
/// The shared penalty term alone.
double penalty_value(const std::vector<AgentDecision>& decisions, const GamePlan& plan, double gamma);

struct BestResponse {
  AgentDecision decision;
  double value = 0.0;          // penalized objective including the selection term
  double stationarity = 0.0;   // max |P(x − D⁻¹∇f) − x| / σ in the curvature metric D
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Projected gradient (Barzilai–Borwein step, Armijo backtracking) on the
/// agent's polytope, started from the agent's current decision. The metric is
/// the diagonal curvature of the penalized objective at the start point.
BestResponse best_response(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                           double gamma);

/// Ψ(u, v) = Σᵢ f̃ᵢ(uᵢ, u₋ᵢ) − f̃ᵢ(vᵢ, u₋ᵢ).
double nikaido_isoda(const std::vector<AgentDecision>& u, const std::vector<AgentDecision>& v,
                     const GamePlan& plan, double gamma);

struct GapReport {
  double total = 0.0;
  std::vector<double> terms;
  std::vector<AgentDecision> responses;
};

/// sup_v Ψ(u, v) estimated with one best response per agent.
GapReport ni_gap(const std::vector<AgentDecision>& decisions, const GamePlan& plan, double gamma);

struct FeasibilityReport {
  double box = 0.0;            // max violation of 0 ≤ x ≤ max
  double pin = 0.0;            // max deviation from the t₀ compatibility values
  double balance = 0.0;        // ∞-norm over agents and time nodes
  double min_margin = 0.0;     // min over lines and time of θ − flow
  double transmission_l2 = 0.0;
  double state_l2 = 0.0;
  double state_l2_pressure = 0.0;
  double state_l2_flow = 0.0;
  double state_max = 0.0;
  double min_net_injection = 0.0;  // min over agents (≥ 0 is feasible)
  std::vector<double> net_injection;
  GasState state;
  LineFlows flows;
};

FeasibilityReport feasibility_report(const std::vector<AgentDecision>& decisions, const GamePlan& plan);

struct RungRecord {
  double gamma = 0.0;
  int iterations = 0;
  double residual = 0.0;
  double state_violation = 0.0;
  double transmission_violation = 0.0;
  bool converged = false;
};

struct EquilibriumReport {
  std::vector<AgentDecision> decisions;
  GasState state;
  GapReport gap;
  FeasibilityReport feasibility;
  std::vector<RungRecord> path;
  std::vector<double> profits;
  int iterations = 0;
  int best_responses = 0;
  double gamma_final = 0.0;
  bool converged = false;
  bool certified = false;
  bool stalled = false;
  std::vector<std::string> diagnostics;
  double wall_time = 0.0;
};

/// All-zero decisions moved onto every agent's polytope (pins included).
std::vector<AgentDecision> feasible_start(const GamePlan& plan);

EquilibriumReport solve_gnep(const GamePlan& plan);

}  // namespace h2market
