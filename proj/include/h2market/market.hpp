#pragma once

#include "h2market/common.hpp"
#include "h2market/network.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace h2market {

/// Which nodes carry which decision variables; every list is in node order.
struct MarketLayout {
  std::vector<std::size_t> generation;  // g: 𝒱^g (renewables and GtP)
  std::vector<std::size_t> sales;       // s: 𝒱^s
  std::vector<std::size_t> conversion;  // c: 𝒱^PtG
  std::vector<std::size_t> boundary;    // p̂: 𝒱^H_∂
  int time_nodes = 0;

  static MarketLayout from_model(const NetworkModel& model, const TimeGrid& grid);

  /// Size of the stacked decision vector [g; s; c; p̂], node-major then time.
  int size() const;
  int offset(int block) const;
  int rows(int block) const;
};

/// One agent's controls at the time-grid nodes (rows follow MarketLayout).
struct AgentDecision {
  Eigen::MatrixXd g;
  Eigen::MatrixXd s;
  Eigen::MatrixXd c;
  Eigen::MatrixXd p;

  static AgentDecision zeros(const MarketLayout& layout);
  Eigen::VectorXd stacked() const;
  static AgentDecision unstack(const MarketLayout& layout, const Eigen::VectorXd& v);
  bool operator==(const AgentDecision&) const = default;
};

/// Box bounds of U_ad for one agent (per node, constant in time).
struct AgentBounds {
  Eigen::VectorXd g_max;
  Eigen::VectorXd s_max;
  Eigen::VectorXd c_max;
  Eigen::VectorXd p_max;

  static AgentBounds from_model(const NetworkModel& model, const MarketLayout& layout);
  /// Stacked upper bounds matching AgentDecision::stacked().
  Eigen::VectorXd stacked(int time_nodes) const;
};

/// η per boundary node (rows follow MarketLayout::boundary).
struct ConversionMap {
  Eigen::VectorXd eta;

  static ConversionMap from_model(const NetworkModel& model, const MarketLayout& layout);
};

/// Averaged inverse demand per sale node and time node.
struct DemandCurve {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

struct Scenario {
  double weight = 0.0;
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

struct ScenarioSet {
  std::vector<Scenario> scenarios;
  std::optional<double> a_max;
  std::optional<double> b_max;
};

/// κ per agent: generation nodes and PtG nodes.
struct CostTable {
  std::vector<Eigen::VectorXd> generation;
  std::vector<Eigen::VectorXd> conversion;
};

/// Weighted scenario average; throws InputError on invalid weights or ranges.
DemandCurve average_demand(const ScenarioSet& set);

double price(const DemandCurve& curve, int sale, int k, double total_sales);

/// Total sales per sale node over all agents.
Eigen::MatrixXd total_sales(const std::vector<AgentDecision>& decisions);

/// One linear term linking a decision row to a boundary node's signed inflow
/// (+η for c at PtG, −η for g at GtP, −η for s at hydrogen sales).
struct ConversionTerm {
  int boundary = 0;
  int block = 0;  // 0 g, 1 s, 2 c
  int row = 0;
  double coef = 0.0;
};
std::vector<ConversionTerm> conversion_terms(const MarketLayout& layout, const NetworkModel& model,
                                             const ConversionMap& conv);

/// One term of the nodal withdrawal s + c − g at an electricity node
/// (`node` is the position among the electricity nodes).
struct WithdrawalTerm {
  int node = 0;
  int block = 0;
  int row = 0;
  double coef = 0.0;
};
std::vector<WithdrawalTerm> withdrawal_terms(const MarketLayout& layout, const NetworkModel& model);

/// Magnitudes q̂ per boundary node: ηc at PtG, ηg at GtP, ηs at hydrogen sales.
Eigen::MatrixXd boundary_flow(const AgentDecision& d, const MarketLayout& layout, const NetworkModel& model,
                              const ConversionMap& conv);

/// Signed mass inflow into the pipe network per boundary node:
/// PtG injects, GtP and hydrogen sales extract.
Eigen::MatrixXd boundary_injection(const AgentDecision& d, const MarketLayout& layout, const NetworkModel& model,
                                   const ConversionMap& conv);

/// ∫ (Σ_PtG q̂ − Σ_GtP q̂ − Σ_{sale∩H} q̂) dt, trapezoidal.
double net_injection(const AgentDecision& d, const MarketLayout& layout, const NetworkModel& model,
                     const ConversionMap& conv, const TimeGrid& grid);
/// Gradient of net_injection with respect to the stacked decision.
Eigen::VectorXd net_injection_gradient(const MarketLayout& layout, const NetworkModel& model,
                                       const ConversionMap& conv, const TimeGrid& grid);

/// Expected profit of agent i (raw time integral, €).
double objective(int agent, const std::vector<AgentDecision>& decisions, const DemandCurve& curve,
                 const CostTable& costs, const TimeGrid& grid, TimeQuadrature quad = TimeQuadrature::trapezoid);

/// Gradient of the profit of agent i with respect to its own stacked decision.
Eigen::VectorXd objective_gradient(int agent, const std::vector<AgentDecision>& decisions, const DemandCurve& curve,
                                   const CostTable& costs, const MarketLayout& layout, const TimeGrid& grid,
                                   TimeQuadrature quad = TimeQuadrature::trapezoid);

AgentDecision project_box(const AgentDecision& d, const AgentBounds& bounds);

}  // namespace h2market
