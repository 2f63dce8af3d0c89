#pragma once

#include "h2market/market.hpp"
#include "h2market/network.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace h2market {

/// DC load-flow data of the electricity subgraph. Columns follow the
/// electricity nodes in lexicographic order, rows follow the lines.
struct GridModel {
  std::vector<std::size_t> nodes;   // NetworkModel node indices of 𝒱^E
  std::vector<std::string> node_ids;
  std::vector<std::string> line_ids;
  Eigen::MatrixXd incidence;        // Mₐ: +1 at line start, -1 at line end
  Eigen::VectorXd susceptance;
  Eigen::VectorXd capacity;
  Eigen::MatrixXd ptdf;             // Â, slack column zero
  std::string slack;
  int slack_column = -1;
  bool double_sided = false;

  int column(std::size_t model_node) const;
};

/// Â = B Mₐ B̄⁻¹ on the slack-reduced space, slack column zero-padded.
GridModel build_ptdf(const NetworkModel& model, const std::string& slack = {}, bool double_sided = false);

struct LineFlows {
  Eigen::MatrixXd flow;     // lines × time nodes
  Eigen::MatrixXd margin;   // θ_e − flow (or θ_e − |flow| when double sided)
  double min_margin = 0.0;
};

/// Flows for a nodal withdrawal profile n (electricity nodes × time nodes).
/// The imbalance Σn is spread uniformly before applying Â, so flows do not
/// depend on a constant offset in n; balanced profiles give exactly Â·n.
LineFlows line_flows(const GridModel& grid, const Eigen::MatrixXd& withdrawal);

/// Σ_{ν∈𝒱^E} (s + c − g) per agent and time node (agents × time nodes).
Eigen::MatrixXd balance_residual(const std::vector<AgentDecision>& decisions, const MarketLayout& layout,
                                 const NetworkModel& model);

/// Nodal withdrawal Σᵢ (s + c − g) on the electricity nodes (rows in
/// electricity-node order) × time nodes.
Eigen::MatrixXd nodal_withdrawal(const std::vector<AgentDecision>& decisions, const MarketLayout& layout,
                                 const NetworkModel& model);

/// Flows of the aggregate decisions (see the matrix overload).
LineFlows line_flows(const GridModel& grid, const std::vector<AgentDecision>& decisions,
                     const MarketLayout& layout, const NetworkModel& model);

/// Violation max(0, flow − θ) (and max(0, −flow − θ) when double sided).
Eigen::MatrixXd transmission_violation(const GridModel& grid, const Eigen::MatrixXd& flow);

/// Independent check for tree grids: the flow on a line equals the total
/// withdrawal on the side of the line away from the slack bus.
Eigen::VectorXd tree_flow_oracle(const GridModel& grid, const Eigen::VectorXd& withdrawal);

}  // namespace h2market
