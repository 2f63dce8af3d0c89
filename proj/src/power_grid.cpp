#include "h2market/power_grid.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace h2market {

int GridModel::column(std::size_t model_node) const {
  auto it = std::find(nodes.begin(), nodes.end(), model_node);
  return it == nodes.end() ? -1 : static_cast<int>(it - nodes.begin());
}

GridModel build_ptdf(const NetworkModel& model, const std::string& slack, bool double_sided) {
  GridModel g;
  g.double_sided = double_sided;
  g.nodes = model.electricity_nodes();
  for (auto v : g.nodes) g.node_ids.push_back(model.nodes()[v].id);
  g.slack = slack.empty() ? model.slack() : slack;
  const int nv = static_cast<int>(g.nodes.size());
  const int nl = static_cast<int>(model.lines().size());
  if (nv == 0) {
    g.ptdf = Eigen::MatrixXd::Zero(nl, 0);
    return g;
  }
  auto slack_idx = model.find_node(g.slack);
  g.slack_column = slack_idx ? g.column(*slack_idx) : -1;
  if (g.slack_column < 0) throw InputError(fmt::format("slack '{}' is not an electricity node", g.slack));

  g.incidence = Eigen::MatrixXd::Zero(nl, nv);
  g.susceptance.resize(nl);
  g.capacity.resize(nl);
  for (int l = 0; l < nl; ++l) {
    const auto& line = model.lines()[l];
    const int a = g.column(model.line_from(l));
    const int b = g.column(model.line_to(l));
    if (a < 0 || b < 0) throw InputError(fmt::format("line '{}' leaves the electricity network", line.id));
    g.incidence(l, a) = 1.0;
    g.incidence(l, b) = -1.0;
    g.susceptance(l) = line.susceptance;
    g.capacity(l) = line.capacity;
    g.line_ids.push_back(line.id);
  }

  std::vector<int> keep;
  for (int v = 0; v < nv; ++v) {
    if (v != g.slack_column) keep.push_back(v);
  }
  const Eigen::MatrixXd bm = g.susceptance.asDiagonal() * g.incidence;
  const Eigen::MatrixXd lap = g.incidence.transpose() * bm;
  const Eigen::MatrixXd lap_r = lap(keep, keep);
  const Eigen::MatrixXd bm_r = bm(Eigen::all, keep);
  g.ptdf = Eigen::MatrixXd::Zero(nl, nv);
  if (!keep.empty()) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lap_r);
    if (!lu.isInvertible()) throw SolverError("reduced grid Laplacian is singular (disconnected grid?)");
    const Eigen::MatrixXd reduced = bm_r * lu.inverse();
    g.ptdf(Eigen::all, keep) = reduced;
  }
  return g;
}

LineFlows line_flows(const GridModel& grid, const Eigen::MatrixXd& withdrawal) {
  if (withdrawal.rows() != static_cast<Eigen::Index>(grid.nodes.size())) {
    throw InputError("withdrawal profile must have one row per electricity node");
  }
  LineFlows out;
  const Eigen::Index nv = withdrawal.rows();
  Eigen::MatrixXd balanced = withdrawal;
  if (nv > 0) balanced.rowwise() -= withdrawal.colwise().sum() / static_cast<double>(nv);
  out.flow = grid.ptdf * balanced;
  const Eigen::MatrixXd load = grid.double_sided ? Eigen::MatrixXd(out.flow.cwiseAbs()) : out.flow;
  out.margin = (-load).colwise() + grid.capacity;
  out.min_margin = out.margin.size() ? out.margin.minCoeff() : 0.0;
  return out;
}

Eigen::MatrixXd transmission_violation(const GridModel& grid, const Eigen::MatrixXd& flow) {
  Eigen::MatrixXd v = (flow.colwise() - grid.capacity).cwiseMax(0.0);
  if (grid.double_sided) v += ((-flow).colwise() - grid.capacity).cwiseMax(0.0);
  return v;
}

Eigen::VectorXd tree_flow_oracle(const GridModel& grid, const Eigen::VectorXd& withdrawal) {
  const int nv = static_cast<int>(grid.nodes.size());
  const int nl = static_cast<int>(grid.line_ids.size());
  if (nl != nv - 1) throw InputError("tree oracle needs a tree grid");
  std::vector<std::vector<std::pair<int, int>>> adj(nv);
  for (int l = 0; l < nl; ++l) {
    int a = -1, b = -1;
    for (int v = 0; v < nv; ++v) {
      if (grid.incidence(l, v) > 0) a = v;
      if (grid.incidence(l, v) < 0) b = v;
    }
    adj[a].emplace_back(b, l);
    adj[b].emplace_back(a, l);
  }
  // Iterative DFS from the slack; subtree sums accumulate in post-order.
  std::vector<int> parent(nv, -2), parent_line(nv, -1), order;
  std::vector<int> stack = {grid.slack_column};
  parent[grid.slack_column] = -1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (auto [w, l] : adj[v]) {
      if (parent[w] != -2) continue;
      parent[w] = v;
      parent_line[w] = l;
      stack.push_back(w);
    }
  }
  if (static_cast<int>(order.size()) != nv) throw InputError("tree oracle needs a connected grid");
  Eigen::VectorXd subtree = withdrawal;
  Eigen::VectorXd flow = Eigen::VectorXd::Zero(nl);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int v = *it;
    if (parent[v] < 0) continue;
    const int l = parent_line[v];
    // Line oriented away from the slack side carries the subtree total.
    flow(l) = grid.incidence(l, v) > 0 ? subtree(v) : -subtree(v);
    subtree(parent[v]) += subtree(v);
  }
  return flow;
}

Eigen::MatrixXd nodal_withdrawal(const std::vector<AgentDecision>& decisions, const MarketLayout& l,
                                 const NetworkModel& model) {
  Eigen::MatrixXd n = Eigen::MatrixXd::Zero(model.electricity_nodes().size(), l.time_nodes);
  const auto terms = withdrawal_terms(l, model);
  for (const auto& d : decisions) {
    for (const auto& t : terms) {
      const auto& m = t.block == 0 ? d.g : (t.block == 1 ? d.s : d.c);
      n.row(t.node) += t.coef * m.row(t.row);
    }
  }
  return n;
}

Eigen::MatrixXd balance_residual(const std::vector<AgentDecision>& decisions, const MarketLayout& l,
                                 const NetworkModel& model) {
  Eigen::MatrixXd r(decisions.size(), l.time_nodes);
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    r.row(i) = nodal_withdrawal({decisions[i]}, l, model).colwise().sum();
  }
  return r;
}

LineFlows line_flows(const GridModel& grid, const std::vector<AgentDecision>& decisions, const MarketLayout& layout,
                     const NetworkModel& model) {
  return line_flows(grid, nodal_withdrawal(decisions, layout, model));
}

}  // namespace h2market
