#include "h2market/market.hpp"

#include <fmt/format.h>

#include <cmath>

namespace h2market {

MarketLayout MarketLayout::from_model(const NetworkModel& model, const TimeGrid& grid) {
  MarketLayout l;
  l.generation = model.generation_nodes();
  l.sales = model.sale_nodes();
  l.conversion = model.ptg_nodes();
  l.boundary = boundary_node_indices(model);
  l.time_nodes = grid.nodes();
  return l;
}

int MarketLayout::rows(int block) const {
  switch (block) {
    case 0: return static_cast<int>(generation.size());
    case 1: return static_cast<int>(sales.size());
    case 2: return static_cast<int>(conversion.size());
    default: return static_cast<int>(boundary.size());
  }
}

int MarketLayout::offset(int block) const {
  int off = 0;
  for (int b = 0; b < block; ++b) off += rows(b) * time_nodes;
  return off;
}

int MarketLayout::size() const { return offset(4); }

AgentDecision AgentDecision::zeros(const MarketLayout& l) {
  const int nt = l.time_nodes;
  return {Eigen::MatrixXd::Zero(l.rows(0), nt), Eigen::MatrixXd::Zero(l.rows(1), nt),
          Eigen::MatrixXd::Zero(l.rows(2), nt), Eigen::MatrixXd::Zero(l.rows(3), nt)};
}

Eigen::VectorXd AgentDecision::stacked() const {
  Eigen::VectorXd v(g.size() + s.size() + c.size() + p.size());
  Eigen::Index off = 0;
  for (const auto* m : {&g, &s, &c, &p}) {
    // node-major: row r occupies [off + r*nt, off + (r+1)*nt)
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      v.segment(off + r * m->cols(), m->cols()) = m->row(r).transpose();
    }
    off += m->size();
  }
  return v;
}

AgentDecision AgentDecision::unstack(const MarketLayout& l, const Eigen::VectorXd& v) {
  if (v.size() != l.size()) throw InputError("stacked decision has the wrong size");
  AgentDecision d = zeros(l);
  Eigen::Index off = 0;
  for (auto* m : {&d.g, &d.s, &d.c, &d.p}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      m->row(r) = v.segment(off + r * m->cols(), m->cols()).transpose();
    }
    off += m->size();
  }
  return d;
}

AgentBounds AgentBounds::from_model(const NetworkModel& model, const MarketLayout& l) {
  AgentBounds b;
  auto collect = [&](const std::vector<std::size_t>& nodes, double Node::*field) {
    Eigen::VectorXd v(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) v(i) = model.nodes()[nodes[i]].*field;
    return v;
  };
  b.g_max = collect(l.generation, &Node::g_max);
  b.s_max = collect(l.sales, &Node::s_max);
  b.c_max = collect(l.conversion, &Node::c_max);
  b.p_max = collect(l.boundary, &Node::p_max);
  return b;
}

Eigen::VectorXd AgentBounds::stacked(int nt) const {
  Eigen::VectorXd v(nt * (g_max.size() + s_max.size() + c_max.size() + p_max.size()));
  Eigen::Index off = 0;
  for (const auto* m : {&g_max, &s_max, &c_max, &p_max}) {
    for (Eigen::Index r = 0; r < m->size(); ++r) v.segment(off + r * nt, nt).setConstant((*m)(r));
    off += m->size() * nt;
  }
  return v;
}

ConversionMap ConversionMap::from_model(const NetworkModel& model, const MarketLayout& l) {
  ConversionMap c;
  c.eta.resize(l.boundary.size());
  for (std::size_t i = 0; i < l.boundary.size(); ++i) c.eta(i) = model.nodes()[l.boundary[i]].eta;
  return c;
}

DemandCurve average_demand(const ScenarioSet& set) {
  if (set.scenarios.empty()) throw InputError("scenario weights: at least one scenario is required");
  double sum = 0.0;
  for (std::size_t m = 0; m < set.scenarios.size(); ++m) {
    const auto& sc = set.scenarios[m];
    if (!(sc.weight >= 0.0) || !std::isfinite(sc.weight)) {
      throw InputError(fmt::format("scenario weights: weight of scenario {} is {}", m, sc.weight));
    }
    sum += sc.weight;
    if (sc.a.rows() != set.scenarios[0].a.rows() || sc.a.cols() != set.scenarios[0].a.cols() ||
        sc.b.rows() != sc.a.rows() || sc.b.cols() != sc.a.cols()) {
      throw InputError(fmt::format("scenario {} has inconsistent demand table sizes", m));
    }
    auto check_range = [&](const Eigen::MatrixXd& v, const std::optional<double>& hi, const char* name) {
      if (v.size() == 0) return;
      if (!v.allFinite() || v.minCoeff() < 0.0) {
        throw InputError(fmt::format("scenario {}: demand coefficient {} must be nonnegative", m, name));
      }
      if (hi && v.maxCoeff() > *hi) {
        throw InputError(fmt::format("scenario {}: demand coefficient {} exceeds its maximum {}", m, name, *hi));
      }
    };
    check_range(sc.a, set.a_max, "a");
    check_range(sc.b, set.b_max, "b");
  }
  if (std::abs(sum - 1.0) > 1e-10) {
    throw InputError(fmt::format("scenario weights sum to {:.17g}, expected 1", sum));
  }
  DemandCurve c{Eigen::MatrixXd::Zero(set.scenarios[0].a.rows(), set.scenarios[0].a.cols()),
                Eigen::MatrixXd::Zero(set.scenarios[0].b.rows(), set.scenarios[0].b.cols())};
  for (const auto& sc : set.scenarios) {
    c.a += sc.weight * sc.a;
    c.b += sc.weight * sc.b;
  }
  return c;
}

double price(const DemandCurve& curve, int sale, int k, double total) {
  return curve.a(sale, k) - curve.b(sale, k) * total;
}

Eigen::MatrixXd total_sales(const std::vector<AgentDecision>& decisions) {
  if (decisions.empty()) return {};
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(decisions[0].s.rows(), decisions[0].s.cols());
  for (const auto& d : decisions) s += d.s;
  return s;
}

namespace {

int row_of(const std::vector<std::size_t>& nodes, std::size_t v) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] == v) return static_cast<int>(i);
  }
  return -1;
}

const Eigen::MatrixXd& block(const AgentDecision& d, int which) {
  switch (which) {
    case 0: return d.g;
    case 1: return d.s;
    case 2: return d.c;
    default: return d.p;
  }
}

struct QuadPoint {
  double w;
  int k0;
  int k1;
  double a0;
  double a1;
};

std::vector<QuadPoint> quadrature(const TimeGrid& grid, TimeQuadrature quad) {
  std::vector<QuadPoint> pts;
  const double dt = grid.dt();
  if (quad == TimeQuadrature::trapezoid) {
    const Eigen::VectorXd w = grid.trapezoid_weights();
    for (int k = 0; k < grid.nodes(); ++k) pts.push_back({w(k), k, k, 1.0, 0.0});
    return pts;
  }
  for (int k = 0; k < grid.steps(); ++k) {
    pts.push_back({dt / 6.0, k, k, 1.0, 0.0});
    pts.push_back({4.0 * dt / 6.0, k, k + 1, 0.5, 0.5});
    pts.push_back({dt / 6.0, k + 1, k + 1, 1.0, 0.0});
  }
  return pts;
}

double at(const Eigen::MatrixXd& m, int r, const QuadPoint& q) {
  return q.a0 * m(r, q.k0) + q.a1 * m(r, q.k1);
}

}  // namespace

std::vector<ConversionTerm> conversion_terms(const MarketLayout& l, const NetworkModel& model,
                                             const ConversionMap& conv) {
  std::vector<ConversionTerm> out;
  for (std::size_t b = 0; b < l.boundary.size(); ++b) {
    const auto v = l.boundary[b];
    const auto& role = model.nodes()[v].role;
    const int bi = static_cast<int>(b);
    const double eta = conv.eta(b);
    auto add = [&](int blk, const std::vector<std::size_t>& nodes, double coef) {
      const int row = row_of(nodes, v);
      if (row < 0) throw InputError("boundary node without a matching decision variable");
      out.push_back({bi, blk, row, coef});
    };
    if (role.ptg) add(2, l.conversion, eta);
    if (role.gtp) add(0, l.generation, -eta);
    if (role.sale && role.hydrogen) add(1, l.sales, -eta);
  }
  return out;
}

std::vector<WithdrawalTerm> withdrawal_terms(const MarketLayout& l, const NetworkModel& model) {
  std::vector<WithdrawalTerm> out;
  const auto enodes = model.electricity_nodes();
  for (std::size_t e = 0; e < enodes.size(); ++e) {
    const auto v = enodes[e];
    const int ei = static_cast<int>(e);
    if (int r = row_of(l.sales, v); r >= 0) out.push_back({ei, 1, r, 1.0});
    if (int r = row_of(l.conversion, v); r >= 0) out.push_back({ei, 2, r, 1.0});
    if (int r = row_of(l.generation, v); r >= 0) out.push_back({ei, 0, r, -1.0});
  }
  return out;
}

Eigen::MatrixXd boundary_flow(const AgentDecision& d, const MarketLayout& l, const NetworkModel& model,
                              const ConversionMap& conv) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(l.boundary.size(), l.time_nodes);
  for (const auto& t : conversion_terms(l, model, conv)) q.row(t.boundary) += std::abs(t.coef) * block(d, t.block).row(t.row);
  return q;
}

Eigen::MatrixXd boundary_injection(const AgentDecision& d, const MarketLayout& l, const NetworkModel& model,
                                   const ConversionMap& conv) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(l.boundary.size(), l.time_nodes);
  for (const auto& t : conversion_terms(l, model, conv)) q.row(t.boundary) += t.coef * block(d, t.block).row(t.row);
  return q;
}

double net_injection(const AgentDecision& d, const MarketLayout& l, const NetworkModel& model,
                     const ConversionMap& conv, const TimeGrid& grid) {
  const Eigen::VectorXd w = grid.trapezoid_weights();
  return (boundary_injection(d, l, model, conv) * w).sum();
}

Eigen::VectorXd net_injection_gradient(const MarketLayout& l, const NetworkModel& model, const ConversionMap& conv,
                                       const TimeGrid& grid) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(l.size());
  const Eigen::VectorXd w = grid.trapezoid_weights();
  const int nt = l.time_nodes;
  for (const auto& t : conversion_terms(l, model, conv)) g.segment(l.offset(t.block) + t.row * nt, nt) += t.coef * w;
  return g;
}

double objective(int agent, const std::vector<AgentDecision>& decisions, const DemandCurve& curve,
                 const CostTable& costs, const TimeGrid& grid, TimeQuadrature quad) {
  const auto& d = decisions[agent];
  const Eigen::MatrixXd total = total_sales(decisions);
  double f = 0.0;
  for (const auto& q : quadrature(grid, quad)) {
    double density = 0.0;
    for (Eigen::Index r = 0; r < d.s.rows(); ++r) {
      density += at(d.s, r, q) * (at(curve.a, r, q) - at(curve.b, r, q) * at(total, r, q));
    }
    for (Eigen::Index r = 0; r < d.g.rows(); ++r) density -= costs.generation[agent](r) * at(d.g, r, q);
    for (Eigen::Index r = 0; r < d.c.rows(); ++r) density -= costs.conversion[agent](r) * at(d.c, r, q);
    f += q.w * density;
  }
  return f;
}

Eigen::VectorXd objective_gradient(int agent, const std::vector<AgentDecision>& decisions, const DemandCurve& curve,
                                   const CostTable& costs, const MarketLayout& l, const TimeGrid& grid,
                                   TimeQuadrature quad) {
  const auto& d = decisions[agent];
  const Eigen::MatrixXd total = total_sales(decisions);
  const int nt = l.time_nodes;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(l.size());
  for (const auto& q : quadrature(grid, quad)) {
    auto add = [&](int blk, Eigen::Index r, double v) {
      grad(l.offset(blk) + r * nt + q.k0) += q.w * q.a0 * v;
      grad(l.offset(blk) + r * nt + q.k1) += q.w * q.a1 * v;
    };
    for (Eigen::Index r = 0; r < d.s.rows(); ++r) {
      const double b = at(curve.b, r, q);
      add(1, r, at(curve.a, r, q) - b * at(total, r, q) - b * at(d.s, r, q));
    }
    for (Eigen::Index r = 0; r < d.g.rows(); ++r) add(0, r, -costs.generation[agent](r));
    for (Eigen::Index r = 0; r < d.c.rows(); ++r) add(2, r, -costs.conversion[agent](r));
  }
  return grad;
}

AgentDecision project_box(const AgentDecision& d, const AgentBounds& b) {
  AgentDecision out = d;
  auto clamp = [](Eigen::MatrixXd& m, const Eigen::VectorXd& hi) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) = m.row(r).cwiseMax(0.0).cwiseMin(hi(r));
  };
  clamp(out.g, b.g_max);
  clamp(out.s, b.s_max);
  clamp(out.c, b.c_max);
  clamp(out.p, b.p_max);
  return out;
}

}  // namespace h2market
