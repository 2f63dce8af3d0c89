#include "h2market/manufactured.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numbers>

namespace h2market {

double ManufacturedSolution::TimeFn::at(double t) const { return a * std::exp(-t) + b * std::sin(t) + c; }
double ManufacturedSolution::TimeFn::rate(double t) const { return -a * std::exp(-t) + b * std::cos(t); }

ManufacturedSolution::ManufacturedSolution(const NetworkModel& model, const CoefficientFields& coeffs)
    : eps_(coeffs.epsilon), theta1_(coeffs.theta1), theta2_(coeffs.theta2) {
  if (coeffs.time_dependent) throw InputError("manufactured solution needs time-independent coefficients");
  const auto& pipes = model.pipes();
  pipes_.resize(pipes.size());
  for (std::size_t e = 0; e < pipes.size(); ++e) {
    const auto& g1 = coeffs.gamma1[e];
    const auto& g2 = coeffs.gamma2[e];
    if ((g1.array() != g1(0, 0)).any() || (g2.array() != g2(0, 0)).any()) {
      throw InputError("manufactured solution needs constant coefficients along each pipe");
    }
    gamma1_.push_back(g1(0, 0));
    gamma2_.push_back(g2(0, 0));
    pipes_[e].length = pipes[e].length;
    pipes_[e].p_bump = 0.3 + 0.1 * static_cast<double>(e);
    pipes_[e].q_bump = -0.2 + 0.15 * static_cast<double>(e);
  }

  int boundary_seen = 0;
  for (std::size_t v = 0; v < model.nodes().size(); ++v) {
    const auto& inc = model.incident_pipes(v);
    if (inc.empty()) continue;
    const auto& role = model.nodes()[v].role;
    if (role.boundary()) {
      const double i = boundary_seen++;
      const double sign = (boundary_seen % 2 == 0) ? 1.0 : -1.0;
      const EndData d{TimeFn{0.3 + 0.1 * i, 0.2, 1.0 + 0.1 * i}, TimeFn{0.2, 0.1 * sign, 0.05 * i},
                      TimeFn{0.4, -0.1 + 0.05 * i, 0.5}, TimeFn{-0.3, 0.2, 0.1 * sign}};
      for (auto e : inc) pipes_[e].end[model.pipe_from(e) == v ? 0 : 1] = d;
      continue;
    }
    const double deg = static_cast<double>(inc.size());
    for (std::size_t j = 0; j < inc.size(); ++j) {
      const auto e = inc[j];
      const double n = model.orientation(e, v);
      const double c = static_cast<double>(j) - (deg - 1.0) / 2.0;
      EndData d{TimeFn{0.5, 0.3, 1.5}, TimeFn{0.7 * n * c, 0.0, 0.0}, TimeFn{0.5 * n * c, 0.0, 0.0},
                TimeFn{0.25, 0.15, 0.0}};
      pipes_[e].end[model.pipe_from(e) == v ? 0 : 1] = d;
    }
  }
}

ManufacturedSolution::Value ManufacturedSolution::evaluate(int e, bool flow_field, double x, double t) const {
  const auto& pd = pipes_[e];
  const double l = pd.length;
  const double s = x / l;
  const double h[4] = {2 * s * s * s - 3 * s * s + 1, s * s * s - 2 * s * s + s, -2 * s * s * s + 3 * s * s,
                       s * s * s - s * s};
  const double h1[4] = {6 * s * s - 6 * s, 3 * s * s - 4 * s + 1, -6 * s * s + 6 * s, 3 * s * s - 2 * s};
  const double h2[4] = {12 * s - 6, 6 * s - 4, -12 * s + 6, 6 * s - 2};
  const TimeFn& v0 = flow_field ? pd.end[0].qv : pd.end[0].pv;
  const TimeFn& d0 = flow_field ? pd.end[0].qd : pd.end[0].pd;
  const TimeFn& v1 = flow_field ? pd.end[1].qv : pd.end[1].pv;
  const TimeFn& d1 = flow_field ? pd.end[1].qd : pd.end[1].pd;
  const double c[4] = {v0.at(t), l * d0.at(t), v1.at(t), l * d1.at(t)};
  const double cr[4] = {v0.rate(t), l * d0.rate(t), v1.rate(t), l * d1.rate(t)};

  Value out;
  for (int i = 0; i < 4; ++i) {
    out.v += h[i] * c[i];
    out.dx += h1[i] * c[i] / l;
    out.dxx += h2[i] * c[i] / (l * l);
    out.dt += h[i] * cr[i];
  }
  const double m = (flow_field ? pd.q_bump : pd.p_bump) * std::exp(-t);
  const double pi = std::numbers::pi;
  const double sn = std::sin(pi * s);
  out.v += m * sn * sn;
  out.dt -= m * sn * sn;
  out.dx += m * pi / l * std::sin(2 * pi * s);
  out.dxx += m * 2 * pi * pi / (l * l) * std::cos(2 * pi * s);
  return out;
}

ManufacturedSolution::Value ManufacturedSolution::pressure(int e, double x, double t) const {
  return evaluate(e, false, x, t);
}

ManufacturedSolution::Value ManufacturedSolution::flow(int e, double x, double t) const {
  return evaluate(e, true, x, t);
}

double ManufacturedSolution::source_pressure(int e, double x, double t) const {
  const auto p = pressure(e, x, t);
  const auto q = flow(e, x, t);
  return p.dt - eps_ * p.dxx + theta1_ * q.dx;
}

double ManufacturedSolution::source_flow(int e, double x, double t) const {
  const auto p = pressure(e, x, t);
  const auto q = flow(e, x, t);
  return q.dt - eps_ * q.dxx + theta2_ * p.dx + gamma1_[e] * q.v + gamma2_[e] * p.v;
}

Eigen::VectorXd ManufacturedSolution::nodal(const SpatialMesh& mesh, double t) const {
  Eigen::VectorXd y(mesh.local_size());
  for (int e = 0; e < mesh.pipes(); ++e) {
    for (int j = 0; j <= mesh.cells(e); ++j) {
      y(mesh.p_index(e, j)) = pressure(e, mesh.x(e, j), t).v;
      y(mesh.q_index(e, j)) = flow(e, mesh.x(e, j), t).v;
    }
  }
  return y;
}

Eigen::VectorXd ManufacturedSolution::nodal_source(const SpatialMesh& mesh, double t) const {
  Eigen::VectorXd f(mesh.local_size());
  for (int e = 0; e < mesh.pipes(); ++e) {
    for (int j = 0; j <= mesh.cells(e); ++j) {
      f(mesh.p_index(e, j)) = source_pressure(e, mesh.x(e, j), t);
      f(mesh.q_index(e, j)) = source_flow(e, mesh.x(e, j), t);
    }
  }
  return f;
}

BoundaryData ManufacturedSolution::boundary(const SpatialMesh& mesh, const TimeGrid& grid) const {
  auto bd = BoundaryData::zeros(mesh.boundary_count(), grid.nodes());
  for (int b = 0; b < mesh.boundary_count(); ++b) {
    const int e = mesh.boundary_pipe(b);
    const double x = mesh.boundary_end(b) == 0 ? 0.0 : mesh.length(e);
    for (int k = 0; k < grid.nodes(); ++k) {
      bd.pressure(b, k) = pressure(e, x, grid.time(k)).v;
      bd.flow(b, k) = flow(e, x, grid.time(k)).v;
    }
  }
  return bd;
}

double ManufacturedSolution::l2_error(const GasState& y, const SpatialMesh& mesh, const TimeGrid& grid) const {
  const double gx[3] = {0.5 - 0.5 * std::sqrt(0.6), 0.5, 0.5 + 0.5 * std::sqrt(0.6)};
  const double gw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
  const Eigen::VectorXd wt = grid.trapezoid_weights();
  double total = 0.0;
  for (int k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    double space = 0.0;
    for (int e = 0; e < mesh.pipes(); ++e) {
      const double h = mesh.spacing(e);
      for (int c = 0; c < mesh.cells(e); ++c) {
        for (int g = 0; g < 3; ++g) {
          const double x = (c + gx[g]) * h;
          const double ph = (1 - gx[g]) * y.p(mesh, e, c, k) + gx[g] * y.p(mesh, e, c + 1, k);
          const double qh = (1 - gx[g]) * y.q(mesh, e, c, k) + gx[g] * y.q(mesh, e, c + 1, k);
          const double dp = ph - pressure(e, x, t).v;
          const double dq = qh - flow(e, x, t).v;
          space += gw[g] * h * (dp * dp + dq * dq);
        }
      }
    }
    total += wt(k) * space;
  }
  return std::sqrt(total);
}

std::vector<ConvergenceRow> convergence_study(const NetworkModel& model, const std::vector<int>& cells,
                                              double horizon, double dt_factor, double theta) {
  std::vector<ConvergenceRow> rows;
  for (int n : cells) {
    const SpatialMesh mesh(model, n);
    const double h = mesh.max_spacing();
    const int steps = std::max(1, static_cast<int>(std::ceil(horizon / (dt_factor * h * h) - 1e-9)));
    const TimeGrid grid(horizon, steps);
    const auto coeffs = compute_coefficients(model, mesh, grid);
    const ManufacturedSolution exact(model, coeffs);
    const GasSystem system(mesh, coeffs, grid, theta);
    const auto y = system.solve(exact.nodal(mesh, 0.0), exact.boundary(mesh, grid),
                                [&](double t) { return exact.nodal_source(mesh, t); });
    ConvergenceRow row{n, h, grid.dt(), steps, exact.l2_error(y, mesh, grid), 0.0};
    if (!rows.empty()) row.order = std::log(rows.back().error / row.error) / std::log(rows.back().h / row.h);
    rows.push_back(row);
  }
  return rows;
}

NetworkModel manufactured_star_network() {
  std::vector<Node> nodes;
  for (const char* id : {"a", "b", "c"}) {
    Node n;
    n.id = id;
    n.role.hydrogen = true;
    n.role.sale = true;
    n.eta = 1.0;
    n.s_max = 1.0;
    n.p_max = 10.0;
    nodes.push_back(n);
  }
  Node j;
  j.id = "j";
  j.role.hydrogen = true;
  nodes.push_back(j);

  auto pipe = [](const char* id, const char* from, const char* to, double length) {
    PipeParams p;
    p.id = id;
    p.from = from;
    p.to = to;
    p.length = length;
    p.friction = 0.2;
    p.slope = 0.05;
    p.p_ref.constant = 2.0;
    p.q_ref.constant = 0.5;
    p.q_max = 10.0;
    p.p_max = 10.0;
    return p;
  };
  std::vector<PipeParams> pipes = {pipe("e1", "a", "j", 1.0), pipe("e2", "j", "b", 0.8), pipe("e3", "j", "c", 1.2)};
  GasConstants c{0.1, 1.0, 1.0, 1.0, 9.81};
  return NetworkModel(std::move(nodes), {}, std::move(pipes), c);
}

}  // namespace h2market
