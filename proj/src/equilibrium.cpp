#include "h2market/equilibrium.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>

namespace h2market {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int var_index(const MarketLayout& l, int block, int row, int k) { return l.offset(block) + row * l.time_nodes + k; }

double dot_weighted(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& w) {
  return (a.array() * b.array() * w.array()).sum();
}

// Shared penalty of the aggregate decisions; adds ∂P/∂xᵢ (identical for all
// agents) to `grad` when given.
double penalty_terms(const std::vector<AgentDecision>& decisions, const GamePlan& plan, double gamma,
                     Eigen::VectorXd* grad) {
  if (gamma == 0.0) return 0.0;
  const auto& l = plan.layout;
  const int nt = l.time_nodes;
  const Eigen::VectorXd wt = plan.grid.trapezoid_weights();
  double value = 0.0;

  if (plan.gas) {
    const GasState y = induced_state(decisions, plan);
    const Eigen::VectorXd ws = space_weights(plan.mesh);
    Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(y.values.rows(), y.values.cols());
    bool active = false;
    for (int e = 0; e < plan.mesh.pipes(); ++e) {
      for (int j = 0; j <= plan.mesh.cells(e); ++j) {
        for (int field = 0; field < 2; ++field) {
          const int i = field == 0 ? plan.mesh.p_index(e, j) : plan.mesh.q_index(e, j);
          const double upper = field == 0 ? plan.state_bounds.p_max[e] : plan.state_bounds.q_max[e];
          for (int k = 0; k < nt; ++k) {
            const double v = y.values(i, k);
            double viol = 0.0, sign = 0.0;
            if (v > upper) {
              viol = v - upper;
              sign = 1.0;
            } else if (v < 0.0) {
              viol = -v;
              sign = -1.0;
            }
            if (viol == 0.0) continue;
            active = true;
            value += 0.5 * gamma * ws(i) * wt(k) * viol * viol;
            dy(i, k) = gamma * ws(i) * wt(k) * viol * sign;
          }
        }
      }
    }
    if (grad && active) {
      const BoundaryData adj = plan.gas->adjoint(dy);
      for (int r = 0; r < l.rows(3); ++r) {
        const int b = plan.boundary_map[r];
        for (int k = 0; k < nt; ++k) (*grad)(var_index(l, 3, r, k)) += adj.pressure(b, k);
      }
      for (const auto& t : plan.conversion_terms) {
        const int b = plan.boundary_map[t.boundary];
        const double n = plan.boundary_sign[t.boundary];
        for (int k = 0; k < nt; ++k) (*grad)(var_index(l, t.block, t.row, k)) -= n * t.coef * adj.flow(b, k);
      }
    }
  }

  if (!plan.grid_model.line_ids.empty()) {
    const auto& gm = plan.grid_model;
    const LineFlows flows = line_flows(gm, nodal_withdrawal(decisions, l, plan.model));
    Eigen::MatrixXd dflow = Eigen::MatrixXd::Zero(flows.flow.rows(), nt);
    bool active = false;
    for (Eigen::Index e = 0; e < flows.flow.rows(); ++e) {
      for (int k = 0; k < nt; ++k) {
        const double f = flows.flow(e, k);
        const double cap = gm.capacity(e);
        double viol = 0.0, sign = 0.0;
        if (f > cap) {
          viol = f - cap;
          sign = 1.0;
        } else if (gm.double_sided && -f > cap) {
          viol = -f - cap;
          sign = -1.0;
        }
        if (viol == 0.0) continue;
        active = true;
        value += 0.5 * gamma * wt(k) * viol * viol;
        dflow(e, k) = gamma * wt(k) * viol * sign;
      }
    }
    if (grad && active) {
      Eigen::MatrixXd dn = gm.ptdf.transpose() * dflow;
      dn.rowwise() -= dn.colwise().mean();
      for (const auto& t : plan.withdrawal_terms) {
        for (int k = 0; k < nt; ++k) (*grad)(var_index(l, t.block, t.row, k)) += t.coef * dn(t.node, k);
      }
    }
  }
  return value;
}

// Evaluates one agent's subproblem with the others held fixed.
class AgentProblem {
 public:
  AgentProblem(int agent, std::vector<AgentDecision> decisions, const GamePlan& plan, double gamma)
      : agent_(agent), work_(std::move(decisions)), plan_(plan), gamma_(gamma) {
    rho_w_ = plan.config.tikhonov * plan.time_weight.cwiseProduct(plan.tikhonov_mask);
  }

  double value(const Eigen::VectorXd& x, Eigen::VectorXd* grad, bool selection = true) {
    work_[agent_] = AgentDecision::unstack(plan_.layout, x);
    const auto& q = plan_.config.quadrature;
    double f = -objective(agent_, work_, plan_.demand, plan_.costs, plan_.grid, q);
    if (grad) *grad = -objective_gradient(agent_, work_, plan_.demand, plan_.costs, plan_.layout, plan_.grid, q);
    if (selection) {
      f += 0.5 * dot_weighted(x, x, rho_w_);
      if (grad) *grad += rho_w_.cwiseProduct(x);
    }
    f += penalty_terms(work_, plan_, gamma_, grad);
    return f;
  }

 private:
  int agent_;
  std::vector<AgentDecision> work_;
  const GamePlan& plan_;
  double gamma_;
  Eigen::VectorXd rho_w_;
};

// max_j |P(x − τD⁻¹g) − x|_j / (τ σ_j), relative to the game's gradient scale.
double max_scaled(const Eigen::VectorXd& v, const Eigen::VectorXd& scale) {
  return v.size() ? v.cwiseQuotient(scale).cwiseAbs().maxCoeff() : 0.0;
}

// max|x_new − x_old| / max(1, |x|) per variable block (g, s, c, p̂).
double fixed_point_residual(const Eigen::VectorXd& x_new, const Eigen::VectorXd& x_old, const MarketLayout& l) {
  double r = 0.0;
  for (int blk = 0; blk < 4; ++blk) {
    const int n = l.rows(blk) * l.time_nodes;
    if (n == 0) continue;
    const auto a = x_new.segment(l.offset(blk), n);
    const auto b = x_old.segment(l.offset(blk), n);
    const double mag = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    r = std::max(r, (a - b).cwiseAbs().maxCoeff() / mag);
  }
  return r;
}

double state_violation_l2(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  if (!plan.gas) return 0.0;
  return check_state_bounds(induced_state(decisions, plan), plan.state_bounds, plan.mesh, plan.grid).l2;
}

double transmission_l2(const LineFlows& flows, const GamePlan& plan) {
  if (plan.grid_model.line_ids.empty()) return 0.0;
  const Eigen::MatrixXd v = transmission_violation(plan.grid_model, flows.flow);
  const Eigen::VectorXd wt = plan.grid.trapezoid_weights();
  double s = 0.0;
  for (Eigen::Index k = 0; k < v.cols(); ++k) s += wt(k) * v.col(k).squaredNorm();
  return std::sqrt(s);
}

double transmission_l2(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  if (plan.grid_model.line_ids.empty()) return 0.0;
  return transmission_l2(line_flows(plan.grid_model, decisions, plan.layout, plan.model), plan);
}

// Diagonal of the Hessian of the penalized objective in one agent's
// variables, with the penalty's active set frozen at `decisions`.
Eigen::VectorXd curvature_diagonal(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                                   double gamma) {
  const auto& l = plan.layout;
  const int nt = l.time_nodes;
  const Eigen::VectorXd wt = plan.grid.trapezoid_weights();
  Eigen::VectorXd h = plan.config.tikhonov * plan.time_weight.cwiseProduct(plan.tikhonov_mask);
  for (int r = 0; r < l.rows(1); ++r) {
    for (int k = 0; k < nt; ++k) h(var_index(l, 1, r, k)) += 2.0 * plan.demand.b(r, k) * wt(k);
  }
  (void)agent;
  if (gamma == 0.0) return h;

  if (plan.gas && plan.response) {
    const GasState y = induced_state(decisions, plan);
    const Eigen::VectorXd ws = space_weights(plan.mesh);
    Eigen::MatrixXd active = Eigen::MatrixXd::Zero(y.values.rows(), nt);
    bool any = false;
    for (int e = 0; e < plan.mesh.pipes(); ++e) {
      for (int j = 0; j <= plan.mesh.cells(e); ++j) {
        for (int field = 0; field < 2; ++field) {
          const int i = field == 0 ? plan.mesh.p_index(e, j) : plan.mesh.q_index(e, j);
          const double upper = field == 0 ? plan.state_bounds.p_max[e] : plan.state_bounds.q_max[e];
          for (int k = 0; k < nt; ++k) {
            const double v = y.values(i, k);
            if (v > upper || v < 0.0) {
              active(i, k) = ws(i) * wt(k);
              any = true;
            }
          }
        }
      }
    }
    if (any) {
      auto weight_of = [&](int b, int field, int k) {
        int off = 0;
        const Eigen::MatrixXd& R = plan.response->response(b, field, k, off);
        double sum = 0.0;
        for (int kk = k; kk < nt; ++kk) {
          if (active.col(kk).isZero()) continue;
          sum += active.col(kk).dot(R.col(kk - off).cwiseAbs2());
        }
        return sum;
      };
      for (int r = 0; r < l.rows(3); ++r) {
        const int b = plan.boundary_map[r];
        for (int k = 1; k < nt; ++k) {
          const double wp = weight_of(b, 0, k);
          h(var_index(l, 3, r, k)) += gamma * wp;
        }
      }
      for (const auto& t : plan.conversion_terms) {
        const int b = plan.boundary_map[t.boundary];
        for (int k = 1; k < nt; ++k) h(var_index(l, t.block, t.row, k)) += gamma * t.coef * t.coef * weight_of(b, 1, k);
      }
    }
  }

  if (!plan.grid_model.line_ids.empty()) {
    const auto& gm = plan.grid_model;
    const LineFlows flows = line_flows(gm, nodal_withdrawal(decisions, l, plan.model));
    Eigen::MatrixXd sens = gm.ptdf;
    sens.colwise() -= gm.ptdf.rowwise().mean();
    for (int k = 0; k < nt; ++k) {
      for (Eigen::Index e = 0; e < flows.flow.rows(); ++e) {
        const double f = flows.flow(e, k);
        const double cap = gm.capacity(e);
        if (!(f > cap || (gm.double_sided && -f > cap))) continue;
        for (const auto& t : plan.withdrawal_terms) {
          const double a = t.coef * sens(e, t.node);
          h(var_index(l, t.block, t.row, k)) += gamma * wt(k) * a * a;
        }
      }
    }
  }
  return h;
}

std::shared_ptr<const BoundaryResponse> build_response(const GasSystem& gas, int nt) {
  auto out = std::make_shared<BoundaryResponse>();
  const auto& mesh = gas.mesh();
  const int nb = mesh.boundary_count();
  out->time_nodes = nt;
  out->shift_invariant = !gas.coefficients().time_dependent;
  const int per = out->shift_invariant ? 1 : nt;
  const double entries = 2.0 * nb * per * static_cast<double>(mesh.local_size()) * nt;
  if (entries > 5e7) return nullptr;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(mesh.local_size());
  for (int b = 0; b < nb; ++b) {
    for (int field = 0; field < 2; ++field) {
      for (int k = out->shift_invariant ? 1 : 0; k < (out->shift_invariant ? 2 : nt); ++k) {
        BoundaryData bd = BoundaryData::zeros(nb, nt);
        (field == 0 ? bd.pressure : bd.flow)(b, k) = 1.0;
        if (k == 0) {
          // t₀ values are fixed by compatibility; never needed.
          out->columns.push_back(Eigen::MatrixXd::Zero(mesh.local_size(), nt));
          continue;
        }
        out->columns.push_back(gas.solve(zero, bd).values);
      }
    }
  }
  return out;
}

}  // namespace

const Eigen::MatrixXd& BoundaryResponse::response(int b, int field, int k, int& offset) const {
  if (shift_invariant) {
    offset = k - 1;
    return columns[b * 2 + field];
  }
  offset = 0;
  return columns[(b * 2 + field) * time_nodes + k];
}

std::string method_name(InnerMethod m) {
  switch (m) {
    case InnerMethod::gauss_seidel: return "gs";
    case InnerMethod::jacobi: return "jacobi";
    case InnerMethod::extragradient: return "eg";
  }
  return "gs";
}

InnerMethod parse_method(const std::string& name) {
  if (name == "gs") return InnerMethod::gauss_seidel;
  if (name == "jacobi") return InnerMethod::jacobi;
  if (name == "eg") return InnerMethod::extragradient;
  throw InputError(fmt::format("unknown method '{}' (expected gs, jacobi or eg)", name));
}

std::vector<double> PenaltyConfig::ladder() const {
  if (!(gamma0 > 0.0)) throw InputError("penalty ladder: gamma0 must be positive");
  if (!(factor > 1.0)) throw InputError("penalty ladder: factor must exceed 1");
  if (!(gamma_max >= gamma0)) throw InputError("penalty ladder: gamma_max must be at least gamma0");
  if (!(rung_tol > 0.0) || !(final_tol > 0.0)) throw InputError("penalty ladder: tolerances must be positive");
  std::vector<double> out;
  for (double g = gamma0; g <= gamma_max * (1.0 + 1e-12); g *= factor) out.push_back(g);
  return out;
}

Eigen::VectorXd InitialStateSpec::build(const NetworkModel& model, const SpatialMesh& mesh) const {
  Eigen::VectorXd y(mesh.local_size());
  for (const auto& [id, profile] : pipes) {
    if (std::none_of(model.pipes().begin(), model.pipes().end(), [&](const PipeParams& p) { return p.id == id; })) {
      throw InputError(fmt::format("initial state refers to unknown pipe '{}'", id));
    }
  }
  for (int e = 0; e < mesh.pipes(); ++e) {
    PipeProfile pr{pressure, pressure, flow, flow};
    if (auto it = pipes.find(model.pipes()[e].id); it != pipes.end()) pr = it->second;
    const int n = mesh.cells(e);
    for (int j = 0; j <= n; ++j) {
      const double s = static_cast<double>(j) / n;
      y(mesh.p_index(e, j)) = (1.0 - s) * pr.p_start + s * pr.p_end;
      y(mesh.q_index(e, j)) = (1.0 - s) * pr.q_start + s * pr.q_end;
    }
  }
  return y;
}

GamePlan make_plan(const PlanInputs& in) {
  const auto report = validate_network(in.model);
  if (!report.ok()) throw InputError("invalid network:\n" + report.to_string());
  if (in.agents < 1) throw InputError("at least one agent is required");
  in.config.penalty.ladder();
  if (!(in.config.theta >= 0.5 && in.config.theta <= 1.0)) throw InputError("theta must lie in [0.5, 1]");

  GamePlan plan;
  plan.model = in.model;
  plan.grid = in.grid;
  plan.config = in.config;
  plan.layout = MarketLayout::from_model(plan.model, plan.grid);
  const auto& l = plan.layout;
  const int nt = l.time_nodes;
  plan.grid_model = build_ptdf(plan.model, "", in.double_sided);
  plan.conversion = ConversionMap::from_model(plan.model, l);
  plan.conversion_terms = conversion_terms(l, plan.model, plan.conversion);
  plan.withdrawal_terms = withdrawal_terms(l, plan.model);
  plan.state_bounds = StateBounds::from_model(plan.model);

  plan.demand = in.demand;
  if (plan.demand.a.rows() != l.rows(1) || plan.demand.a.cols() != nt || plan.demand.b.rows() != l.rows(1) ||
      plan.demand.b.cols() != nt) {
    throw InputError(fmt::format("demand tables must be {} sale nodes x {} time nodes", l.rows(1), nt));
  }
  plan.costs = in.costs;
  if (static_cast<int>(plan.costs.generation.size()) != in.agents ||
      static_cast<int>(plan.costs.conversion.size()) != in.agents) {
    throw InputError(fmt::format("cost table must list {} agents", in.agents));
  }
  for (int i = 0; i < in.agents; ++i) {
    if (plan.costs.generation[i].size() != l.rows(0) || plan.costs.conversion[i].size() != l.rows(2)) {
      throw InputError(fmt::format("cost table of agent {} has the wrong number of entries", i));
    }
  }
  if (in.bounds.empty()) {
    plan.bounds.assign(in.agents, AgentBounds::from_model(plan.model, l));
  } else {
    if (static_cast<int>(in.bounds.size()) != in.agents) throw InputError("one bound table per agent is required");
    plan.bounds = in.bounds;
  }

  // Gas network and the t₀ pins that make the controls compatible with y0.
  const int n_agents = in.agents;
  plan.pins.assign(n_agents, Eigen::VectorXd::Constant(l.size(), kNaN));
  if (!plan.model.pipes().empty()) {
    plan.mesh = SpatialMesh(plan.model, in.config.cells);
    const auto coeffs = compute_coefficients(plan.model, plan.mesh, plan.grid);
    plan.gas = std::make_shared<const GasSystem>(plan.mesh, coeffs, plan.grid, in.config.theta);
    plan.response = build_response(*plan.gas, nt);
    plan.y0 = in.initial.build(plan.model, plan.mesh);
    const auto& bn = plan.mesh.boundary_nodes();
    for (std::size_t r = 0; r < l.boundary.size(); ++r) {
      auto it = std::find(bn.begin(), bn.end(), l.boundary[r]);
      if (it == bn.end()) throw InputError("boundary node missing from the mesh");
      const int b = static_cast<int>(it - bn.begin());
      plan.boundary_map.push_back(b);
      plan.boundary_sign.push_back(plan.mesh.boundary_end(b) == 0 ? -1.0 : 1.0);
    }
    for (int i = 0; i < n_agents; ++i) {
      auto& pin = plan.pins[i];
      for (int r = 0; r < l.rows(3); ++r) {
        const int b = plan.boundary_map[r];
        const double p0 = plan.y0(plan.mesh.p_index(plan.mesh.boundary_pipe(b), plan.mesh.boundary_end(b)));
        pin(var_index(l, 3, r, 0)) = p0 / n_agents;
      }
      std::vector<char> done(l.rows(3), 0);
      for (const auto& t : plan.conversion_terms) {
        const int b = plan.boundary_map[t.boundary];
        const double q0 = plan.y0(plan.mesh.q_index(plan.mesh.boundary_pipe(b), plan.mesh.boundary_end(b)));
        const double inj = -plan.boundary_sign[t.boundary] * q0 / n_agents;
        pin(var_index(l, t.block, t.row, 0)) = done[t.boundary] ? 0.0 : inj / t.coef;
        done[t.boundary] = 1;
      }
    }
  }

  // Scales, weights and polytopes.
  const Eigen::VectorXd wt = plan.grid.trapezoid_weights();
  plan.time_weight.resize(l.size());
  plan.tikhonov_mask = Eigen::VectorXd::Zero(l.size());
  for (int blk = 0; blk < 4; ++blk) {
    for (int r = 0; r < l.rows(blk); ++r) {
      for (int k = 0; k < nt; ++k) {
        plan.time_weight(var_index(l, blk, r, k)) = wt(k);
        if (blk < 3) plan.tikhonov_mask(var_index(l, blk, r, k)) = 1.0;
      }
    }
  }
  Eigen::VectorXd hi_max = Eigen::VectorXd::Zero(l.size());
  for (const auto& b : plan.bounds) hi_max = hi_max.cwiseMax(b.stacked(nt));
  plan.scale = hi_max.unaryExpr([](double v) { return v > 0.0 ? v : 1.0; });

  const Eigen::VectorXd injection = net_injection_gradient(l, plan.model, plan.conversion, plan.grid);
  std::vector<std::vector<std::pair<int, double>>> groups(nt);
  for (const auto& t : plan.withdrawal_terms) {
    for (int k = 0; k < nt; ++k) groups[k].emplace_back(var_index(l, t.block, t.row, k), t.coef);
  }
  const Eigen::VectorXd weight = plan.time_weight.cwiseQuotient(plan.scale.cwiseAbs2());
  for (int i = 0; i < n_agents; ++i) {
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(l.size());
    Eigen::VectorXd hi = plan.bounds[i].stacked(nt);
    if ((hi.array() < 0.0).any()) throw InputError(fmt::format("agent {} has a negative upper bound", i));
    const auto& pin = plan.pins[i];
    for (Eigen::Index j = 0; j < pin.size(); ++j) {
      if (std::isnan(pin(j))) continue;
      if (pin(j) < -1e-12 * plan.scale(j) || pin(j) > hi(j) * (1.0 + 1e-12)) {
        throw InputError(fmt::format(
            "initial gas state is incompatible with agent {}'s control bounds: t0 value {} outside [0, {}]", i, pin(j),
            hi(j)));
      }
      lo(j) = hi(j) = std::clamp(pin(j), 0.0, hi(j));
    }
    plan.polytopes.emplace_back(lo, hi, weight, groups, injection);
  }

  // Typical magnitude of σ·∂f/∂x / w at the zero decision, used to make
  // stationarity tolerances dimensionless.
  std::vector<AgentDecision> zero(n_agents, AgentDecision::zeros(l));
  double gs = 0.0;
  for (int i = 0; i < n_agents; ++i) {
    const Eigen::VectorXd g = objective_gradient(i, zero, plan.demand, plan.costs, l, plan.grid, plan.config.quadrature);
    gs = std::max(gs, (g.cwiseProduct(plan.scale).cwiseQuotient(plan.time_weight)).cwiseAbs().maxCoeff());
  }
  plan.gradient_scale = std::max(1.0, gs);
  return plan;
}

BoundaryData aggregate_boundary(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  const int nt = plan.layout.time_nodes;
  BoundaryData bd = BoundaryData::zeros(plan.mesh.boundary_count(), nt);
  for (const auto& d : decisions) {
    const Eigen::MatrixXd inj = boundary_injection(d, plan.layout, plan.model, plan.conversion);
    for (std::size_t r = 0; r < plan.boundary_map.size(); ++r) {
      const int b = plan.boundary_map[r];
      bd.pressure.row(b) += d.p.row(r);
      bd.flow.row(b) -= plan.boundary_sign[r] * inj.row(r);
    }
  }
  return bd;
}

GasState induced_state(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  if (!plan.gas) return {};
  return plan.gas->solve(plan.y0, aggregate_boundary(decisions, plan));
}

double penalty_value(const std::vector<AgentDecision>& decisions, const GamePlan& plan, double gamma) {
  return penalty_terms(decisions, plan, gamma, nullptr);
}

double penalized_objective(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                           double gamma) {
  AgentProblem prob(agent, decisions, plan, gamma);
  return prob.value(decisions[agent].stacked(), nullptr, false);
}

Eigen::VectorXd penalized_gradient(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                                   double gamma) {
  AgentProblem prob(agent, decisions, plan, gamma);
  Eigen::VectorXd g;
  prob.value(decisions[agent].stacked(), &g, false);
  return g;
}

BestResponse best_response(int agent, const std::vector<AgentDecision>& decisions, const GamePlan& plan,
                           double gamma) {
  const auto& poly = plan.polytopes[agent];
  const auto& cfg = plan.config;
  AgentProblem prob(agent, decisions, plan, gamma);
  const Eigen::VectorXd& sigma = plan.scale;
  const Eigen::VectorXd floor = plan.gradient_scale * plan.time_weight.cwiseQuotient(sigma.cwiseAbs2());

  BestResponse out;
  Eigen::VectorXd x = poly.project(decisions[agent].stacked());
  std::vector<AgentDecision> at = decisions;
  auto metric = [&](const Eigen::VectorXd& point) {
    at[agent] = AgentDecision::unstack(plan.layout, point);
    return Eigen::VectorXd(curvature_diagonal(agent, at, plan, gamma).cwiseMax(floor));
  };
  Eigen::VectorXd D = metric(x);
  Eigen::VectorXd g;
  double f = prob.value(x, &g);
  double tau = 1.0;
  int it = 0;
  int stagnant = 0;
  for (; it < cfg.br_max_iter; ++it) {
    if (it > 0 && it % 50 == 0) D = metric(x);
    const Eigen::VectorXd dg = g.cwiseQuotient(D);
    out.stationarity = max_scaled(poly.project(x - dg, D) - x, sigma);
    if (out.stationarity <= cfg.br_tol) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd d = poly.project(x - tau * dg, D) - x;
    double slope = g.dot(d);
    if (!(slope < 0.0) && tau != 1.0) {
      tau = 1.0;
      d = poly.project(x - dg, D) - x;
      slope = g.dot(d);
    }
    if (!(slope < 0.0)) {
      // Rounding floor: no descent left along the projected direction.
      out.converged = out.stationarity <= 1e3 * cfg.br_tol;
      break;
    }
    double alpha = 1.0;
    Eigen::VectorXd x_new, g_new;
    double f_new = 0.0;
    int backtracks = 0;
    while (true) {
      x_new = x + alpha * d;
      f_new = prob.value(x_new, &g_new);
      if (f_new <= f + 1e-4 * alpha * slope) break;
      if (++backtracks > 60) break;
      alpha *= 0.5;
    }
    if (backtracks > 60) {
      out.line_search_failed = true;
      break;
    }
    // Decrease at rounding level for several steps: the tolerance is below
    // what this objective can resolve.
    stagnant = f - f_new <= 1e-15 * std::abs(f) ? stagnant + 1 : 0;
    const Eigen::VectorXd s = x_new - x;
    const double sy = s.dot(g_new - g);
    const double sds = dot_weighted(s, s, D);
    tau = sy > 0.0 ? std::clamp(sds / sy, 1e-8, 1e8) : std::min(tau * 4.0, 1e8);
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    if (stagnant >= 10) {
      out.stationarity = max_scaled(poly.project(x - g.cwiseQuotient(D), D) - x, sigma);
      out.converged = out.stationarity <= 1e3 * cfg.br_tol;
      ++it;
      break;
    }
  }
  out.iterations = it;
  out.value = f;
  out.decision = AgentDecision::unstack(plan.layout, x);
  return out;
}

double nikaido_isoda(const std::vector<AgentDecision>& u, const std::vector<AgentDecision>& v, const GamePlan& plan,
                     double gamma) {
  double psi = 0.0;
  for (int i = 0; i < static_cast<int>(u.size()); ++i) {
    auto dev = u;
    dev[i] = v[i];
    psi += penalized_objective(i, u, plan, gamma) - penalized_objective(i, dev, plan, gamma);
  }
  return psi;
}

GapReport ni_gap(const std::vector<AgentDecision>& decisions, const GamePlan& plan, double gamma) {
  GapReport r;
  for (int i = 0; i < static_cast<int>(decisions.size()); ++i) {
    const BestResponse br = best_response(i, decisions, plan, gamma);
    auto dev = decisions;
    dev[i] = br.decision;
    const double term = penalized_objective(i, decisions, plan, gamma) - penalized_objective(i, dev, plan, gamma);
    r.terms.push_back(term);
    r.total += term;
    r.responses.push_back(br.decision);
  }
  return r;
}

FeasibilityReport feasibility_report(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  FeasibilityReport r;
  const auto& l = plan.layout;
  const int nt = l.time_nodes;
  for (int i = 0; i < static_cast<int>(decisions.size()); ++i) {
    const Eigen::VectorXd x = decisions[i].stacked();
    const Eigen::VectorXd hi = plan.bounds[i].stacked(nt);
    if (x.size()) r.box = std::max({r.box, (-x).maxCoeff(), (x - hi).maxCoeff()});
    const auto& pin = plan.pins[i];
    for (Eigen::Index j = 0; j < pin.size(); ++j) {
      if (!std::isnan(pin(j))) r.pin = std::max(r.pin, std::abs(x(j) - pin(j)));
    }
    const double ni = net_injection(decisions[i], l, plan.model, plan.conversion, plan.grid);
    r.net_injection.push_back(ni);
    r.min_net_injection = i == 0 ? ni : std::min(r.min_net_injection, ni);
  }
  r.box = std::max(r.box, 0.0);
  const Eigen::MatrixXd bal = balance_residual(decisions, l, plan.model);
  r.balance = bal.size() ? bal.cwiseAbs().maxCoeff() : 0.0;
  if (!plan.grid_model.line_ids.empty()) {
    r.flows = line_flows(plan.grid_model, decisions, l, plan.model);
    r.min_margin = r.flows.min_margin;
    r.transmission_l2 = transmission_l2(r.flows, plan);
  }
  if (plan.gas) {
    r.state = induced_state(decisions, plan);
    const auto v = check_state_bounds(r.state, plan.state_bounds, plan.mesh, plan.grid);
    r.state_l2 = v.l2;
    r.state_l2_pressure = v.l2_pressure;
    r.state_l2_flow = v.l2_flow;
    r.state_max = v.max;
  }
  return r;
}

std::vector<AgentDecision> feasible_start(const GamePlan& plan) {
  std::vector<AgentDecision> d;
  const auto& l = plan.layout;
  for (int i = 0; i < plan.agents(); ++i) {
    // Zero controls; boundary pressures hold their t₀ value.
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(l.size());
    for (int r = 0; r < l.rows(3); ++r) {
      const double p0 = plan.pins[i](var_index(l, 3, r, 0));
      if (!std::isnan(p0)) x0.segment(l.offset(3) + r * l.time_nodes, l.time_nodes).setConstant(p0);
    }
    const Eigen::VectorXd x = plan.polytopes[i].project(x0);
    d.push_back(AgentDecision::unstack(plan.layout, x));
  }
  return d;
}

namespace {

struct RungOutcome {
  int iterations = 0;
  int best_responses = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<std::string> notes;
};

Eigen::VectorXd stack_all(const std::vector<AgentDecision>& d) {
  std::vector<Eigen::VectorXd> parts;
  Eigen::Index n = 0;
  for (const auto& di : d) {
    parts.push_back(di.stacked());
    n += parts.back().size();
  }
  Eigen::VectorXd x(n);
  n = 0;
  for (const auto& p : parts) {
    x.segment(n, p.size()) = p;
    n += p.size();
  }
  return x;
}

// One GS or Jacobi sweep from `d`; returns the swept decisions and the residual.
std::pair<std::vector<AgentDecision>, double> sweep_once(const std::vector<AgentDecision>& d, const GamePlan& plan,
                                                         double gamma, std::vector<int>& order, std::mt19937_64& rng,
                                                         std::vector<std::string>& notes) {
  const auto& cfg = plan.config;
  const int n = plan.agents();
  std::vector<AgentDecision> next = d;
  double residual = 0.0;
  auto note_failure = [&](int i, const BestResponse& br) {
    if (!br.converged && notes.size() < 20) {
      notes.push_back(fmt::format("gamma {:g}: best response of agent {} stopped at stationarity {:.3g}{}", gamma, i,
                                  br.stationarity, br.line_search_failed ? " (line search failed)" : ""));
    }
  };
  if (cfg.method == InnerMethod::jacobi) {
    std::vector<BestResponse> brs(n);
    if (cfg.concurrent && n > 1) {
      std::vector<std::future<BestResponse>> jobs;
      for (int i = 0; i < n; ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] { return best_response(i, d, plan, gamma); }));
      }
      for (int i = 0; i < n; ++i) brs[i] = jobs[i].get();
    } else {
      for (int i = 0; i < n; ++i) brs[i] = best_response(i, d, plan, gamma);
    }
    for (int i = 0; i < n; ++i) {
      note_failure(i, brs[i]);
      residual = std::max(residual, fixed_point_residual(brs[i].decision.stacked(), d[i].stacked(), plan.layout));
      next[i] = brs[i].decision;
    }
  } else {
    if (cfg.randomize_order) std::shuffle(order.begin(), order.end(), rng);
    for (int i : order) {
      const BestResponse br = best_response(i, next, plan, gamma);
      note_failure(i, br);
      residual = std::max(residual, fixed_point_residual(br.decision.stacked(), d[i].stacked(), plan.layout));
      next[i] = br.decision;
    }
  }
  return {std::move(next), residual};
}

// Sweeps accelerated by Anderson mixing in σ-scaled coordinates. Extrapolated
// points are projected back onto each agent's polytope; the history restarts
// whenever the residual fails to drop.
RungOutcome run_best_response(std::vector<AgentDecision>& d, const GamePlan& plan, double gamma, double tol,
                              std::mt19937_64& rng) {
  const auto& cfg = plan.config;
  const int n = plan.agents();
  const Eigen::Index m = plan.layout.size();
  RungOutcome out;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd sigma(m * n);
  for (int i = 0; i < n; ++i) sigma.segment(i * m, m) = plan.scale;

  std::vector<Eigen::VectorXd> xs, fs;  // history of points and their scaled residuals G(x) − x
  double last = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    auto [next, residual] = sweep_once(d, plan, gamma, order, rng, out.notes);
    out.best_responses += n;
    out.iterations = sweep + 1;
    out.residual = residual;
    if (residual <= tol) {
      d = std::move(next);
      out.converged = true;
      break;
    }
    if (cfg.anderson <= 0) {
      d = std::move(next);
      continue;
    }
    const Eigen::VectorXd x = stack_all(d).cwiseQuotient(sigma);
    const Eigen::VectorXd gx = stack_all(next).cwiseQuotient(sigma);
    if (residual >= last) {
      xs.clear();
      fs.clear();
    }
    last = residual;
    xs.push_back(x);
    fs.push_back(gx - x);
    if (static_cast<int>(xs.size()) > cfg.anderson + 1) {
      xs.erase(xs.begin());
      fs.erase(fs.begin());
    }
    const int k = static_cast<int>(xs.size()) - 1;
    if (k == 0) {
      d = std::move(next);
      continue;
    }
    Eigen::MatrixXd dF(x.size(), k), dG(x.size(), k);
    for (int j = 0; j < k; ++j) {
      dF.col(j) = fs[j + 1] - fs[j];
      dG.col(j) = (xs[j + 1] + fs[j + 1]) - (xs[j] + fs[j]);
    }
    const Eigen::VectorXd coef = dF.colPivHouseholderQr().solve(fs[k]);
    const Eigen::VectorXd mixed = (gx - dG * coef).cwiseProduct(sigma);
    if (!mixed.allFinite()) {
      xs.clear();
      fs.clear();
      d = std::move(next);
      continue;
    }
    for (int i = 0; i < n; ++i) {
      d[i] = AgentDecision::unstack(plan.layout, plan.polytopes[i].project(mixed.segment(i * m, m)));
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> pseudo_gradient(const std::vector<AgentDecision>& d, const GamePlan& plan, double gamma) {
  std::vector<Eigen::VectorXd> g(d.size());
  const Eigen::VectorXd rho_w = plan.config.tikhonov * plan.time_weight.cwiseProduct(plan.tikhonov_mask);
  for (int i = 0; i < static_cast<int>(d.size()); ++i) {
    g[i] = penalized_gradient(i, d, plan, gamma) + rho_w.cwiseProduct(d[i].stacked());
  }
  return g;
}

std::vector<AgentDecision> unstack_all(const std::vector<Eigen::VectorXd>& x, const GamePlan& plan) {
  std::vector<AgentDecision> d;
  for (const auto& v : x) d.push_back(AgentDecision::unstack(plan.layout, v));
  return d;
}

// Per-agent diagonal metric: penalized curvature at `d`, floored like the
// best-response metric.
std::vector<Eigen::VectorXd> game_metric(const std::vector<AgentDecision>& d, const GamePlan& plan, double gamma) {
  const Eigen::VectorXd floor = plan.gradient_scale * plan.time_weight.cwiseQuotient(plan.scale.cwiseAbs2());
  std::vector<Eigen::VectorXd> D;
  for (int i = 0; i < plan.agents(); ++i) D.push_back(curvature_diagonal(i, d, plan, gamma).cwiseMax(floor));
  return D;
}

// Largest |eigenvalue| of D⁻¹J by power iteration, J applied by central differences.
double estimate_lipschitz(const std::vector<AgentDecision>& d, const GamePlan& plan, double gamma,
                          const std::vector<Eigen::VectorXd>& D, std::mt19937_64& rng) {
  const int n = plan.agents();
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> v(n);
  auto norm = [&](const std::vector<Eigen::VectorXd>& u) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += dot_weighted(u[i], u[i], D[i]);
    return std::sqrt(s);
  };
  // Pinned t₀ values stay put so perturbed points remain compatible.
  auto unpin = [&](std::vector<Eigen::VectorXd>& u) {
    for (int i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < u[i].size(); ++j) {
        if (!std::isnan(plan.pins[i](j))) u[i](j) = 0.0;
      }
    }
  };
  for (auto& vi : v) {
    vi.resize(plan.layout.size());
    for (Eigen::Index j = 0; j < vi.size(); ++j) vi(j) = normal(rng) * plan.scale(j);
  }
  double lip = 0.0;
  for (int it = 0; it < 30; ++it) {
    unpin(v);
    const double nv = norm(v);
    if (nv == 0.0) break;
    for (auto& vi : v) vi /= nv;
    const double h = 1e-6;
    std::vector<AgentDecision> plus = d, minus = d;
    for (int i = 0; i < n; ++i) {
      plus[i] = AgentDecision::unstack(plan.layout, d[i].stacked() + h * v[i]);
      minus[i] = AgentDecision::unstack(plan.layout, d[i].stacked() - h * v[i]);
    }
    const auto gp = pseudo_gradient(plus, plan, gamma);
    const auto gm = pseudo_gradient(minus, plan, gamma);
    for (int i = 0; i < n; ++i) v[i] = (gp[i] - gm[i]).cwiseQuotient(D[i]) / (2.0 * h);
    lip = std::max(lip, norm(v));
  }
  return lip;
}

RungOutcome run_extragradient(std::vector<AgentDecision>& d, const GamePlan& plan, double gamma, double tol,
                              std::mt19937_64& rng) {
  const int n = plan.agents();
  RungOutcome out;
  std::vector<Eigen::VectorXd> D = game_metric(d, plan, gamma);
  double tau = 1.0 / std::max(1.5 * estimate_lipschitz(d, plan, gamma, D, rng), 1e-12);
  std::vector<Eigen::VectorXd> x(n);
  for (int i = 0; i < n; ++i) x[i] = d[i].stacked();
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < plan.config.eg_max_iter; ++it) {
    const auto g = pseudo_gradient(unstack_all(x, plan), plan, gamma);
    std::vector<Eigen::VectorXd> xb(n);
    double residual = 0.0;
    for (int i = 0; i < n; ++i) {
      xb[i] = plan.polytopes[i].project(x[i] - tau * g[i].cwiseQuotient(D[i]), D[i]);
      residual = std::max(residual, fixed_point_residual(xb[i], x[i], plan.layout));
    }
    out.iterations = it + 1;
    out.residual = residual;
    if (residual <= tol) {
      out.converged = true;
      break;
    }
    if (residual > prev * (1.0 + 1e-12)) tau *= 0.5;
    prev = residual;
    const auto gb = pseudo_gradient(unstack_all(xb, plan), plan, gamma);
    for (int i = 0; i < n; ++i) x[i] = plan.polytopes[i].project(x[i] - tau * gb[i].cwiseQuotient(D[i]), D[i]);
  }
  d = unstack_all(x, plan);
  if (!out.converged) out.notes.push_back(fmt::format("gamma {:g}: extragradient stopped at residual {:.3g}", gamma, out.residual));
  return out;
}

}  // namespace

EquilibriumReport solve_gnep(const GamePlan& plan) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto& cfg = plan.config;
  const auto ladder = cfg.penalty.ladder();
  std::mt19937_64 rng(cfg.seed);

  EquilibriumReport rep;
  auto d = feasible_start(plan);
  bool all_converged = true;
  for (std::size_t r = 0; r < ladder.size(); ++r) {
    const double gamma = ladder[r];
    const double tol = r + 1 == ladder.size() ? cfg.penalty.final_tol : cfg.penalty.rung_tol;
    const RungOutcome o = cfg.method == InnerMethod::extragradient ? run_extragradient(d, plan, gamma, tol, rng)
                                                                   : run_best_response(d, plan, gamma, tol, rng);
    RungRecord rec;
    rec.gamma = gamma;
    rec.iterations = o.iterations;
    rec.residual = o.residual;
    rec.converged = o.converged;
    rec.state_violation = state_violation_l2(d, plan);
    rec.transmission_violation = transmission_l2(d, plan);
    rep.path.push_back(rec);
    rep.iterations += o.iterations;
    rep.best_responses += o.best_responses;
    for (const auto& note : o.notes) rep.diagnostics.push_back(note);
    if (!o.converged) {
      all_converged = false;
      rep.diagnostics.push_back(fmt::format("rung gamma {:g} did not reach tolerance {:g} (residual {:.3g} after {} iterations)",
                                            gamma, tol, o.residual, o.iterations));
    }
  }
  rep.gamma_final = ladder.back();
  rep.decisions = d;
  rep.converged = all_converged;
  rep.gap = ni_gap(d, plan, rep.gamma_final);
  rep.feasibility = feasibility_report(d, plan);
  rep.state = rep.feasibility.state;
  for (int i = 0; i < plan.agents(); ++i) {
    rep.profits.push_back(objective(i, d, plan.demand, plan.costs, plan.grid, cfg.quadrature));
  }

  const auto& f = rep.feasibility;
  const bool violations_ok = f.state_l2 <= cfg.violation_target && f.transmission_l2 <= cfg.violation_target;
  if (!violations_ok) {
    const auto& p = rep.path;
    double last = p.back().state_violation + p.back().transmission_violation;
    double before = p.size() > 1 ? p[p.size() - 2].state_violation + p[p.size() - 2].transmission_violation : last;
    if (p.size() < 2 || last > 0.5 * before) rep.stalled = true;
    rep.diagnostics.push_back(fmt::format(
        "penalty path {}: state violation L2 {:.3g}, transmission violation L2 {:.3g} exceed target {:g} at gamma {:g}{}",
        rep.stalled ? "stalled" : "incomplete", f.state_l2, f.transmission_l2, cfg.violation_target, rep.gamma_final,
        rep.stalled ? "; the shared constraints look infeasible for these bounds" : "; extend the ladder"));
  }
  if (rep.gap.total > cfg.gap_tol) {
    rep.diagnostics.push_back(fmt::format("Nikaido-Isoda gap {:.3g} exceeds tolerance {:g}", rep.gap.total, cfg.gap_tol));
  }
  const bool residuals_ok = f.box <= cfg.residual_tol && f.pin <= cfg.residual_tol && f.balance <= cfg.residual_tol &&
                            f.min_net_injection >= -cfg.residual_tol;
  if (!residuals_ok) rep.diagnostics.push_back("hard constraint residuals exceed tolerance");
  rep.certified = rep.converged && violations_ok && residuals_ok && rep.gap.total <= cfg.gap_tol;
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

}  // namespace h2market
