#include "h2market/gas_dynamics.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace h2market {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// 2-point Gauss on [0,1].
constexpr double kGauss2[2] = {0.21132486540518713, 0.78867513459481287};

SparseMatrix from_triplets(int rows, int cols, const Triplets& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

SparseMatrix galerkin(const SparseMatrix& P, const SparseMatrix& local) {
  SparseMatrix out = SparseMatrix(P.transpose()) * local * P;
  out.prune(0.0);
  out.makeCompressed();
  return out;
}

}  // namespace

SpatialMesh::SpatialMesh(const NetworkModel& model, int cells_per_pipe)
    : SpatialMesh(model, std::vector<int>(model.pipes().size(), cells_per_pipe)) {}

SpatialMesh::SpatialMesh(const NetworkModel& model, std::vector<int> cells) : cells_(std::move(cells)) {
  if (cells_.size() != model.pipes().size()) {
    throw InputError("cell counts must be given for every pipe");
  }
  for (int n : cells_) {
    if (n < 1) throw InputError("every pipe needs at least one cell");
  }
  build(model);
}

double SpatialMesh::max_spacing() const {
  return spacing_.empty() ? 0.0 : *std::max_element(spacing_.begin(), spacing_.end());
}

double SpatialMesh::total_length() const {
  double sum = 0.0;
  for (int e = 0; e < pipes(); ++e) sum += length(e);
  return sum;
}

void SpatialMesh::build(const NetworkModel& model) {
  const int ne = pipes();
  spacing_.resize(ne);
  offset_.resize(ne);
  local_size_ = 0;
  for (int e = 0; e < ne; ++e) {
    spacing_[e] = model.pipes()[e].length / cells_[e];
    offset_[e] = local_size_;
    local_size_ += 2 * (cells_[e] + 1);
  }

  auto end_of = [&](int e, std::size_t node) { return model.pipe_from(e) == node ? 0 : cells_[e]; };

  boundary_nodes_ = boundary_node_indices(model);
  for (auto b : boundary_nodes_) {
    const auto& inc = model.incident_pipes(b);
    if (inc.size() != 1) {
      throw InputError(fmt::format("boundary node '{}' must be incident to exactly one pipe",
                                   model.nodes()[b].id));
    }
    boundary_pipe_.push_back(static_cast<int>(inc.front()));
    boundary_end_.push_back(end_of(static_cast<int>(inc.front()), b));
  }

  Triplets t;
  int next = 0;
  for (int e = 0; e < ne; ++e) {
    for (int j = 1; j < cells_[e]; ++j) t.emplace_back(p_index(e, j), next++, 1.0);
    for (int j = 1; j < cells_[e]; ++j) t.emplace_back(q_index(e, j), next++, 1.0);
  }
  for (std::size_t v = 0; v < model.nodes().size(); ++v) {
    const auto& role = model.nodes()[v].role;
    if (!role.hydrogen || role.boundary()) continue;
    const auto& inc = model.incident_pipes(v);
    if (inc.empty()) continue;
    Junction junction{v, {}, {}, {}};
    for (auto e : inc) {
      junction.pipes.push_back(static_cast<int>(e));
      junction.ends.push_back(end_of(static_cast<int>(e), v));
      junction.orientation.push_back(model.orientation(e, v));
    }
    const int pdof = next++;
    for (std::size_t i = 0; i < inc.size(); ++i) {
      t.emplace_back(p_index(junction.pipes[i], junction.ends[i]), pdof, 1.0);
    }
    // q^{e0} = -n^{e0} Σ_{e≠e0} n^e q^e
    const int n0 = junction.orientation[0];
    for (std::size_t i = 1; i < inc.size(); ++i) {
      const int qdof = next++;
      t.emplace_back(q_index(junction.pipes[i], junction.ends[i]), qdof, 1.0);
      t.emplace_back(q_index(junction.pipes[0], junction.ends[0]), qdof,
                     -static_cast<double>(n0 * junction.orientation[i]));
    }
    junctions_.push_back(std::move(junction));
  }
  interior_ = next;
  for (int b = 0; b < boundary_count(); ++b) {
    t.emplace_back(p_index(boundary_pipe_[b], boundary_end_[b]), pinned_index(b, 0), 1.0);
    t.emplace_back(q_index(boundary_pipe_[b], boundary_end_[b]), pinned_index(b, 1), 1.0);
  }
  P_ = from_triplets(local_size_, free_size(), t);
}

BoundaryData BoundaryData::zeros(int boundary_count, int time_nodes) {
  return {Eigen::MatrixXd::Zero(boundary_count, time_nodes), Eigen::MatrixXd::Zero(boundary_count, time_nodes)};
}

Eigen::VectorXd CoefficientFields::gamma_at(int which, int e, const TimeGrid& grid, double t) const {
  const auto& g = which == 1 ? gamma1[e] : gamma2[e];
  if (!time_dependent) return g.row(0).transpose();
  const double s = std::clamp(t / grid.dt(), 0.0, static_cast<double>(grid.steps()));
  const int k = std::min(static_cast<int>(std::floor(s)), grid.steps() - 1);
  const double w = s - k;
  return ((1.0 - w) * g.row(k) + w * g.row(k + 1)).transpose();
}

double CoefficientFields::sup_gamma(int which) const {
  double s = 0.0;
  for (const auto& g : which == 1 ? gamma1 : gamma2) s = std::max(s, g.cwiseAbs().maxCoeff());
  return s;
}

StateBounds StateBounds::from_model(const NetworkModel& model) {
  StateBounds b;
  for (const auto& p : model.pipes()) {
    b.q_max.push_back(p.q_max);
    b.p_max.push_back(p.p_max);
  }
  return b;
}

CoefficientFields compute_coefficients(const NetworkModel& model, const SpatialMesh& mesh,
                                       const TimeGrid& grid) {
  const auto& c = model.constants();
  CoefficientFields f;
  f.epsilon = c.epsilon;
  f.theta1 = c.sound_speed * c.sound_speed / c.area;
  f.theta2 = c.area;
  const double c2 = c.sound_speed * c.sound_speed;
  for (int e = 0; e < mesh.pipes(); ++e) {
    const auto& pipe = model.pipes()[e];
    const int nx = mesh.cells(e) + 1;
    for (const auto* field : {&pipe.p_ref, &pipe.q_ref}) {
      if (field->table && (field->table->rows() != grid.nodes() || field->table->cols() != nx)) {
        throw InputError(fmt::format("reference table of pipe '{}' is {}x{}, expected {}x{} (time x mesh)",
                                     pipe.id, field->table->rows(), field->table->cols(), grid.nodes(), nx));
      }
    }
    const bool varying = pipe.p_ref.table.has_value() || pipe.q_ref.table.has_value();
    const int nt = varying ? grid.nodes() : 1;
    Eigen::MatrixXd g1(nt, nx), g2(nt, nx);
    for (int k = 0; k < nt; ++k) {
      for (int j = 0; j < nx; ++j) {
        const double pt = pipe.p_ref.at(j, k);
        const double qt = pipe.q_ref.at(j, k);
        if (!(std::abs(pt) >= 1e-12)) {
          throw InputError(fmt::format("reference pressure of pipe '{}' is (nearly) zero at mesh node {}, time node {}",
                                       pipe.id, j, k));
        }
        g1(k, j) = pipe.friction * c2 * qt / (c.diameter * c.area * pt);
        g2(k, j) = c.area * c.gravity * std::sin(pipe.slope) / c2 -
                   pipe.friction * c2 * qt * qt / (2.0 * c.diameter * c.area * pt * pt);
        if (!std::isfinite(g1(k, j)) || !std::isfinite(g2(k, j))) {
          throw InputError(fmt::format("non-finite friction coefficient on pipe '{}'", pipe.id));
        }
      }
    }
    f.gamma1.push_back(std::move(g1));
    f.gamma2.push_back(std::move(g2));
  }
  for (int e = 0; e < mesh.pipes() && !f.time_dependent; ++e) {
    for (const auto* g : {&f.gamma1[e], &f.gamma2[e]}) {
      for (int k = 1; k < g->rows(); ++k) {
        if ((g->row(k) - g->row(0)).cwiseAbs().maxCoeff() > 0.0) f.time_dependent = true;
      }
    }
  }
  if (!f.time_dependent) {
    for (auto* gs : {&f.gamma1, &f.gamma2}) {
      for (auto& g : *gs) g = Eigen::MatrixXd(g.topRows(1));
    }
  } else {
    // Broadcast constant pipes so every field has a row per time node.
    for (auto* gs : {&f.gamma1, &f.gamma2}) {
      for (auto& g : *gs) {
        if (g.rows() == 1) g = g.replicate(grid.nodes(), 1).eval();
      }
    }
  }
  return f;
}

SparseMatrix local_mass(const SpatialMesh& mesh) {
  Triplets t;
  for (int e = 0; e < mesh.pipes(); ++e) {
    const double h = mesh.spacing(e);
    for (int field = 0; field < 2; ++field) {
      for (int c = 0; c < mesh.cells(e); ++c) {
        const int a = field == 0 ? mesh.p_index(e, c) : mesh.q_index(e, c);
        t.emplace_back(a, a, h / 3.0);
        t.emplace_back(a + 1, a + 1, h / 3.0);
        t.emplace_back(a, a + 1, h / 6.0);
        t.emplace_back(a + 1, a, h / 6.0);
      }
    }
  }
  return from_triplets(mesh.local_size(), mesh.local_size(), t);
}

SparseMatrix local_stiffness(const SpatialMesh& mesh) {
  Triplets t;
  for (int e = 0; e < mesh.pipes(); ++e) {
    const double h = mesh.spacing(e);
    for (int field = 0; field < 2; ++field) {
      for (int c = 0; c < mesh.cells(e); ++c) {
        const int a = field == 0 ? mesh.p_index(e, c) : mesh.q_index(e, c);
        t.emplace_back(a, a, 1.0 / h);
        t.emplace_back(a + 1, a + 1, 1.0 / h);
        t.emplace_back(a, a + 1, -1.0 / h);
        t.emplace_back(a + 1, a, -1.0 / h);
      }
    }
  }
  return from_triplets(mesh.local_size(), mesh.local_size(), t);
}

SparseMatrix local_bilinear(const SpatialMesh& mesh, const CoefficientFields& coeffs, const TimeGrid& grid,
                            double t) {
  Triplets trip;
  const double eps = coeffs.epsilon;
  for (int e = 0; e < mesh.pipes(); ++e) {
    const double h = mesh.spacing(e);
    const Eigen::VectorXd g1 = coeffs.gamma_at(1, e, grid, t);
    const Eigen::VectorXd g2 = coeffs.gamma_at(2, e, grid, t);
    for (int c = 0; c < mesh.cells(e); ++c) {
      const int p0 = mesh.p_index(e, c);
      const int q0 = mesh.q_index(e, c);
      // ∫ψ_j' ψ_i over the cell
      const double G[2][2] = {{-0.5, 0.5}, {-0.5, 0.5}};
      const double K[2][2] = {{1.0 / h, -1.0 / h}, {-1.0 / h, 1.0 / h}};
      double R1[2][2] = {{0, 0}, {0, 0}};
      double R2[2][2] = {{0, 0}, {0, 0}};
      for (double s : kGauss2) {
        const double psi[2] = {1.0 - s, s};
        const double w = 0.5 * h;
        const double a1 = psi[0] * g1(c) + psi[1] * g1(c + 1);
        const double a2 = psi[0] * g2(c) + psi[1] * g2(c + 1);
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) {
            R1[i][j] += w * a1 * psi[i] * psi[j];
            R2[i][j] += w * a2 * psi[i] * psi[j];
          }
        }
      }
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          trip.emplace_back(p0 + i, p0 + j, eps * K[i][j]);
          trip.emplace_back(p0 + i, q0 + j, coeffs.theta1 * G[i][j]);
          trip.emplace_back(q0 + i, p0 + j, coeffs.theta2 * G[i][j] + R2[i][j]);
          trip.emplace_back(q0 + i, q0 + j, eps * K[i][j] + R1[i][j]);
        }
      }
    }
  }
  SparseMatrix m = from_triplets(mesh.local_size(), mesh.local_size(), trip);
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      if (!std::isfinite(it.value())) throw SolverError("non-finite entry in the bilinear form");
    }
  }
  return m;
}

SparseMatrix assemble_bilinear(const SpatialMesh& mesh, const CoefficientFields& coeffs, const TimeGrid& grid,
                               double t) {
  return galerkin(mesh.prolongation(), local_bilinear(mesh, coeffs, grid, t));
}

SparseMatrix assemble_mass(const SpatialMesh& mesh) { return galerkin(mesh.prolongation(), local_mass(mesh)); }

SparseMatrix assemble_v_inner(const SpatialMesh& mesh) {
  SparseMatrix kv = local_stiffness(mesh) + local_mass(mesh);
  return galerkin(mesh.prolongation(), kv);
}

GasState lift_boundary(const BoundaryData& bd, const SpatialMesh& mesh, const TimeGrid& grid) {
  GasState w{Eigen::MatrixXd::Zero(mesh.local_size(), grid.nodes())};
  for (int b = 0; b < mesh.boundary_count(); ++b) {
    const int e = mesh.boundary_pipe(b);
    const int n = mesh.cells(e);
    const bool at_start = mesh.boundary_end(b) == 0;
    for (int j = 0; j <= n; ++j) {
      const double weight = at_start ? static_cast<double>(n - j) / n : static_cast<double>(j) / n;
      for (int k = 0; k < grid.nodes(); ++k) {
        w.values(mesh.p_index(e, j), k) += weight * bd.pressure(b, k);
        w.values(mesh.q_index(e, j), k) += weight * bd.flow(b, k);
      }
    }
  }
  return w;
}

GasSystem::GasSystem(const SpatialMesh& mesh, CoefficientFields coeffs, const TimeGrid& grid, double theta)
    : mesh_(mesh), coeffs_(std::move(coeffs)), grid_(grid), theta_(theta) {
  if (!(theta >= 0.5 && theta <= 1.0)) throw InputError("theta must lie in [0.5, 1]");
  mass_local_ = local_mass(mesh_);
  mass_ = galerkin(mesh_.prolongation(), mass_local_);
  const int ni = mesh_.interior_size();
  const int nb = mesh_.free_size() - ni;
  const double dt = grid_.dt();
  const int count = coeffs_.time_dependent ? grid_.steps() : 1;
  const SparseMatrix m_ii = mass_.topLeftCorner(ni, ni);
  const SparseMatrix m_ib = mass_.topRightCorner(ni, nb);
  for (int k = 0; k < count; ++k) {
    const double t = grid_.time(k) + theta_ * dt;
    const SparseMatrix a = assemble_bilinear(mesh_, coeffs_, grid_, t);
    const SparseMatrix a_ii = a.topLeftCorner(ni, ni);
    const SparseMatrix a_ib = a.topRightCorner(ni, nb);
    auto ops = std::make_unique<StepOperators>();
    ops->lhs = m_ii / dt + theta_ * a_ii;
    ops->r_ii = m_ii / dt - (1.0 - theta_) * a_ii;
    ops->r_ib = m_ib / dt - (1.0 - theta_) * a_ib;
    ops->f_ib = m_ib / dt + theta_ * a_ib;
    ops->lhs.makeCompressed();
    if (ni > 0) {
      ops->lu.analyzePattern(ops->lhs);
      ops->lu.factorize(ops->lhs);
      if (ops->lu.info() != Eigen::Success) {
        throw SolverError(fmt::format("time-step matrix is singular at step {}: {}", k, ops->lu.lastErrorMessage()));
      }
    }
    steps_.push_back(std::move(ops));
  }
}

Eigen::VectorXd GasSystem::solve_checked(const StepOperators& ops, const Eigen::VectorXd& rhs, double* rel) const {
  if (rhs.size() == 0) return rhs;
  Eigen::VectorXd x = ops.lu.solve(rhs);
  const double scale = std::max(rhs.norm(), (ops.lhs * x).norm());
  auto residual = [&](const Eigen::VectorXd& v) {
    return scale > 0.0 ? (ops.lhs * v - rhs).norm() / scale : 0.0;
  };
  double r = residual(x);
  if (r > 1e-10) {
    x += ops.lu.solve(Eigen::VectorXd(rhs - ops.lhs * x));
    r = residual(x);
  }
  if (!(r <= 1e-10)) {
    const Eigen::MatrixXd dense(ops.lhs);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    throw SolverError(fmt::format("linear solve residual {:.3e} exceeds 1e-10 (condition estimate {:.3e})", r, cond));
  }
  if (rel) *rel = std::max(*rel, r);
  return x;
}

Eigen::VectorXd GasSystem::initial_free(const Eigen::VectorXd& y0_local, const BoundaryData& bd) const {
  if (y0_local.size() != mesh_.local_size()) {
    throw InputError(fmt::format("initial state has {} values, mesh needs {}", y0_local.size(), mesh_.local_size()));
  }
  const int nb = mesh_.boundary_count();
  if (bd.pressure.rows() != nb || bd.flow.rows() != nb || bd.pressure.cols() != grid_.nodes() ||
      bd.flow.cols() != grid_.nodes()) {
    throw InputError(fmt::format("boundary data must be {}x{} per field", nb, grid_.nodes()));
  }
  const SparseMatrix& P = mesh_.prolongation();
  const SparseMatrix ptp = SparseMatrix(P.transpose()) * P;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(ptp);
  Eigen::VectorXd y = ldlt.solve(SparseMatrix(P.transpose()) * y0_local);
  const Eigen::VectorXd back = P * y;

  for (int field = 0; field < 2; ++field) {
    double scale = 1.0;
    double mismatch = 0.0;
    for (int e = 0; e < mesh_.pipes(); ++e) {
      for (int j = 0; j <= mesh_.cells(e); ++j) {
        const int i = field == 0 ? mesh_.p_index(e, j) : mesh_.q_index(e, j);
        scale = std::max(scale, std::abs(y0_local(i)));
        mismatch = std::max(mismatch, std::abs(back(i) - y0_local(i)));
      }
    }
    const auto& data = field == 0 ? bd.pressure : bd.flow;
    if (nb > 0) scale = std::max(scale, data.col(0).cwiseAbs().maxCoeff());
    const char* name = field == 0 ? "pressure" : "flow";
    if (mismatch > 1e-8 * scale) {
      throw InputError(fmt::format("initial {} violates the junction coupling conditions by {:.3e}", name, mismatch));
    }
    for (int b = 0; b < nb; ++b) {
      const int i = mesh_.pinned_index(b, field);
      if (std::abs(y(i) - data(b, 0)) > 1e-8 * scale) {
        throw InputError(fmt::format("initial {} at boundary node #{} is {:.17g}, boundary data at t=0 is {:.17g}",
                                     name, b, y(i), data(b, 0)));
      }
      y(i) = data(b, 0);
    }
  }
  return y;
}

GasState GasSystem::solve(const Eigen::VectorXd& y0_local, const BoundaryData& bd, const SourceFn& source,
                          SolveStats* stats) const {
  const int ni = mesh_.interior_size();
  const int nb = mesh_.free_size() - ni;
  const double dt = grid_.dt();
  const SparseMatrix& P = mesh_.prolongation();
  const SparseMatrix pt_mass = SparseMatrix(P.transpose()) * mass_local_;

  Eigen::VectorXd y = initial_free(y0_local, bd);
  GasState out{Eigen::MatrixXd(mesh_.local_size(), grid_.nodes())};
  out.values.col(0) = P * y;

  auto pinned = [&](int k) {
    Eigen::VectorXd b(nb);
    b << bd.pressure.col(k), bd.flow.col(k);
    return b;
  };

  double rel = 0.0;
  Eigen::VectorXd b_now = pinned(0);
  for (int k = 0; k < grid_.steps(); ++k) {
    const auto& ops = step(k);
    const Eigen::VectorXd b_next = pinned(k + 1);
    Eigen::VectorXd rhs = ops.r_ii * y.head(ni) + ops.r_ib * b_now - ops.f_ib * b_next;
    if (source) {
      const Eigen::VectorXd f = pt_mass * source(grid_.time(k) + theta_ * dt);
      rhs += f.head(ni);
    }
    y.head(ni) = solve_checked(ops, rhs, &rel);
    y.tail(nb) = b_next;
    out.values.col(k + 1) = P * y;
    b_now = b_next;
  }
  if (stats) {
    stats->max_relative_residual = rel;
    stats->factorizations = factorizations();
  }
  return out;
}

BoundaryData GasSystem::adjoint(const Eigen::MatrixXd& state_gradient) const {
  const int ni = mesh_.interior_size();
  const int nb = mesh_.free_size() - ni;
  const int nbn = mesh_.boundary_count();
  const SparseMatrix pt = SparseMatrix(mesh_.prolongation().transpose());
  const Eigen::MatrixXd g = pt * state_gradient;  // free layout × time nodes

  Eigen::MatrixXd bbar = g.bottomRows(nb);
  Eigen::VectorXd ybar = g.col(grid_.steps()).head(ni);
  for (int k = grid_.steps() - 1; k >= 0; --k) {
    const auto& ops = step(k);
    Eigen::VectorXd lambda = ni > 0 ? Eigen::VectorXd(ops.lu.transpose().solve(ybar)) : Eigen::VectorXd();
    bbar.col(k + 1) -= ops.f_ib.transpose() * lambda;
    bbar.col(k) += ops.r_ib.transpose() * lambda;
    ybar = g.col(k).head(ni) + ops.r_ii.transpose() * lambda;
  }
  return {bbar.topRows(nbn), bbar.bottomRows(nbn)};
}

GasState solve_pde(const NetworkModel& model, const BoundaryData& bd, const Eigen::VectorXd& y0_local,
                   const SpatialMesh& mesh, const TimeGrid& grid, const SourceFn& source, double theta) {
  const auto report = validate_network(model);
  if (!report.ok()) throw InputError("invalid network:\n" + report.to_string());
  GasSystem system(mesh, compute_coefficients(model, mesh, grid), grid, theta);
  return system.solve(y0_local, bd, source);
}

CoercivityReport check_coercivity(const SpatialMesh& mesh, const CoefficientFields& coeffs, const TimeGrid& grid,
                                  int samples, std::uint64_t seed) {
  CoercivityReport r;
  const double eps = coeffs.epsilon;
  const double g1 = coeffs.sup_gamma(1);
  const double g2 = coeffs.sup_gamma(2);
  const double t1 = coeffs.theta1 * coeffs.theta1 / (2.0 * eps);
  const double t2 = coeffs.theta2 * coeffs.theta2 / (2.0 * eps);
  r.beta = std::max(t1 + g2 / 2.0 + eps / 2.0, t2 + g1 + g2 / 2.0 + eps / 2.0);
  r.beta_alt = std::max(t1 + g1 / 2.0 + eps / 2.0, t2 + g1 / 2.0 + g2 + eps / 2.0);

  const int ni = mesh.interior_size();
  const SparseMatrix m = assemble_mass(mesh).topLeftCorner(ni, ni);
  const SparseMatrix v = assemble_v_inner(mesh).topLeftCorner(ni, ni);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> zs;
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd z(ni);
    for (int i = 0; i < ni; ++i) z(i) = normal(rng);
    zs.push_back(std::move(z));
  }
  const int times = coeffs.time_dependent ? grid.nodes() : 1;
  r.worst_margin = INFINITY;
  r.worst_relative_margin = INFINITY;
  for (int k = 0; k < times; ++k) {
    const SparseMatrix a = assemble_bilinear(mesh, coeffs, grid, grid.time(k)).topLeftCorner(ni, ni);
    for (const auto& z : zs) {
      const double vz = z.dot(v * z);
      const double margin = z.dot(a * z) + r.beta * z.dot(m * z) - 0.5 * eps * vz;
      r.worst_margin = std::min(r.worst_margin, margin);
      if (vz > 0.0) r.worst_relative_margin = std::min(r.worst_relative_margin, margin / vz);
      ++r.samples;
    }
  }
  if (r.samples == 0) r.worst_margin = r.worst_relative_margin = 0.0;
  return r;
}

AprioriReport check_apriori(const GasState& y, const Eigen::VectorXd& y0_local, const BoundaryData& bd,
                            const SpatialMesh& mesh, const TimeGrid& grid) {
  AprioriReport r;
  const SparseMatrix ml = local_mass(mesh);
  const SparseMatrix kv = local_stiffness(mesh) + ml;
  const double dt = grid.dt();
  for (int k = 0; k < grid.steps(); ++k) {
    const Eigen::VectorXd a = y.values.col(k);
    const Eigen::VectorXd b = y.values.col(k + 1);
    r.state_norm += dt / 3.0 * (a.dot(kv * a) + a.dot(kv * b) + b.dot(kv * b));
  }

  const int ni = mesh.interior_size();
  if (ni > 0) {
    const SparseMatrix& P = mesh.prolongation();
    const SparseMatrix ptm = SparseMatrix(P.transpose()) * ml;
    const SparseMatrix kvi = assemble_v_inner(mesh).topLeftCorner(ni, ni);
    Eigen::SimplicialLDLT<SparseMatrix> chol(kvi);
    for (int k = 0; k < grid.steps(); ++k) {
      const Eigen::VectorXd rate = (y.values.col(k + 1) - y.values.col(k)) / dt;
      const Eigen::VectorXd f = (ptm * rate).head(ni);
      r.derivative_norm += dt * f.dot(chol.solve(f));
    }
  }

  r.data_norm = y0_local.dot(ml * y0_local);
  for (int b = 0; b < bd.pressure.rows(); ++b) {
    r.data_norm += h1_norm_squared(bd.pressure.row(b).transpose(), grid);
    r.data_norm += h1_norm_squared(bd.flow.row(b).transpose(), grid);
  }
  r.ratio = r.data_norm > 0.0 ? (r.state_norm + r.derivative_norm) / r.data_norm : 0.0;
  return r;
}

Eigen::VectorXd space_weights(const SpatialMesh& mesh) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.local_size());
  for (int e = 0; e < mesh.pipes(); ++e) {
    const double h = mesh.spacing(e);
    for (int j = 0; j <= mesh.cells(e); ++j) {
      const double wj = (j == 0 || j == mesh.cells(e)) ? 0.5 * h : h;
      w(mesh.p_index(e, j)) = wj;
      w(mesh.q_index(e, j)) = wj;
    }
  }
  return w;
}

ViolationReport check_state_bounds(const GasState& y, const StateBounds& bounds, const SpatialMesh& mesh,
                                   const TimeGrid& grid) {
  ViolationReport r;
  r.field = Eigen::MatrixXd::Zero(y.values.rows(), y.values.cols());
  const Eigen::VectorXd ws = space_weights(mesh);
  const Eigen::VectorXd wt = grid.trapezoid_weights();
  double sp = 0.0, sq = 0.0;
  for (int e = 0; e < mesh.pipes(); ++e) {
    for (int j = 0; j <= mesh.cells(e); ++j) {
      for (int field = 0; field < 2; ++field) {
        const int i = field == 0 ? mesh.p_index(e, j) : mesh.q_index(e, j);
        const double upper = field == 0 ? bounds.p_max[e] : bounds.q_max[e];
        for (int k = 0; k < grid.nodes(); ++k) {
          const double v = y.values(i, k);
          const double viol = std::max(0.0, v - upper) + std::max(0.0, -v);
          r.field(i, k) = viol;
          r.max = std::max(r.max, viol);
          (field == 0 ? sp : sq) += ws(i) * wt(k) * viol * viol;
        }
      }
    }
  }
  r.l2_pressure = std::sqrt(sp);
  r.l2_flow = std::sqrt(sq);
  r.l2 = std::sqrt(sp + sq);
  return r;
}

ConservationReport check_conservation(const GasState& y, const SpatialMesh& mesh, const CoefficientFields& coeffs,
                                      const TimeGrid& grid, double theta) {
  ConservationReport r;
  const SparseMatrix ml = local_mass(mesh);
  const double dt = grid.dt();
  for (int k = 0; k < grid.steps(); ++k) {
    const SparseMatrix a = local_bilinear(mesh, coeffs, grid, grid.time(k) + theta * dt);
    const Eigen::VectorXd mid = theta * y.values.col(k + 1) + (1.0 - theta) * y.values.col(k);
    const Eigen::VectorXd rate = (y.values.col(k + 1) - y.values.col(k)) / dt;
    const Eigen::VectorXd mrate = ml * rate;
    const Eigen::VectorXd res = mrate + a * mid;
    for (int e = 0; e < mesh.pipes(); ++e) {
      const int n = mesh.cells(e);
      double storage = 0.0;
      double scale = 0.0;
      for (int j = 0; j <= n; ++j) {
        storage += mrate(mesh.p_index(e, j));
        scale += std::abs(mrate(mesh.p_index(e, j)));
      }
      // consistent end fluxes ε p_x(ℓ) and -ε p_x(0)
      const double flux = res(mesh.p_index(e, n)) + res(mesh.p_index(e, 0));
      const double transport = coeffs.theta1 * (mid(mesh.q_index(e, n)) - mid(mesh.q_index(e, 0)));
      scale += std::abs(flux) + std::abs(transport);
      const double residual = storage - (flux - transport);
      r.max_mass_residual = std::max(r.max_mass_residual, scale > 0.0 ? std::abs(residual) / scale : 0.0);
    }
  }
  for (const auto& jn : mesh.junctions()) {
    for (int k = 0; k < grid.nodes(); ++k) {
      double qsum = 0.0, qscale = 0.0, flux = 0.0;
      const double p0 = y.values(mesh.p_index(jn.pipes[0], jn.ends[0]), k);
      for (std::size_t i = 0; i < jn.pipes.size(); ++i) {
        const int e = jn.pipes[i];
        const double q = y.values(mesh.q_index(e, jn.ends[i]), k);
        qsum += jn.orientation[i] * q;
        qscale = std::max(qscale, std::abs(q));
        r.max_junction_pressure =
            std::max(r.max_junction_pressure, std::abs(y.values(mesh.p_index(e, jn.ends[i]), k) - p0));
        const int inner = jn.ends[i] == 0 ? 1 : mesh.cells(e) - 1;
        const double slope = (y.values(mesh.p_index(e, jn.ends[i]), k) - y.values(mesh.p_index(e, inner), k)) /
                             (jn.ends[i] == 0 ? -mesh.spacing(e) : mesh.spacing(e));
        flux += jn.orientation[i] * coeffs.epsilon * slope;
      }
      r.max_junction_flow = std::max(r.max_junction_flow, qscale > 0.0 ? std::abs(qsum) / qscale : 0.0);
      r.max_junction_flux = std::max(r.max_junction_flux, std::abs(flux));
    }
  }
  return r;
}

}  // namespace h2market
