#pragma once

#include "h2market/common.hpp"
#include "h2market/network.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace h2market {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// P1 finite elements on every pipe plus the constrained degree-of-freedom map.
///
/// Two layouts are used. The local layout stores, pipe after pipe, the nodal
/// values [p_0..p_N, q_0..q_N]. The free layout holds the unknowns of the
/// constrained space: interior unknowns first, then the pinned boundary values
/// [𝔭 of every boundary node, 𝔮 of every boundary node]. `prolongation()` maps
/// free to local values.
class SpatialMesh {
 public:
  SpatialMesh() = default;
  SpatialMesh(const NetworkModel& model, int cells_per_pipe);
  SpatialMesh(const NetworkModel& model, std::vector<int> cells);

  int pipes() const { return static_cast<int>(cells_.size()); }
  int cells(int e) const { return cells_[e]; }
  double spacing(int e) const { return spacing_[e]; }
  double length(int e) const { return spacing_[e] * cells_[e]; }
  double max_spacing() const;
  double total_length() const;
  double x(int e, int j) const { return spacing_[e] * j; }

  int local_size() const { return local_size_; }
  int p_index(int e, int j) const { return offset_[e] + j; }
  int q_index(int e, int j) const { return offset_[e] + cells_[e] + 1 + j; }

  int free_size() const { return interior_ + 2 * boundary_count(); }
  int interior_size() const { return interior_; }
  int boundary_count() const { return static_cast<int>(boundary_nodes_.size()); }
  /// Free index of 𝔭 (field 0) or 𝔮 (field 1) at the b-th boundary node.
  int pinned_index(int b, int field) const { return interior_ + field * boundary_count() + b; }
  const std::vector<std::size_t>& boundary_nodes() const { return boundary_nodes_; }
  /// Pipe and local end index (0 or N_e) attached to the b-th boundary node.
  int boundary_pipe(int b) const { return boundary_pipe_[b]; }
  int boundary_end(int b) const { return boundary_end_[b]; }

  const SparseMatrix& prolongation() const { return P_; }

  /// Inner junctions and the pipes meeting there, used by diagnostics.
  struct Junction {
    std::size_t node;
    std::vector<int> pipes;
    std::vector<int> ends;
    std::vector<int> orientation;
  };
  const std::vector<Junction>& junctions() const { return junctions_; }

 private:
  void build(const NetworkModel& model);

  std::vector<int> cells_;
  std::vector<double> spacing_;
  std::vector<int> offset_;
  int local_size_ = 0;
  int interior_ = 0;
  std::vector<std::size_t> boundary_nodes_;
  std::vector<int> boundary_pipe_;
  std::vector<int> boundary_end_;
  std::vector<Junction> junctions_;
  SparseMatrix P_;
};

/// Nodal values in the local layout; column k holds time node t_k.
struct GasState {
  Eigen::MatrixXd values;

  double p(const SpatialMesh& m, int e, int j, int k) const { return values(m.p_index(e, j), k); }
  double q(const SpatialMesh& m, int e, int j, int k) const { return values(m.q_index(e, j), k); }
};

/// Time series 𝔭, 𝔮 at every boundary node (rows follow `boundary_nodes`).
struct BoundaryData {
  Eigen::MatrixXd pressure;
  Eigen::MatrixXd flow;

  static BoundaryData zeros(int boundary_count, int time_nodes);
};

/// θ₁, θ₂ and the sampled γ fields (per pipe: rows time nodes, columns mesh nodes).
struct CoefficientFields {
  double theta1 = 0.0;
  double theta2 = 0.0;
  double epsilon = 0.0;
  std::vector<Eigen::MatrixXd> gamma1;
  std::vector<Eigen::MatrixXd> gamma2;
  bool time_dependent = false;

  /// Nodal γ values of pipe e at time t (linear in time between grid nodes).
  Eigen::VectorXd gamma_at(int which, int e, const TimeGrid& grid, double t) const;
  double sup_gamma(int which) const;
};

/// Per-pipe state bounds q^max, p^max.
struct StateBounds {
  std::vector<double> q_max;
  std::vector<double> p_max;

  static StateBounds from_model(const NetworkModel& model);
};

CoefficientFields compute_coefficients(const NetworkModel& model, const SpatialMesh& mesh,
                                       const TimeGrid& grid);

/// Local (block diagonal per pipe) matrices.
SparseMatrix local_mass(const SpatialMesh& mesh);
SparseMatrix local_stiffness(const SpatialMesh& mesh);
SparseMatrix local_bilinear(const SpatialMesh& mesh, const CoefficientFields& coeffs,
                            const TimeGrid& grid, double t);

/// Galerkin matrices on the free layout, rows are test functions.
SparseMatrix assemble_bilinear(const SpatialMesh& mesh, const CoefficientFields& coeffs,
                               const TimeGrid& grid, double t);
SparseMatrix assemble_mass(const SpatialMesh& mesh);
/// ε-free V inner product matrix (stiffness + mass, both fields).
SparseMatrix assemble_v_inner(const SpatialMesh& mesh);

/// Piecewise affine lifting of the boundary data, zero at inner nodes.
GasState lift_boundary(const BoundaryData& bd, const SpatialMesh& mesh, const TimeGrid& grid);

/// Forcing term: nodal values in the local layout at time t.
using SourceFn = std::function<Eigen::VectorXd(double t)>;

struct SolveStats {
  double max_relative_residual = 0.0;
  int factorizations = 0;
};

/// Time stepping of the discrete system plus its adjoint. All factorizations are
/// built in the constructor, so a constructed system is safe to share between
/// threads.
class GasSystem {
 public:
  GasSystem(const SpatialMesh& mesh, CoefficientFields coeffs, const TimeGrid& grid, double theta = 1.0);

  const SpatialMesh& mesh() const { return mesh_; }
  const TimeGrid& grid() const { return grid_; }
  const CoefficientFields& coefficients() const { return coeffs_; }
  double theta() const { return theta_; }
  int factorizations() const { return static_cast<int>(steps_.size()); }

  /// Free-layout initial vector: least-squares projection of y0 onto the
  /// constrained space, compatibility check, pinned values replaced by bd(t_0).
  Eigen::VectorXd initial_free(const Eigen::VectorXd& y0_local, const BoundaryData& bd) const;

  GasState solve(const Eigen::VectorXd& y0_local, const BoundaryData& bd, const SourceFn& source = {},
                 SolveStats* stats = nullptr) const;

  /// Given dJ/dy in the local layout at every time node, returns dJ/d(bd)
  /// for a functional J of the state produced by `solve` (y0 held fixed).
  BoundaryData adjoint(const Eigen::MatrixXd& state_gradient) const;

 private:
  struct StepOperators {
    mutable Eigen::SparseLU<SparseMatrix> lu;  // transpose() is non-const but does not modify
    SparseMatrix lhs;
    SparseMatrix r_ii;
    SparseMatrix r_ib;
    SparseMatrix f_ib;
  };
  const StepOperators& step(int k) const { return *steps_[coeffs_.time_dependent ? k : 0]; }
  Eigen::VectorXd solve_checked(const StepOperators& ops, const Eigen::VectorXd& rhs, double* rel) const;

  SpatialMesh mesh_;
  CoefficientFields coeffs_;
  TimeGrid grid_;
  double theta_;
  SparseMatrix mass_;
  SparseMatrix mass_local_;
  std::vector<std::unique_ptr<StepOperators>> steps_;
};

GasState solve_pde(const NetworkModel& model, const BoundaryData& bd, const Eigen::VectorXd& y0_local,
                   const SpatialMesh& mesh, const TimeGrid& grid, const SourceFn& source = {},
                   double theta = 1.0);

struct CoercivityReport {
  double beta = 0.0;        // bound for the implemented term placement
  double beta_alt = 0.0;    // same bound with the roles of γ₁ and γ₂ interchanged
  double worst_margin = 0.0;
  double worst_relative_margin = 0.0;  // margin / ‖z‖²_V
  int samples = 0;
};

/// Samples a(z,z;t) + β‖z‖²_H − (ε/2)‖z‖²_V over random z vanishing at the
/// boundary DOFs and every time node.
CoercivityReport check_coercivity(const SpatialMesh& mesh, const CoefficientFields& coeffs,
                                  const TimeGrid& grid, int samples, std::uint64_t seed = 0);

struct AprioriReport {
  double state_norm = 0.0;       // ‖y‖²_{L²(0,T;V)}
  double derivative_norm = 0.0;  // ‖ẏ‖²_{L²(0,T;V*)}
  double data_norm = 0.0;        // ‖y0‖²_H + Σ ‖𝔭‖²_{H¹} + ‖𝔮‖²_{H¹}
  double ratio = 0.0;
};

AprioriReport check_apriori(const GasState& y, const Eigen::VectorXd& y0_local, const BoundaryData& bd,
                            const SpatialMesh& mesh, const TimeGrid& grid);

struct ViolationReport {
  Eigen::MatrixXd field;  // local layout × time nodes
  double l2_pressure = 0.0;
  double l2_flow = 0.0;
  double l2 = 0.0;
  double max = 0.0;
};

ViolationReport check_state_bounds(const GasState& y, const StateBounds& bounds, const SpatialMesh& mesh,
                                   const TimeGrid& grid);

/// Space-time quadrature weights for nodal values in the local layout
/// (trapezoid in x per pipe and in t).
Eigen::VectorXd space_weights(const SpatialMesh& mesh);

struct ConservationReport {
  double max_mass_residual = 0.0;     // relative, per pipe and step
  double max_junction_flow = 0.0;     // |Σ n q| at inner junctions
  double max_junction_pressure = 0.0; // pressure jump at inner junctions
  double max_junction_flux = 0.0;     // |Σ n ε p_x| (natural condition, O(h))
};

/// Per-pipe balance of the pressure equation integrated over the pipe, using
/// the consistent end fluxes of the discrete scheme.
ConservationReport check_conservation(const GasState& y, const SpatialMesh& mesh,
                                      const CoefficientFields& coeffs, const TimeGrid& grid,
                                      double theta = 1.0);

}  // namespace h2market
