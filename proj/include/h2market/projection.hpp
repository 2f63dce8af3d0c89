#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

namespace h2market {

/// One agent's feasible polytope
///   lo ≤ x ≤ hi,  Σ_j a_j x_j = 0 for every balance group,  bᵀx ≥ 0,
/// with Euclidean projection in the diagonal metric diag(weight).
class AgentPolytope {
 public:
  AgentPolytope() = default;
  AgentPolytope(Eigen::VectorXd lo, Eigen::VectorXd hi, Eigen::VectorXd weight,
                std::vector<std::vector<std::pair<int, double>>> balance, Eigen::VectorXd injection);

  int size() const { return static_cast<int>(lo_.size()); }
  const Eigen::VectorXd& lower() const { return lo_; }
  const Eigen::VectorXd& upper() const { return hi_; }
  const Eigen::VectorXd& weight() const { return weight_; }
  const Eigen::VectorXd& injection() const { return injection_; }
  bool has_injection() const { return injection_.size() > 0 && injection_.cwiseAbs().maxCoeff() > 0.0; }

  /// argmin Σ w_j (x_j − y_j)² over the polytope. Throws SolverError if the
  /// polytope is empty.
  Eigen::VectorXd project(const Eigen::VectorXd& y) const { return project(y, weight_); }
  /// Same projection in the metric diag(w).
  Eigen::VectorXd project(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const;

  double balance_residual(const Eigen::VectorXd& x) const;
  double injection_value(const Eigen::VectorXd& x) const;
  double box_violation(const Eigen::VectorXd& x) const;

 private:
  Eigen::VectorXd project_for(const Eigen::VectorXd& y, const Eigen::VectorXd& w, double mu) const;

  Eigen::VectorXd lo_, hi_, weight_;
  std::vector<std::vector<std::pair<int, double>>> balance_;
  std::vector<int> free_;  // variables in no balance group
  Eigen::VectorXd injection_;
};

}  // namespace h2market
