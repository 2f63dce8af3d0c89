#pragma once

#include "h2market/equilibrium.hpp"
#include "h2market/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace h2market {

/// One comparison against an independently computed value.
struct OracleCheck {
  std::string name;
  double value = 0.0;  // measured deviation (or the quantity itself for lower bounds)
  double limit = 0.0;
  bool pass = false;
  std::string detail;
};

struct OracleResult {
  std::string suite;
  std::vector<OracleCheck> checks;

  bool pass() const;
};

struct OracleOptions {
  std::uint64_t seed = 0;
  std::vector<NetworkModel> networks;  // extra networks for the coercivity suite
};

/// "ptdf-tree", "cournot", "manufactured", "coercivity".
const std::vector<std::string>& oracle_suites();

/// Runs one suite, or every suite for "all". Throws InputError on an unknown name.
std::vector<OracleResult> run_oracle(const std::string& suite, const OracleOptions& options = {});

/// Symmetric linear Cournot equilibrium at one node: s = (a − κ) / (b (N + 1)).
double cournot_sales(int agents, double a, double b, double kappa);

/// One node with generation and sales, no lines or pipes, constant demand.
PlanInputs cournot_inputs(int agents, double a, double b, double kappa, double horizon = 1.0, int steps = 4);

/// Six-node radial grid with susceptances drawn from [0.5, 2].
NetworkModel tree_grid_network(std::uint64_t seed = 0);

}  // namespace h2market
