#pragma once

#include "h2market/equilibrium.hpp"
#include "h2market/gas_dynamics.hpp"
#include "h2market/network.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace h2market {

/// A constant (one value) or a series with one value per time node.
struct Series {
  std::vector<double> values;

  Eigen::RowVectorXd expand(int time_nodes, const std::string& what) const;
  bool operator==(const Series&) const = default;
};

struct DemandEntry {
  Series a;
  Series b;
  bool operator==(const DemandEntry&) const = default;
};

struct ScenarioEntry {
  double weight = 0.0;
  std::map<std::string, DemandEntry> demand;  // per sale node
  bool operator==(const ScenarioEntry&) const = default;
};

struct AgentCosts {
  std::map<std::string, double> generation;
  std::map<std::string, double> conversion;
  bool operator==(const AgentCosts&) const = default;
};

/// Per-agent overrides of the node bounds.
struct AgentBoundOverride {
  std::map<std::string, double> g_max, s_max, c_max, p_max;
  bool operator==(const AgentBoundOverride&) const = default;
};

struct ScenarioFile {
  double horizon = 1.0;
  int steps = 1;
  int agents = 1;
  std::vector<ScenarioEntry> scenarios;
  std::optional<double> a_max;
  std::optional<double> b_max;
  std::vector<AgentCosts> costs;  // one entry shared by all agents, or one per agent
  std::vector<AgentBoundOverride> bounds;
  InitialStateSpec initial;
  SolverConfig solver;
  bool double_sided = false;
};

struct BoundaryFile {
  double horizon = 1.0;
  int steps = 1;
  int cells = 8;
  double theta = 1.0;
  InitialStateSpec initial;
  std::map<std::string, std::pair<Series, Series>> nodes;  // pressure, flow
};

/// Parsers report errors as "<source>:<line>:<column>: message" in an InputError.
NetworkModel parse_network(const std::string& text, const std::string& source = "<network>");
NetworkModel load_network(const std::filesystem::path& path);
std::string emit_network(const NetworkModel& model);

ScenarioFile parse_scenario(const std::string& text, const std::string& source = "<scenario>");
ScenarioFile load_scenario(const std::filesystem::path& path);

BoundaryFile parse_boundary(const std::string& text, const std::string& source = "<boundary>");
BoundaryFile load_boundary(const std::filesystem::path& path);

/// Resolves node ids, averages scenarios and fills the plan inputs.
PlanInputs build_plan_inputs(const NetworkModel& model, const ScenarioFile& scenario);

/// Boundary data in mesh order; nodes missing from the file get zero series.
BoundaryData build_boundary_data(const NetworkModel& model, const SpatialMesh& mesh, const TimeGrid& grid,
                                 const BoundaryFile& file);

/// "%.17g" formatting used by every numeric output.
std::string format_number(double v);

std::string decisions_csv(const std::vector<AgentDecision>& decisions, const GamePlan& plan);
std::string state_csv(const GasState& state, const NetworkModel& model, const SpatialMesh& mesh, const TimeGrid& grid);
std::string prices_csv(const std::vector<AgentDecision>& decisions, const GamePlan& plan);

/// Reads a decisions CSV back into per-agent decisions.
std::vector<AgentDecision> parse_decisions_csv(const std::string& text, const GamePlan& plan);

struct RunInfo {
  std::string command;
  std::string network;
  std::string scenario;
  std::uint64_t seed = 0;
  bool record_wall_time = false;
};

inline constexpr const char* kReportSchema = "h2market.report/1";

std::string report_json(const EquilibriumReport& report, const GamePlan& plan, const RunInfo& info);

/// Writes decisions.csv, state.csv, prices.csv and report.json into `dir`.
void write_bundle(const std::filesystem::path& dir, const EquilibriumReport& report, const GamePlan& plan,
                  const RunInfo& info);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace h2market
