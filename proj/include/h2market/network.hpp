#pragma once

#include "h2market/common.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace h2market {

/// Membership flags of a node in the nodal sets of the coupled network.
struct NodeRole {
  bool electricity = false;
  bool hydrogen = false;
  bool ptg = false;
  bool gtp = false;
  bool sale = false;
  bool generation = false;

  /// (V^s ∩ V^H) ∪ V^GtP ∪ V^PtG
  bool boundary() const { return (sale && hydrogen) || gtp || ptg; }
  /// V^H \ V^H_∂
  bool inner() const { return hydrogen && !boundary(); }
  /// 𝒱^g: renewable generation or a GtP station.
  bool generator() const { return generation || gtp; }
  bool renewable() const { return generation && !gtp; }

  bool operator==(const NodeRole&) const = default;
};

struct Node {
  std::string id;
  NodeRole role;
  double eta = 0.0;    // conversion efficiency at hydrogen boundary nodes
  double g_max = 0.0;  // generation bound (MW)
  double s_max = 0.0;  // sales bound (MW)
  double c_max = 0.0;  // conversion bound (MW)
  double p_max = 0.0;  // boundary pressure bound (Pa)

  bool operator==(const Node&) const = default;
};

/// A reference field on one pipe: either a constant or a table sampled on the
/// space-time grid (rows: time nodes, columns: mesh nodes along the pipe).
struct ReferenceField {
  double constant = 0.0;
  std::optional<Eigen::MatrixXd> table;

  bool is_constant() const { return !table.has_value(); }
  double at(int mesh_node, int time_node) const {
    return table ? (*table)(time_node, mesh_node) : constant;
  }
  double min_abs() const;

  bool operator==(const ReferenceField& other) const;
};

struct PipeParams {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;    // m
  double friction = 0.0;  // λ_e
  double slope = 0.0;     // α_e (rad)
  ReferenceField p_ref;   // Pa
  ReferenceField q_ref;   // kg/s
  double q_max = 0.0;     // kg/s
  double p_max = 0.0;     // Pa

  bool operator==(const PipeParams&) const = default;
};

struct LineParams {
  std::string id;
  std::string from;
  std::string to;
  double susceptance = 0.0;
  double capacity = 0.0;  // MW

  bool operator==(const LineParams&) const = default;
};

/// Constants shared by all pipes.
struct GasConstants {
  double epsilon = 0.0;      // viscosity regularization
  double sound_speed = 0.0;  // m/s
  double area = 0.0;         // m²
  double diameter = 0.0;     // m
  double gravity = 9.81;     // m/s²

  bool operator==(const GasConstants&) const = default;
};

/// The coupled electricity/hydrogen graph. Nodes, lines and pipes are stored
/// sorted by id; every index-based accessor refers to that order.
class NetworkModel {
 public:
  NetworkModel() = default;
  /// Throws InputError on structural problems (duplicate ids, dangling edges).
  NetworkModel(std::vector<Node> nodes, std::vector<LineParams> lines, std::vector<PipeParams> pipes,
               GasConstants constants, std::string slack = {});

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<LineParams>& lines() const { return lines_; }
  const std::vector<PipeParams>& pipes() const { return pipes_; }
  const GasConstants& constants() const { return constants_; }
  /// Slack bus id; defaults to the first electricity node when not given.
  const std::string& slack() const { return slack_; }

  std::optional<std::size_t> find_node(const std::string& id) const;
  std::size_t node_index(const std::string& id) const;
  const Node& node(const std::string& id) const { return nodes_[node_index(id)]; }

  std::size_t pipe_from(std::size_t pipe) const { return pipe_ends_[pipe].first; }
  std::size_t pipe_to(std::size_t pipe) const { return pipe_ends_[pipe].second; }
  std::size_t line_from(std::size_t line) const { return line_ends_[line].first; }
  std::size_t line_to(std::size_t line) const { return line_ends_[line].second; }

  /// n^e(ν): -1 at the pipe start, +1 at its end, 0 otherwise.
  int orientation(std::size_t pipe, std::size_t node) const;
  /// k(ν): pipes incident to a node, in pipe order.
  const std::vector<std::size_t>& incident_pipes(std::size_t node) const { return incident_pipes_[node]; }
  const std::vector<std::size_t>& incident_lines(std::size_t node) const { return incident_lines_[node]; }

  std::vector<std::size_t> electricity_nodes() const;
  std::vector<std::size_t> hydrogen_nodes() const;
  std::vector<std::size_t> generation_nodes() const;
  std::vector<std::size_t> sale_nodes() const;
  std::vector<std::size_t> ptg_nodes() const;
  std::vector<std::size_t> gtp_nodes() const;
  std::vector<std::size_t> inner_hydrogen_nodes() const;

  bool operator==(const NetworkModel& other) const;

 private:
  std::vector<std::size_t> select(bool (*pred)(const NodeRole&)) const;

  std::vector<Node> nodes_;
  std::vector<LineParams> lines_;
  std::vector<PipeParams> pipes_;
  GasConstants constants_;
  std::string slack_;
  std::vector<std::pair<std::size_t, std::size_t>> pipe_ends_;
  std::vector<std::pair<std::size_t, std::size_t>> line_ends_;
  std::vector<std::vector<std::size_t>> incident_pipes_;
  std::vector<std::vector<std::size_t>> incident_lines_;
};

struct ValidationIssue {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const;
  bool has(const std::string& code) const;
  std::string to_string() const;
};

/// Checks every structural and parameter invariant of the model. Problems are
/// collected into the report, never thrown.
ValidationReport validate_network(const NetworkModel& model);

/// Ordered hydrogen boundary nodes V^H_∂ (lexicographic by id).
std::vector<std::string> boundary_nodes(const NetworkModel& model);
std::vector<std::size_t> boundary_node_indices(const NetworkModel& model);

}  // namespace h2market
