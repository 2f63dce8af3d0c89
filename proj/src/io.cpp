#include "h2market/io.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace h2market {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const auto m = at.Mark();
    if (m.is_null()) throw InputError(fmt::format("{}: {}", source_, msg));
    throw InputError(fmt::format("{}:{}:{}: {}", source_, m.line + 1, m.column + 1, msg));
  }

  YAML::Node load(const std::string& text) const {
    try {
      YAML::Node root = YAML::Load(text);
      if (!root.IsMap()) throw InputError(fmt::format("{}: top level must be a mapping", source_));
      return root;
    } catch (const YAML::Exception& e) {
      throw InputError(fmt::format("{}:{}:{}: {}", source_, e.mark.line + 1, e.mark.column + 1, e.msg));
    }
  }

  void keys(const YAML::Node& map, std::initializer_list<const char*> allowed, const std::string& where) const {
    if (!map.IsMap()) fail(map, fmt::format("{} must be a mapping", where));
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        fail(kv.first, fmt::format("unknown key '{}' in {}", key, where));
      }
    }
  }

  double number(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, fmt::format("{} must be a number", what));
    try {
      const double v = n.as<double>();
      if (!std::isfinite(v)) fail(n, fmt::format("{} must be finite", what));
      return v;
    } catch (const YAML::Exception&) {
      fail(n, fmt::format("{} must be a number, got '{}'", what, n.Scalar()));
    }
  }

  double number(const YAML::Node& map, const char* key, const std::string& where) const {
    const auto n = map[key];
    if (!n) fail(map, fmt::format("{} is missing '{}'", where, key));
    return number(n, fmt::format("{}.{}", where, key));
  }

  double number_or(const YAML::Node& map, const char* key, double fallback, const std::string& where) const {
    const auto n = map[key];
    return n ? number(n, fmt::format("{}.{}", where, key)) : fallback;
  }

  int integer(const YAML::Node& n, const std::string& what) const {
    const double v = number(n, what);
    if (v != std::floor(v) || std::abs(v) > 1e9) fail(n, fmt::format("{} must be an integer", what));
    return static_cast<int>(v);
  }

  std::string text(const YAML::Node& map, const char* key, const std::string& where) const {
    const auto n = map[key];
    if (!n) fail(map, fmt::format("{} is missing '{}'", where, key));
    if (!n.IsScalar()) fail(n, fmt::format("{}.{} must be a string", where, key));
    return n.as<std::string>();
  }

  bool boolean(const YAML::Node& n, const std::string& what) const {
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, fmt::format("{} must be true or false", what));
    }
  }

  Series series(const YAML::Node& n, const std::string& what) const {
    Series s;
    if (n.IsSequence()) {
      for (std::size_t i = 0; i < n.size(); ++i) s.values.push_back(number(n[i], fmt::format("{}[{}]", what, i)));
      if (s.values.empty()) fail(n, fmt::format("{} must not be empty", what));
    } else {
      s.values.push_back(number(n, what));
    }
    return s;
  }

  std::map<std::string, double> number_map(const YAML::Node& n, const std::string& what) const {
    if (!n.IsMap()) fail(n, fmt::format("{} must map node ids to numbers", what));
    std::map<std::string, double> out;
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      out[key] = number(kv.second, fmt::format("{}.{}", what, key));
    }
    return out;
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
};

ReferenceField reference(const Reader& rd, const YAML::Node& n, const std::string& what) {
  ReferenceField f;
  if (n.IsMap()) {
    rd.keys(n, {"table"}, what);
    const auto t = n["table"];
    if (!t || !t.IsSequence() || t.size() == 0) rd.fail(n, fmt::format("{}.table must be a list of rows", what));
    const auto cols = t[0].size();
    Eigen::MatrixXd m(t.size(), cols);
    for (std::size_t r = 0; r < t.size(); ++r) {
      if (!t[r].IsSequence() || t[r].size() != cols) rd.fail(t[r], fmt::format("{}.table rows must have equal length", what));
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = rd.number(t[r][c], fmt::format("{}.table[{}][{}]", what, r, c));
    }
    f.table = m;
  } else {
    f.constant = rd.number(n, what);
  }
  return f;
}

NodeRole parse_roles(const Reader& rd, const YAML::Node& n, const std::string& where) {
  if (!n || !n.IsSequence()) rd.fail(n ? n : YAML::Node(), fmt::format("{}.roles must be a list", where));
  NodeRole r;
  for (const auto& item : n) {
    const auto s = item.as<std::string>();
    if (s == "electricity") r.electricity = true;
    else if (s == "hydrogen") r.hydrogen = true;
    else if (s == "ptg") r.ptg = true;
    else if (s == "gtp") r.gtp = true;
    else if (s == "sale") r.sale = true;
    else if (s == "generation") r.generation = true;
    else rd.fail(item, fmt::format("unknown role '{}' (expected electricity, hydrogen, ptg, gtp, sale, generation)", s));
  }
  return r;
}

std::vector<std::string> role_names(const NodeRole& r) {
  std::vector<std::string> out;
  if (r.electricity) out.push_back("electricity");
  if (r.hydrogen) out.push_back("hydrogen");
  if (r.ptg) out.push_back("ptg");
  if (r.gtp) out.push_back("gtp");
  if (r.sale) out.push_back("sale");
  if (r.generation) out.push_back("generation");
  return out;
}

InitialStateSpec parse_initial(const Reader& rd, const YAML::Node& n) {
  InitialStateSpec s;
  rd.keys(n, {"pressure", "flow", "pipes"}, "initial_state");
  s.pressure = rd.number_or(n, "pressure", 0.0, "initial_state");
  s.flow = rd.number_or(n, "flow", 0.0, "initial_state");
  if (const auto pipes = n["pipes"]) {
    if (!pipes.IsMap()) rd.fail(pipes, "initial_state.pipes must map pipe ids to profiles");
    for (const auto& kv : pipes) {
      const auto id = kv.first.as<std::string>();
      const auto where = fmt::format("initial_state.pipes.{}", id);
      const auto& p = kv.second;
      rd.keys(p, {"pressure", "flow", "p_start", "p_end", "q_start", "q_end"}, where);
      PipeProfile pr;
      const double pc = rd.number_or(p, "pressure", s.pressure, where);
      const double qc = rd.number_or(p, "flow", s.flow, where);
      pr.p_start = rd.number_or(p, "p_start", pc, where);
      pr.p_end = rd.number_or(p, "p_end", pc, where);
      pr.q_start = rd.number_or(p, "q_start", qc, where);
      pr.q_end = rd.number_or(p, "q_end", qc, where);
      s.pipes[id] = pr;
    }
  }
  return s;
}

void parse_solver(const Reader& rd, const YAML::Node& n, ScenarioFile& f) {
  const std::string w = "solver";
  rd.keys(n,
          {"method", "gamma0", "gamma_max", "factor", "rung_tol", "final_tol", "br_tol", "br_max_iter", "max_sweeps",
           "anderson", "eg_max_iter", "tikhonov", "gap_tol", "violation_target", "residual_tol", "randomize_order", "concurrent",
           "theta", "cells", "quadrature", "double_sided"},
          w);
  auto& c = f.solver;
  if (const auto m = n["method"]) {
    try {
      c.method = parse_method(m.as<std::string>());
    } catch (const InputError& e) {
      rd.fail(m, e.what());
    }
  }
  c.penalty.gamma0 = rd.number_or(n, "gamma0", c.penalty.gamma0, w);
  c.penalty.gamma_max = rd.number_or(n, "gamma_max", c.penalty.gamma_max, w);
  c.penalty.factor = rd.number_or(n, "factor", c.penalty.factor, w);
  c.penalty.rung_tol = rd.number_or(n, "rung_tol", c.penalty.rung_tol, w);
  c.penalty.final_tol = rd.number_or(n, "final_tol", c.penalty.final_tol, w);
  c.br_tol = rd.number_or(n, "br_tol", c.br_tol, w);
  if (const auto v = n["br_max_iter"]) c.br_max_iter = rd.integer(v, "solver.br_max_iter");
  if (const auto v = n["max_sweeps"]) c.max_sweeps = rd.integer(v, "solver.max_sweeps");
  if (const auto v = n["anderson"]) c.anderson = rd.integer(v, "solver.anderson");
  if (const auto v = n["eg_max_iter"]) c.eg_max_iter = rd.integer(v, "solver.eg_max_iter");
  if (const auto v = n["cells"]) c.cells = rd.integer(v, "solver.cells");
  c.tikhonov = rd.number_or(n, "tikhonov", c.tikhonov, w);
  c.gap_tol = rd.number_or(n, "gap_tol", c.gap_tol, w);
  c.violation_target = rd.number_or(n, "violation_target", c.violation_target, w);
  c.residual_tol = rd.number_or(n, "residual_tol", c.residual_tol, w);
  c.theta = rd.number_or(n, "theta", c.theta, w);
  if (const auto v = n["randomize_order"]) c.randomize_order = rd.boolean(v, "solver.randomize_order");
  if (const auto v = n["concurrent"]) c.concurrent = rd.boolean(v, "solver.concurrent");
  if (const auto v = n["double_sided"]) f.double_sided = rd.boolean(v, "solver.double_sided");
  if (const auto v = n["quadrature"]) {
    const auto q = v.as<std::string>();
    if (q == "trapezoid") c.quadrature = TimeQuadrature::trapezoid;
    else if (q == "simpson") c.quadrature = TimeQuadrature::simpson;
    else rd.fail(v, fmt::format("unknown quadrature '{}' (expected trapezoid or simpson)", q));
  }
  if (c.cells < 1) rd.fail(n, "solver.cells must be positive");
  if (c.anderson < 0) rd.fail(n, "solver.anderson must be non-negative");
}

void time_section(const Reader& rd, const YAML::Node& root, double& horizon, int& steps) {
  const auto t = root["time"];
  if (!t) rd.fail(root, "missing 'time' section");
  rd.keys(t, {"horizon", "steps"}, "time");
  horizon = rd.number(t, "horizon", "time");
  steps = rd.integer(t["steps"] ? t["steps"] : t, "time.steps");
  if (!(horizon > 0.0)) rd.fail(t, "time.horizon must be positive");
  if (steps < 1) rd.fail(t, "time.steps must be at least 1");
}

}  // namespace

Eigen::RowVectorXd Series::expand(int nt, const std::string& what) const {
  if (values.size() == 1) return Eigen::RowVectorXd::Constant(nt, values[0]);
  if (static_cast<int>(values.size()) != nt) {
    throw InputError(fmt::format("{}: series has {} values, expected 1 or {} (one per time node)", what, values.size(), nt));
  }
  return Eigen::Map<const Eigen::RowVectorXd>(values.data(), nt);
}

NetworkModel parse_network(const std::string& text, const std::string& source) {
  Reader rd(source);
  const YAML::Node root = rd.load(text);
  rd.keys(root, {"format", "constants", "slack", "nodes", "lines", "pipes"}, "network file");
  if (const auto f = root["format"]; f && f.as<std::string>() != "h2market.network/1") {
    rd.fail(f, fmt::format("unsupported format '{}'", f.as<std::string>()));
  }
  GasConstants gc;
  if (const auto c = root["constants"]) {
    rd.keys(c, {"epsilon", "sound_speed", "area", "diameter", "gravity"}, "constants");
    gc.epsilon = rd.number_or(c, "epsilon", 0.0, "constants");
    gc.sound_speed = rd.number_or(c, "sound_speed", 0.0, "constants");
    gc.area = rd.number_or(c, "area", 0.0, "constants");
    gc.diameter = rd.number_or(c, "diameter", 0.0, "constants");
    gc.gravity = rd.number_or(c, "gravity", 9.81, "constants");
  }
  std::vector<Node> nodes;
  const auto ns = root["nodes"];
  if (!ns || !ns.IsSequence()) rd.fail(ns ? ns : root, "'nodes' must be a list");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const auto& n = ns[i];
    const auto where = fmt::format("nodes[{}]", i);
    rd.keys(n, {"id", "roles", "eta", "g_max", "s_max", "c_max", "p_max"}, where);
    Node node;
    node.id = rd.text(n, "id", where);
    node.role = parse_roles(rd, n["roles"], where);
    node.eta = rd.number_or(n, "eta", 0.0, where);
    node.g_max = rd.number_or(n, "g_max", 0.0, where);
    node.s_max = rd.number_or(n, "s_max", 0.0, where);
    node.c_max = rd.number_or(n, "c_max", 0.0, where);
    node.p_max = rd.number_or(n, "p_max", 0.0, where);
    nodes.push_back(node);
  }
  std::vector<LineParams> lines;
  if (const auto ls = root["lines"]) {
    if (!ls.IsSequence()) rd.fail(ls, "'lines' must be a list");
    for (std::size_t i = 0; i < ls.size(); ++i) {
      const auto& n = ls[i];
      const auto where = fmt::format("lines[{}]", i);
      rd.keys(n, {"id", "from", "to", "susceptance", "capacity"}, where);
      lines.push_back({rd.text(n, "id", where), rd.text(n, "from", where), rd.text(n, "to", where),
                       rd.number(n, "susceptance", where), rd.number(n, "capacity", where)});
    }
  }
  std::vector<PipeParams> pipes;
  if (const auto ps = root["pipes"]) {
    if (!ps.IsSequence()) rd.fail(ps, "'pipes' must be a list");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto& n = ps[i];
      const auto where = fmt::format("pipes[{}]", i);
      rd.keys(n, {"id", "from", "to", "length", "friction", "slope", "p_ref", "q_ref", "q_max", "p_max"}, where);
      PipeParams p;
      p.id = rd.text(n, "id", where);
      p.from = rd.text(n, "from", where);
      p.to = rd.text(n, "to", where);
      p.length = rd.number(n, "length", where);
      p.friction = rd.number(n, "friction", where);
      p.slope = rd.number_or(n, "slope", 0.0, where);
      if (!n["p_ref"]) rd.fail(n, fmt::format("{} is missing 'p_ref'", where));
      if (!n["q_ref"]) rd.fail(n, fmt::format("{} is missing 'q_ref'", where));
      p.p_ref = reference(rd, n["p_ref"], where + ".p_ref");
      p.q_ref = reference(rd, n["q_ref"], where + ".q_ref");
      p.q_max = rd.number(n, "q_max", where);
      p.p_max = rd.number(n, "p_max", where);
      pipes.push_back(p);
    }
  }
  std::string slack;
  if (const auto s = root["slack"]) slack = s.as<std::string>();
  try {
    return NetworkModel(std::move(nodes), std::move(lines), std::move(pipes), gc, slack);
  } catch (const InputError& e) {
    throw InputError(fmt::format("{}: {}", source, e.what()));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

NetworkModel load_network(const std::filesystem::path& path) { return parse_network(read_file(path), path.string()); }

std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  return fmt::format("{:.17g}", v);
}

std::string emit_network(const NetworkModel& m) {
  YAML::Emitter out;
  auto num = [](double v) { return format_number(v); };
  auto ref = [&](const ReferenceField& f) {
    if (f.is_constant()) {
      out << num(f.constant);
      return;
    }
    out << YAML::BeginMap << YAML::Key << "table" << YAML::Value << YAML::BeginSeq;
    for (Eigen::Index r = 0; r < f.table->rows(); ++r) {
      out << YAML::Flow << YAML::BeginSeq;
      for (Eigen::Index c = 0; c < f.table->cols(); ++c) out << num((*f.table)(r, c));
      out << YAML::EndSeq;
    }
    out << YAML::EndSeq << YAML::EndMap;
  };
  const auto& c = m.constants();
  out << YAML::BeginMap;
  out << YAML::Key << "format" << YAML::Value << "h2market.network/1";
  out << YAML::Key << "constants" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "epsilon" << YAML::Value << num(c.epsilon);
  out << YAML::Key << "sound_speed" << YAML::Value << num(c.sound_speed);
  out << YAML::Key << "area" << YAML::Value << num(c.area);
  out << YAML::Key << "diameter" << YAML::Value << num(c.diameter);
  out << YAML::Key << "gravity" << YAML::Value << num(c.gravity);
  out << YAML::EndMap;
  if (!m.slack().empty()) out << YAML::Key << "slack" << YAML::Value << m.slack();
  out << YAML::Key << "nodes" << YAML::Value << YAML::BeginSeq;
  for (const auto& n : m.nodes()) {
    out << YAML::BeginMap << YAML::Key << "id" << YAML::Value << n.id;
    out << YAML::Key << "roles" << YAML::Value << YAML::Flow << role_names(n.role);
    out << YAML::Key << "eta" << YAML::Value << num(n.eta);
    out << YAML::Key << "g_max" << YAML::Value << num(n.g_max);
    out << YAML::Key << "s_max" << YAML::Value << num(n.s_max);
    out << YAML::Key << "c_max" << YAML::Value << num(n.c_max);
    out << YAML::Key << "p_max" << YAML::Value << num(n.p_max);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "lines" << YAML::Value << YAML::BeginSeq;
  for (const auto& l : m.lines()) {
    out << YAML::BeginMap << YAML::Key << "id" << YAML::Value << l.id << YAML::Key << "from" << YAML::Value << l.from
        << YAML::Key << "to" << YAML::Value << l.to << YAML::Key << "susceptance" << YAML::Value << num(l.susceptance)
        << YAML::Key << "capacity" << YAML::Value << num(l.capacity) << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "pipes" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : m.pipes()) {
    out << YAML::BeginMap << YAML::Key << "id" << YAML::Value << p.id << YAML::Key << "from" << YAML::Value << p.from
        << YAML::Key << "to" << YAML::Value << p.to << YAML::Key << "length" << YAML::Value << num(p.length)
        << YAML::Key << "friction" << YAML::Value << num(p.friction) << YAML::Key << "slope" << YAML::Value
        << num(p.slope);
    out << YAML::Key << "p_ref" << YAML::Value;
    ref(p.p_ref);
    out << YAML::Key << "q_ref" << YAML::Value;
    ref(p.q_ref);
    out << YAML::Key << "q_max" << YAML::Value << num(p.q_max) << YAML::Key << "p_max" << YAML::Value << num(p.p_max)
        << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ScenarioFile parse_scenario(const std::string& text, const std::string& source) {
  Reader rd(source);
  const YAML::Node root = rd.load(text);
  rd.keys(root,
          {"format", "time", "agents", "scenarios", "demand_bounds", "costs", "bounds", "initial_state", "solver"},
          "scenario file");
  if (const auto f = root["format"]; f && f.as<std::string>() != "h2market.scenario/1") {
    rd.fail(f, fmt::format("unsupported format '{}'", f.as<std::string>()));
  }
  ScenarioFile f;
  time_section(rd, root, f.horizon, f.steps);
  f.agents = root["agents"] ? rd.integer(root["agents"], "agents") : 1;
  if (f.agents < 1) rd.fail(root["agents"], "agents must be at least 1");

  const auto sc = root["scenarios"];
  if (!sc || !sc.IsSequence() || sc.size() == 0) rd.fail(sc ? sc : root, "'scenarios' must be a non-empty list");
  for (std::size_t m = 0; m < sc.size(); ++m) {
    const auto where = fmt::format("scenarios[{}]", m);
    rd.keys(sc[m], {"weight", "demand"}, where);
    ScenarioEntry e;
    e.weight = rd.number(sc[m], "weight", where);
    const auto d = sc[m]["demand"];
    if (!d || !d.IsMap()) rd.fail(sc[m], fmt::format("{}.demand must map sale nodes to a and b", where));
    for (const auto& kv : d) {
      const auto id = kv.first.as<std::string>();
      const auto w2 = fmt::format("{}.demand.{}", where, id);
      rd.keys(kv.second, {"a", "b"}, w2);
      if (!kv.second["a"] || !kv.second["b"]) rd.fail(kv.second, fmt::format("{} needs both a and b", w2));
      e.demand[id] = {rd.series(kv.second["a"], w2 + ".a"), rd.series(kv.second["b"], w2 + ".b")};
    }
    f.scenarios.push_back(std::move(e));
  }
  if (const auto b = root["demand_bounds"]) {
    rd.keys(b, {"a_max", "b_max"}, "demand_bounds");
    if (b["a_max"]) f.a_max = rd.number(b["a_max"], "demand_bounds.a_max");
    if (b["b_max"]) f.b_max = rd.number(b["b_max"], "demand_bounds.b_max");
  }
  auto agent_costs = [&](const YAML::Node& n, const std::string& where) {
    rd.keys(n, {"generation", "conversion"}, where);
    AgentCosts c;
    if (n["generation"]) c.generation = rd.number_map(n["generation"], where + ".generation");
    if (n["conversion"]) c.conversion = rd.number_map(n["conversion"], where + ".conversion");
    return c;
  };
  if (const auto c = root["costs"]) {
    if (c.IsSequence()) {
      for (std::size_t i = 0; i < c.size(); ++i) f.costs.push_back(agent_costs(c[i], fmt::format("costs[{}]", i)));
      if (static_cast<int>(f.costs.size()) != f.agents) {
        rd.fail(c, fmt::format("costs lists {} agents but agents is {}", f.costs.size(), f.agents));
      }
    } else {
      f.costs.push_back(agent_costs(c, "costs"));
    }
  }
  if (const auto b = root["bounds"]) {
    if (!b.IsSequence() || static_cast<int>(b.size()) != f.agents) {
      rd.fail(b, fmt::format("bounds must list one entry per agent ({})", f.agents));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto where = fmt::format("bounds[{}]", i);
      rd.keys(b[i], {"g_max", "s_max", "c_max", "p_max"}, where);
      AgentBoundOverride o;
      if (b[i]["g_max"]) o.g_max = rd.number_map(b[i]["g_max"], where + ".g_max");
      if (b[i]["s_max"]) o.s_max = rd.number_map(b[i]["s_max"], where + ".s_max");
      if (b[i]["c_max"]) o.c_max = rd.number_map(b[i]["c_max"], where + ".c_max");
      if (b[i]["p_max"]) o.p_max = rd.number_map(b[i]["p_max"], where + ".p_max");
      f.bounds.push_back(o);
    }
  }
  if (const auto s = root["initial_state"]) f.initial = parse_initial(rd, s);
  if (const auto s = root["solver"]) parse_solver(rd, s, f);
  return f;
}

ScenarioFile load_scenario(const std::filesystem::path& path) { return parse_scenario(read_file(path), path.string()); }

BoundaryFile parse_boundary(const std::string& text, const std::string& source) {
  Reader rd(source);
  const YAML::Node root = rd.load(text);
  rd.keys(root, {"format", "time", "cells", "theta", "initial_state", "boundary"}, "boundary file");
  if (const auto f = root["format"]; f && f.as<std::string>() != "h2market.boundary/1") {
    rd.fail(f, fmt::format("unsupported format '{}'", f.as<std::string>()));
  }
  BoundaryFile f;
  time_section(rd, root, f.horizon, f.steps);
  if (root["cells"]) f.cells = rd.integer(root["cells"], "cells");
  if (f.cells < 1) rd.fail(root["cells"], "cells must be positive");
  f.theta = rd.number_or(root, "theta", 1.0, "boundary file");
  if (const auto s = root["initial_state"]) f.initial = parse_initial(rd, s);
  if (const auto b = root["boundary"]) {
    if (!b.IsMap()) rd.fail(b, "boundary must map boundary nodes to pressure and flow");
    for (const auto& kv : b) {
      const auto id = kv.first.as<std::string>();
      const auto where = fmt::format("boundary.{}", id);
      rd.keys(kv.second, {"pressure", "flow"}, where);
      Series p{{0.0}}, q{{0.0}};
      if (kv.second["pressure"]) p = rd.series(kv.second["pressure"], where + ".pressure");
      if (kv.second["flow"]) q = rd.series(kv.second["flow"], where + ".flow");
      f.nodes[id] = {p, q};
    }
  }
  return f;
}

BoundaryFile load_boundary(const std::filesystem::path& path) { return parse_boundary(read_file(path), path.string()); }

PlanInputs build_plan_inputs(const NetworkModel& model, const ScenarioFile& sf) {
  PlanInputs in;
  in.model = model;
  in.grid = TimeGrid(sf.horizon, sf.steps);
  in.agents = sf.agents;
  in.initial = sf.initial;
  in.config = sf.solver;
  in.double_sided = sf.double_sided;
  const auto layout = MarketLayout::from_model(model, in.grid);
  const int nt = layout.time_nodes;
  const auto& nodes = model.nodes();

  auto require_role = [&](const std::string& id, const std::vector<std::size_t>& allowed, const std::string& what) {
    const auto idx = model.find_node(id);
    if (!idx) throw InputError(fmt::format("{} refers to unknown node '{}'", what, id));
    const auto it = std::find(allowed.begin(), allowed.end(), *idx);
    if (it == allowed.end()) throw InputError(fmt::format("{}: node '{}' has no such variable", what, id));
    return static_cast<int>(it - allowed.begin());
  };

  ScenarioSet set;
  set.a_max = sf.a_max;
  set.b_max = sf.b_max;
  for (std::size_t m = 0; m < sf.scenarios.size(); ++m) {
    const auto& e = sf.scenarios[m];
    Scenario s;
    s.weight = e.weight;
    s.a = Eigen::MatrixXd::Zero(layout.rows(1), nt);
    s.b = Eigen::MatrixXd::Zero(layout.rows(1), nt);
    std::vector<char> seen(layout.rows(1), 0);
    for (const auto& [id, d] : e.demand) {
      const auto what = fmt::format("scenarios[{}].demand.{}", m, id);
      const int r = require_role(id, layout.sales, fmt::format("scenarios[{}].demand", m));
      s.a.row(r) = d.a.expand(nt, what + ".a");
      s.b.row(r) = d.b.expand(nt, what + ".b");
      seen[r] = 1;
    }
    for (int r = 0; r < layout.rows(1); ++r) {
      if (!seen[r]) {
        throw InputError(fmt::format("scenarios[{}] has no demand for sale node '{}'", m, nodes[layout.sales[r]].id));
      }
    }
    set.scenarios.push_back(std::move(s));
  }
  in.demand = average_demand(set);

  std::vector<AgentCosts> costs = sf.costs;
  if (costs.empty()) costs.resize(1);
  if (costs.size() == 1 && sf.agents > 1) costs.assign(sf.agents, costs[0]);
  for (int i = 0; i < sf.agents; ++i) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.rows(0));
    Eigen::VectorXd c = Eigen::VectorXd::Zero(layout.rows(2));
    for (const auto& [id, v] : costs[i].generation) g(require_role(id, layout.generation, "costs.generation")) = v;
    for (const auto& [id, v] : costs[i].conversion) c(require_role(id, layout.conversion, "costs.conversion")) = v;
    in.costs.generation.push_back(g);
    in.costs.conversion.push_back(c);
  }

  if (!sf.bounds.empty()) {
    const auto base = AgentBounds::from_model(model, layout);
    for (const auto& o : sf.bounds) {
      AgentBounds b = base;
      for (const auto& [id, v] : o.g_max) b.g_max(require_role(id, layout.generation, "bounds.g_max")) = v;
      for (const auto& [id, v] : o.s_max) b.s_max(require_role(id, layout.sales, "bounds.s_max")) = v;
      for (const auto& [id, v] : o.c_max) b.c_max(require_role(id, layout.conversion, "bounds.c_max")) = v;
      for (const auto& [id, v] : o.p_max) b.p_max(require_role(id, layout.boundary, "bounds.p_max")) = v;
      in.bounds.push_back(b);
    }
  }
  return in;
}

BoundaryData build_boundary_data(const NetworkModel& model, const SpatialMesh& mesh, const TimeGrid& grid,
                                 const BoundaryFile& file) {
  const int nt = grid.nodes();
  BoundaryData bd = BoundaryData::zeros(mesh.boundary_count(), nt);
  const auto& bn = mesh.boundary_nodes();
  for (const auto& [id, pq] : file.nodes) {
    const auto idx = model.find_node(id);
    if (!idx) throw InputError(fmt::format("boundary data refers to unknown node '{}'", id));
    const auto it = std::find(bn.begin(), bn.end(), *idx);
    if (it == bn.end()) throw InputError(fmt::format("node '{}' is not a hydrogen boundary node", id));
    const auto b = it - bn.begin();
    bd.pressure.row(b) = pq.first.expand(nt, fmt::format("boundary.{}.pressure", id));
    bd.flow.row(b) = pq.second.expand(nt, fmt::format("boundary.{}.flow", id));
  }
  return bd;
}

std::string decisions_csv(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  const auto& l = plan.layout;
  const auto& nodes = plan.model.nodes();
  std::string out = "agent,node,variable,k,t,value\n";
  const char* names[] = {"g", "s", "c", "p"};
  const std::vector<std::size_t>* lists[] = {&l.generation, &l.sales, &l.conversion, &l.boundary};
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const Eigen::MatrixXd* mats[] = {&decisions[i].g, &decisions[i].s, &decisions[i].c, &decisions[i].p};
    for (int blk = 0; blk < 4; ++blk) {
      for (std::size_t r = 0; r < lists[blk]->size(); ++r) {
        for (int k = 0; k < l.time_nodes; ++k) {
          out += fmt::format("{},{},{},{},{},{}\n", i, nodes[(*lists[blk])[r]].id, names[blk], k,
                             format_number(plan.grid.time(k)), format_number((*mats[blk])(r, k)));
        }
      }
    }
  }
  return out;
}

std::vector<AgentDecision> parse_decisions_csv(const std::string& text, const GamePlan& plan) {
  const auto& l = plan.layout;
  std::vector<AgentDecision> d(plan.agents(), AgentDecision::zeros(l));
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "agent,node,variable,k,t,value") throw InputError("decisions CSV: unexpected header");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw InputError(fmt::format("decisions CSV line {}: expected 6 fields", lineno));
    const int i = std::stoi(f[0]);
    const int k = std::stoi(f[3]);
    if (i < 0 || i >= plan.agents() || k < 0 || k >= l.time_nodes) {
      throw InputError(fmt::format("decisions CSV line {}: index out of range", lineno));
    }
    const auto idx = plan.model.find_node(f[1]);
    if (!idx) throw InputError(fmt::format("decisions CSV line {}: unknown node '{}'", lineno, f[1]));
    const std::string names = "gscp";
    const auto blk = names.find(f[2]);
    if (f[2].size() != 1 || blk == std::string::npos) {
      throw InputError(fmt::format("decisions CSV line {}: unknown variable '{}'", lineno, f[2]));
    }
    const std::vector<std::size_t>* lists[] = {&l.generation, &l.sales, &l.conversion, &l.boundary};
    Eigen::MatrixXd* mats[] = {&d[i].g, &d[i].s, &d[i].c, &d[i].p};
    const auto& list = *lists[blk];
    const auto it = std::find(list.begin(), list.end(), *idx);
    if (it == list.end()) throw InputError(fmt::format("decisions CSV line {}: node has no such variable", lineno));
    (*mats[blk])(it - list.begin(), k) = std::stod(f[5]);
  }
  return d;
}

std::string state_csv(const GasState& y, const NetworkModel& model, const SpatialMesh& mesh, const TimeGrid& grid) {
  std::string out = "edge,j,x,k,t,p,q\n";
  if (y.values.size() == 0) return out;
  for (int e = 0; e < mesh.pipes(); ++e) {
    for (int k = 0; k < grid.nodes(); ++k) {
      for (int j = 0; j <= mesh.cells(e); ++j) {
        out += fmt::format("{},{},{},{},{},{},{}\n", model.pipes()[e].id, j, format_number(mesh.x(e, j)), k,
                           format_number(grid.time(k)), format_number(y.p(mesh, e, j, k)),
                           format_number(y.q(mesh, e, j, k)));
      }
    }
  }
  return out;
}

std::string prices_csv(const std::vector<AgentDecision>& decisions, const GamePlan& plan) {
  std::string out = "node,k,t,total_sales,price\n";
  const Eigen::MatrixXd total = total_sales(decisions);
  for (int r = 0; r < plan.layout.rows(1); ++r) {
    for (int k = 0; k < plan.layout.time_nodes; ++k) {
      out += fmt::format("{},{},{},{},{}\n", plan.model.nodes()[plan.layout.sales[r]].id, k,
                         format_number(plan.grid.time(k)), format_number(total(r, k)),
                         format_number(price(plan.demand, r, k, total(r, k))));
    }
  }
  return out;
}

namespace {

// Finite doubles as JSON numbers; infinities and NaN as strings.
nlohmann::ordered_json num(double v) {
  if (std::isfinite(v)) return v == 0.0 ? 0.0 : v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

}  // namespace

std::string report_json(const EquilibriumReport& r, const GamePlan& plan, const RunInfo& info) {
  using nlohmann::ordered_json;
  const auto& cfg = plan.config;
  ordered_json j;
  j["schema"] = kReportSchema;
  j["command"] = info.command;
  j["inputs"] = {{"network", info.network}, {"scenario", info.scenario}, {"seed", info.seed}};
  j["solver"] = {{"method", method_name(cfg.method)},
                 {"ladder", ordered_json::array()},
                 {"rung_tol", num(cfg.penalty.rung_tol)},
                 {"final_tol", num(cfg.penalty.final_tol)},
                 {"br_tol", num(cfg.br_tol)},
                 {"gap_tol", num(cfg.gap_tol)},
                 {"violation_target", num(cfg.violation_target)},
                 {"tikhonov", num(cfg.tikhonov)},
                 {"cells", cfg.cells},
                 {"theta", num(cfg.theta)},
                 {"time_steps", plan.grid.steps()},
                 {"horizon", num(plan.grid.horizon())},
                 {"agents", plan.agents()},
                 {"selection", "variational: every agent sees the same penalty gradient"}};
  for (double g : cfg.penalty.ladder()) j["solver"]["ladder"].push_back(num(g));
  j["status"] = {{"certified", r.certified},
                 {"converged", r.converged},
                 {"stalled", r.stalled},
                 {"iterations", r.iterations},
                 {"best_responses", r.best_responses}};
  j["ni_gap"] = {{"total", num(r.gap.total)}, {"per_agent", ordered_json::array()}, {"gamma", num(r.gamma_final)}};
  for (double t : r.gap.terms) j["ni_gap"]["per_agent"].push_back(num(t));
  const auto& f = r.feasibility;
  j["residuals"] = {{"box", num(f.box)},
                    {"initial_pin", num(f.pin)},
                    {"balance_inf", num(f.balance)},
                    {"transmission_min_margin", num(f.min_margin)},
                    {"transmission_violation_l2", num(f.transmission_l2)},
                    {"state_violation_l2", num(f.state_l2)},
                    {"state_violation_l2_pressure", num(f.state_l2_pressure)},
                    {"state_violation_l2_flow", num(f.state_l2_flow)},
                    {"state_violation_max", num(f.state_max)},
                    {"net_injection", ordered_json::array()},
                    {"net_injection_min", num(f.min_net_injection)}};
  for (double v : f.net_injection) j["residuals"]["net_injection"].push_back(num(v));
  j["profits"] = ordered_json::array();
  for (double p : r.profits) j["profits"].push_back(num(p));
  j["penalty_path"] = ordered_json::array();
  for (const auto& p : r.path) {
    j["penalty_path"].push_back({{"gamma", num(p.gamma)},
                                 {"iterations", p.iterations},
                                 {"residual", num(p.residual)},
                                 {"converged", p.converged},
                                 {"state_violation_l2", num(p.state_violation)},
                                 {"transmission_violation_l2", num(p.transmission_violation)}});
  }
  j["diagnostics"] = r.diagnostics;
  if (info.record_wall_time) j["timings"] = {{"wall_seconds", num(r.wall_time)}};
  return j.dump(2) + "\n";
}

void write_bundle(const std::filesystem::path& dir, const EquilibriumReport& report, const GamePlan& plan,
                  const RunInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  write_file(dir / "decisions.csv", decisions_csv(report.decisions, plan));
  write_file(dir / "state.csv", state_csv(report.state, plan.model, plan.mesh, plan.grid));
  write_file(dir / "prices.csv", prices_csv(report.decisions, plan));
  write_file(dir / "report.json", report_json(report, plan, info));
}

}  // namespace h2market
