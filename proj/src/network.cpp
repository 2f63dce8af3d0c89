#include "h2market/network.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

namespace h2market {

double ReferenceField::min_abs() const {
  if (!table) return std::abs(constant);
  if (table->size() == 0) return std::numeric_limits<double>::infinity();
  return table->cwiseAbs().minCoeff();
}

bool ReferenceField::operator==(const ReferenceField& other) const {
  if (table.has_value() != other.table.has_value()) return false;
  if (!table) return constant == other.constant;
  return table->rows() == other.table->rows() && table->cols() == other.table->cols() &&
         *table == *other.table;
}

namespace {

template <class T>
void sort_by_id(std::vector<T>& items, const char* what) {
  std::sort(items.begin(), items.end(), [](const T& a, const T& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].id == items[i - 1].id) {
      throw InputError(fmt::format("duplicate {} id '{}'", what, items[i].id));
    }
  }
}

}  // namespace

NetworkModel::NetworkModel(std::vector<Node> nodes, std::vector<LineParams> lines,
                           std::vector<PipeParams> pipes, GasConstants constants, std::string slack)
    : nodes_(std::move(nodes)),
      lines_(std::move(lines)),
      pipes_(std::move(pipes)),
      constants_(constants),
      slack_(std::move(slack)) {
  sort_by_id(nodes_, "node");
  sort_by_id(lines_, "line");
  sort_by_id(pipes_, "pipe");

  auto endpoint = [this](const std::string& id, const std::string& edge) {
    auto idx = find_node(id);
    if (!idx) throw InputError(fmt::format("edge '{}' references unknown node '{}'", edge, id));
    return *idx;
  };

  incident_pipes_.assign(nodes_.size(), {});
  incident_lines_.assign(nodes_.size(), {});
  for (std::size_t e = 0; e < pipes_.size(); ++e) {
    const auto a = endpoint(pipes_[e].from, pipes_[e].id);
    const auto b = endpoint(pipes_[e].to, pipes_[e].id);
    if (a == b) throw InputError(fmt::format("pipe '{}' is a self loop", pipes_[e].id));
    pipe_ends_.emplace_back(a, b);
    incident_pipes_[a].push_back(e);
    incident_pipes_[b].push_back(e);
  }
  for (std::size_t l = 0; l < lines_.size(); ++l) {
    const auto a = endpoint(lines_[l].from, lines_[l].id);
    const auto b = endpoint(lines_[l].to, lines_[l].id);
    if (a == b) throw InputError(fmt::format("line '{}' is a self loop", lines_[l].id));
    line_ends_.emplace_back(a, b);
    incident_lines_[a].push_back(l);
    incident_lines_[b].push_back(l);
  }

  if (slack_.empty()) {
    for (const auto& n : nodes_) {
      if (n.role.electricity) {
        slack_ = n.id;
        break;
      }
    }
  } else if (!find_node(slack_)) {
    throw InputError(fmt::format("slack node '{}' is not a node of the network", slack_));
  }
}

std::optional<std::size_t> NetworkModel::find_node(const std::string& id) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                             [](const Node& n, const std::string& key) { return n.id < key; });
  if (it == nodes_.end() || it->id != id) return std::nullopt;
  return static_cast<std::size_t>(it - nodes_.begin());
}

std::size_t NetworkModel::node_index(const std::string& id) const {
  auto idx = find_node(id);
  if (!idx) throw InputError(fmt::format("unknown node '{}'", id));
  return *idx;
}

int NetworkModel::orientation(std::size_t pipe, std::size_t node) const {
  if (pipe_ends_[pipe].first == node) return -1;
  if (pipe_ends_[pipe].second == node) return 1;
  return 0;
}

std::vector<std::size_t> NetworkModel::select(bool (*pred)(const NodeRole&)) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (pred(nodes_[i].role)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> NetworkModel::electricity_nodes() const {
  return select([](const NodeRole& r) { return r.electricity; });
}
std::vector<std::size_t> NetworkModel::hydrogen_nodes() const {
  return select([](const NodeRole& r) { return r.hydrogen; });
}
std::vector<std::size_t> NetworkModel::generation_nodes() const {
  return select([](const NodeRole& r) { return r.generator(); });
}
std::vector<std::size_t> NetworkModel::sale_nodes() const {
  return select([](const NodeRole& r) { return r.sale; });
}
std::vector<std::size_t> NetworkModel::ptg_nodes() const {
  return select([](const NodeRole& r) { return r.ptg; });
}
std::vector<std::size_t> NetworkModel::gtp_nodes() const {
  return select([](const NodeRole& r) { return r.gtp; });
}
std::vector<std::size_t> NetworkModel::inner_hydrogen_nodes() const {
  return select([](const NodeRole& r) { return r.inner(); });
}

bool NetworkModel::operator==(const NetworkModel& other) const {
  return nodes_ == other.nodes_ && lines_ == other.lines_ && pipes_ == other.pipes_ &&
         constants_ == other.constants_ && slack_ == other.slack_;
}

bool ValidationReport::ok() const {
  return std::none_of(issues.begin(), issues.end(), [](const ValidationIssue& i) {
    return i.severity == ValidationIssue::Severity::error;
  });
}

bool ValidationReport::has(const std::string& code) const {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const ValidationIssue& i) { return i.code == code; });
}

std::string ValidationReport::to_string() const {
  std::string out;
  for (const auto& i : issues) {
    out += fmt::format("{}: {}: {}\n",
                       i.severity == ValidationIssue::Severity::error ? "error" : "warning", i.code,
                       i.message);
  }
  return out;
}

namespace {

class Checker {
 public:
  explicit Checker(ValidationReport& r) : report_(r) {}

  void error(const std::string& code, const std::string& msg) {
    report_.issues.push_back({ValidationIssue::Severity::error, code, msg});
  }
  void warning(const std::string& code, const std::string& msg) {
    report_.issues.push_back({ValidationIssue::Severity::warning, code, msg});
  }
  void positive(double v, const std::string& what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      error("nonpositive parameter", fmt::format("{} must be positive and finite (got {})", what, v));
    }
  }
  void nonnegative(double v, const std::string& what) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      error("negative parameter", fmt::format("{} must be nonnegative and finite (got {})", what, v));
    }
  }

 private:
  ValidationReport& report_;
};

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

// Nodes of the subgraph must form a single component.
void check_connected(const NetworkModel& m, const std::vector<std::size_t>& members,
                     const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                     const char* name, Checker& chk) {
  if (members.size() < 2) return;
  UnionFind uf(m.nodes().size());
  for (auto [a, b] : edges) uf.unite(a, b);
  const auto root = uf.find(members.front());
  std::vector<std::string> stray;
  for (auto v : members) {
    if (uf.find(v) != root) stray.push_back(m.nodes()[v].id);
  }
  if (!stray.empty()) {
    chk.error("disconnected component",
              fmt::format("{} subgraph is not connected; unreachable from '{}': {}", name,
                          m.nodes()[members.front()].id, fmt::join(stray, ", ")));
  }
}

bool has_directed_cycle(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<int> indeg(n, 0);
  for (auto [a, b] : edges) {
    out[a].push_back(b);
    ++indeg[b];
  }
  std::vector<std::size_t> queue;
  for (std::size_t v = 0; v < n; ++v) {
    if (indeg[v] == 0) queue.push_back(v);
  }
  std::size_t seen = 0;
  while (!queue.empty()) {
    auto v = queue.back();
    queue.pop_back();
    ++seen;
    for (auto w : out[v]) {
      if (--indeg[w] == 0) queue.push_back(w);
    }
  }
  return seen != n;
}

}  // namespace

ValidationReport validate_network(const NetworkModel& model) {
  ValidationReport report;
  Checker chk(report);
  const auto& nodes = model.nodes();

  for (const auto& n : nodes) {
    const auto& r = n.role;
    if (!r.electricity && !r.hydrogen) {
      chk.error("orphan node", fmt::format("node '{}' belongs to neither subnetwork", n.id));
    }
    if (r.ptg && r.gtp) {
      chk.error("overlapping PtG/GtP roles",
                fmt::format("node '{}' is marked both PtG and GtP", n.id));
    }
    const int plants = int(r.ptg) + int(r.gtp) + int(r.renewable());
    if (plants > 1) {
      chk.error("multiple plants", fmt::format("node '{}' hosts more than one plant/station", n.id));
    }
    if ((r.ptg || r.gtp) && !(r.electricity && r.hydrogen)) {
      chk.error("conversion station outside both networks",
                fmt::format("PtG/GtP node '{}' must belong to both subnetworks", n.id));
    }
    if (r.renewable() && !r.electricity) {
      chk.error("generation outside grid",
                fmt::format("generation node '{}' must belong to the electricity network", n.id));
    }
    if (r.boundary()) {
      chk.positive(n.eta, fmt::format("efficiency at node '{}'", n.id));
      chk.positive(n.p_max, fmt::format("boundary pressure bound at node '{}'", n.id));
    }
    if (r.generator()) chk.nonnegative(n.g_max, fmt::format("g_max at node '{}'", n.id));
    if (r.sale) chk.nonnegative(n.s_max, fmt::format("s_max at node '{}'", n.id));
    if (r.ptg) chk.nonnegative(n.c_max, fmt::format("c_max at node '{}'", n.id));
  }

  // Electricity subgraph.
  const auto enodes = model.electricity_nodes();
  std::vector<std::pair<std::size_t, std::size_t>> lines;
  for (std::size_t l = 0; l < model.lines().size(); ++l) {
    const auto& line = model.lines()[l];
    const auto a = model.line_from(l);
    const auto b = model.line_to(l);
    if (!nodes[a].role.electricity || !nodes[b].role.electricity) {
      chk.error("line outside grid",
                fmt::format("line '{}' connects a node outside the electricity network", line.id));
    }
    chk.positive(line.susceptance, fmt::format("susceptance of line '{}'", line.id));
    chk.positive(line.capacity, fmt::format("capacity of line '{}'", line.id));
    lines.emplace_back(a, b);
  }
  check_connected(model, enodes, lines, "electricity", chk);
  if (has_directed_cycle(nodes.size(), lines)) {
    chk.error("cycle detected", "electricity subgraph contains a directed cycle");
  }
  if (!enodes.empty()) {
    auto slack = model.find_node(model.slack());
    if (!slack || !nodes[*slack].role.electricity) {
      chk.error("invalid slack", fmt::format("slack node '{}' is not an electricity node", model.slack()));
    }
  }

  // Hydrogen subgraph.
  const auto hnodes = model.hydrogen_nodes();
  std::vector<std::pair<std::size_t, std::size_t>> pipes;
  UnionFind forest(nodes.size());
  for (std::size_t e = 0; e < model.pipes().size(); ++e) {
    const auto& pipe = model.pipes()[e];
    const auto a = model.pipe_from(e);
    const auto b = model.pipe_to(e);
    if (!nodes[a].role.hydrogen || !nodes[b].role.hydrogen) {
      chk.error("pipe outside hydrogen network",
                fmt::format("pipe '{}' connects a node outside the hydrogen network", pipe.id));
    }
    if (!forest.unite(a, b)) {
      chk.error("cycle detected", fmt::format("hydrogen subgraph contains a cycle through pipe '{}'", pipe.id));
    }
    chk.positive(pipe.length, fmt::format("length of pipe '{}'", pipe.id));
    chk.positive(pipe.friction, fmt::format("friction of pipe '{}'", pipe.id));
    chk.positive(pipe.q_max, fmt::format("q_max of pipe '{}'", pipe.id));
    chk.positive(pipe.p_max, fmt::format("p_max of pipe '{}'", pipe.id));
    if (!std::isfinite(pipe.slope)) chk.error("nonfinite parameter", fmt::format("slope of pipe '{}'", pipe.id));
    if (!(pipe.p_ref.min_abs() >= 1e-12)) {
      chk.error("singular reference pressure",
                fmt::format("reference pressure of pipe '{}' vanishes somewhere", pipe.id));
    }
    pipes.emplace_back(a, b);
  }
  check_connected(model, hnodes, pipes, "hydrogen", chk);
  if (!model.pipes().empty()) {
    const auto& c = model.constants();
    chk.positive(c.epsilon, "viscosity epsilon");
    chk.positive(c.sound_speed, "sound speed");
    chk.positive(c.area, "cross-section area");
    chk.positive(c.diameter, "diameter");
    if (!std::isfinite(c.gravity)) chk.error("nonfinite parameter", "gravity");
  }

  for (auto v : hnodes) {
    const auto& n = nodes[v];
    const auto degree = model.incident_pipes(v).size();
    if (n.role.boundary() && degree != 1) {
      chk.error("boundary degree violation",
                fmt::format("boundary hydrogen node '{}' is incident to {} pipes (need exactly 1)", n.id,
                            degree));
    }
    if (n.role.boundary() && degree == 1) {
      const int dir = model.orientation(model.incident_pipes(v).front(), v);
      const bool injects = n.role.ptg;
      const bool extracts = n.role.gtp || n.role.sale;
      if ((injects && dir != -1) || (extracts && !injects && dir != 1)) {
        chk.warning("orientation",
                    fmt::format("pipe at boundary node '{}' points against its nominal flow direction", n.id));
      }
    }
  }
  return report;
}

std::vector<std::size_t> boundary_node_indices(const NetworkModel& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.nodes().size(); ++i) {
    const auto& r = model.nodes()[i].role;
    if (r.hydrogen && r.boundary()) out.push_back(i);
  }
  return out;
}

std::vector<std::string> boundary_nodes(const NetworkModel& model) {
  std::vector<std::string> out;
  for (auto i : boundary_node_indices(model)) out.push_back(model.nodes()[i].id);
  return out;
}

}  // namespace h2market
