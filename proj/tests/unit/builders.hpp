#pragma once

#include "h2market/network.hpp"

#include <string>
#include <utility>
#include <vector>

namespace h2market::testing {

inline Node make_node(std::string id, NodeRole role) {
  Node n;
  n.id = std::move(id);
  n.role = role;
  return n;
}

inline NodeRole roles(std::initializer_list<std::string> names) {
  NodeRole r;
  for (const auto& n : names) {
    if (n == "electricity") r.electricity = true;
    if (n == "hydrogen") r.hydrogen = true;
    if (n == "ptg") r.ptg = true;
    if (n == "gtp") r.gtp = true;
    if (n == "sale") r.sale = true;
    if (n == "generation") r.generation = true;
  }
  return r;
}

inline PipeParams make_pipe(std::string id, std::string from, std::string to, double length = 1.0) {
  PipeParams p;
  p.id = std::move(id);
  p.from = std::move(from);
  p.to = std::move(to);
  p.length = length;
  p.friction = 0.01;
  p.p_ref = ReferenceField{5.0e6, std::nullopt};
  p.q_ref = ReferenceField{0.0, std::nullopt};
  p.q_max = 1.0;
  p.p_max = 7.0e6;
  return p;
}

inline LineParams make_line(std::string id, std::string from, std::string to, double susceptance = 1.0,
                            double capacity = 10.0) {
  return LineParams{std::move(id), std::move(from), std::move(to), susceptance, capacity};
}

inline GasConstants unit_constants() { return GasConstants{0.5, 1.0, 1.0, 0.5, 9.81}; }

/// Electrolyser P feeding one pipe to a hydrogen sale node H.
inline NetworkModel single_pipe(double length = 1.0) {
  Node p = make_node("P", roles({"electricity", "hydrogen", "ptg"}));
  p.eta = 1.0;
  p.c_max = 10.0;
  p.p_max = 7.0e6;
  Node h = make_node("H", roles({"hydrogen", "sale"}));
  h.eta = 1.0;
  h.s_max = 10.0;
  h.p_max = 7.0e6;
  Node r = make_node("R", roles({"electricity", "generation"}));
  r.g_max = 20.0;
  return NetworkModel({p, h, r}, {make_line("RP", "R", "P")}, {make_pipe("PH", "P", "H", length)}, unit_constants(),
                      "R");
}

}  // namespace h2market::testing
