#pragma once

#include <sstream>
#include <string>

#include "opca/cayley.hpp"

namespace opca {

// Deterministic Graphviz export. Edge colors follow generator declaration
// order; a generator declared self-inverse (relator g^2) is drawn once as an
// undirected edge. Boundary vertices of a windowed graph are dashed.
inline std::string to_dot(const CayleyGraph& g) {
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr int kPaletteSize = 10;
  const Presentation& p = g.presentation();

  std::ostringstream out;
  out << "digraph cayley {\n";
  out << "  graph [label=\"" << p.name << "\"];\n";
  out << "  node [shape=circle fontsize=10];\n";
  for (VertexId v = 0; v < g.vertex_count(); ++v) {
    out << "  " << v << " [label=\"" << g.vertex_name(v) << "\"";
    if (g.is_windowed() && !g.interior(v)) out << " style=dashed";
    out << "];\n";
  }
  for (const CayleyGraph::Edge& e : g.edges()) {
    const std::string& label = p.generators[e.color];
    const bool undirected = p.declares_self_inverse(label);
    if (undirected && e.source > e.target) continue;  // partner edge already drawn
    out << "  " << e.source << " -> " << e.target << " [color=\""
        << kPalette[e.color % kPaletteSize] << "\" label=\"" << label << "\"";
    if (undirected) out << " dir=none";
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace opca
