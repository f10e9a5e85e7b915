#pragma once

#include <string>
#include <utility>
#include <vector>

#include "opca/automaton.hpp"

namespace opca {

// Causal influence g -> g': conjugating some local transformation at g by the
// dynamics produces a transformation acting nontrivially at g'.  Detected by
// sweeping a fixed spanning family (single-site maps plus one ancilla-coupled
// map) through the conjugation and reading minimal supports.

struct InfluenceWitness {
  VertexId site = 0;       // influenced site
  std::string element;     // name of the first family member touching it
};

struct InfluenceReport {
  VertexId site = 0;
  Region causal_forward;
  Region causal_backward;
  Region signalling_forward;
  std::vector<InfluenceWitness> witnesses;  // for the forward direction
  int spanning_set_size = 0;
  std::vector<std::string> spanning_set;    // documented member list
};

// spanning family probing a region: local spanning maps (with pair couplings
// for multi-site regions) plus one ancilla-coupled map per site
inline std::vector<SpanningElement> influence_family(const SiteSystem& sys,
                                                     const Region& r, int ancilla_site) {
  std::vector<SpanningElement> fam = region_spanning(sys, r);
  for (int site : r.sites)
    for (auto& el : ancilla_spanning(sys, site, ancilla_site)) {
      el.name += "@" + std::to_string(site);
      fam.push_back(std::move(el));
    }
  return fam;
}

// Union of minimal supports of the conjugated family members, restricted to
// lattice sites; ancilla legs are bookkeeping, not influence.
inline std::pair<Region, std::vector<InfluenceWitness>> causal_neighborhood(
    const Automaton& a, const Region& r, bool backward = false) {
  const int nv = a.graph.vertex_count();
  for (int g : r.sites)
    if (g < 0 || g >= nv) throw Error("site out of range");
  const auto fam = influence_family(a.system, r, nv);
  Region out;
  std::vector<InfluenceWitness> witnesses;
  for (const auto& el : fam) {
    const RegionTransformation moved = evolve_transformation_once(a, el.payload, backward);
    for (int s : moved.region.sites) {
      if (s >= nv) continue;  // ancilla
      if (!out.contains(s)) {
        out.sites.push_back(s);
        out.normalize();
        witnesses.push_back({s, el.name});
      }
    }
  }
  std::sort(witnesses.begin(), witnesses.end(),
            [](const InfluenceWitness& x, const InfluenceWitness& y) {
              return x.site < y.site;
            });
  return {out, witnesses};
}

inline std::pair<Region, std::vector<InfluenceWitness>> causal_neighborhood(
    const Automaton& a, VertexId g, bool backward = false) {
  return causal_neighborhood(a, Region{{g}}, backward);
}

// Optional fermionic two-site scan: sites reached by conjugated pair
// couplings that no single-site witness reaches (cooperative influence).
inline Region cooperative_influence(const Automaton& a, VertexId g1, VertexId g2) {
  if (a.system.backend != Backend::fermionic)
    throw Error("the cooperative scan is implemented for the fermionic backend");
  const Region pairr{{g1, g2}};
  const Region joint = causal_neighborhood(a, pairr).first;
  Region singles = causal_neighborhood(a, g1).first.unite(causal_neighborhood(a, g2).first);
  Region extra;
  for (int s : joint.sites)
    if (!singles.contains(s)) extra.sites.push_back(s);
  return extra;
}

namespace detail {

// 2x2 marginal of a pure qubit register state at slot `site`
inline Eigen::Matrix2cd qubit_marginal(const Eigen::VectorXcd& psi, int n, int site) {
  Eigen::Matrix2cd rho = Eigen::Matrix2cd::Zero();
  const std::size_t hi = std::size_t(1) << site;           // digits above `site`
  const std::size_t lo = std::size_t(1) << (n - 1 - site); // stride of the site digit
  for (std::size_t h = 0; h < hi; ++h)
    for (std::size_t l = 0; l < lo; ++l) {
      const std::size_t base = h * lo * 2 + l;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          rho(i, j) += psi[static_cast<Eigen::Index>(base + i * lo)] *
                       std::conj(psi[static_cast<Eigen::Index>(base + j * lo)]);
    }
  return rho;
}

}  // namespace detail

// State-level dependency: sites whose one-step output marginal changes when
// the input state at g is varied over a spanning set, against two reference
// backgrounds.
inline Region signalling_neighborhood(const Automaton& a, VertexId g) {
  const int nv = a.graph.vertex_count();
  if (g < 0 || g >= nv) throw Error("site out of range");
  Region out;

  if (a.system.backend == Backend::classical) {
    const int d = a.system.dim;
    for (int background : {0, d - 1}) {
      const std::vector<int> base_out =
          evolve_configuration(a, std::vector<int>(nv, background));
      for (int s = 0; s < d; ++s) {
        std::vector<int> cfg(nv, background);
        cfg[g] = s;
        const std::vector<int> moved = evolve_configuration(a, cfg);
        for (int f = 0; f < nv; ++f)
          if (moved[f] != base_out[f]) out.sites.push_back(f);
      }
    }
  } else if (a.system.backend == Backend::qubit) {
    if (!a.has_unitary()) throw Error("global rule exceeds the dimension cap");
    const std::size_t dim = a.config_count();
    const Cd isq = Cd(1.0 / std::sqrt(2.0), 0.0);
    const std::vector<Eigen::Vector2cd> locals = {
        {Cd(1, 0), Cd(0, 0)},
        {Cd(0, 0), Cd(1, 0)},
        {isq, isq},
        {isq, Cd(0, 1.0 / std::sqrt(2.0))}};
    for (int background : {0, 1}) {
      const Eigen::Vector2cd bg =
          background ? locals[1] : locals[0];
      auto product_state = [&](const Eigen::Vector2cd& at_g) {
        Eigen::VectorXcd psi = Eigen::VectorXcd::Ones(1);
        for (int v = 0; v < nv; ++v) {
          const Eigen::Vector2cd& x = v == g ? at_g : bg;
          psi = Eigen::kroneckerProduct(psi, x).eval();
        }
        return psi;
      };
      std::vector<Eigen::Matrix2cd> base(nv);
      {
        const Eigen::VectorXcd moved = a.unitary * product_state(bg);
        for (int f = 0; f < nv; ++f) base[f] = detail::qubit_marginal(moved, nv, f);
        (void)dim;
      }
      for (const auto& loc : locals) {
        const Eigen::VectorXcd moved = a.unitary * product_state(loc);
        for (int f = 0; f < nv; ++f) {
          const Eigen::Matrix2cd rho = detail::qubit_marginal(moved, nv, f);
          if ((rho - base[f]).cwiseAbs().maxCoeff() > tol::signalling)
            out.sites.push_back(f);
        }
      }
    }
  } else {
    // one-particle dynamics is linear: the reachable set is the column support
    if (a.one_particle.size() == 0) throw Error("automaton has no one-particle rule");
    const int n = a.system.dim;
    for (int f = 0; f < nv; ++f)
      if (a.one_particle.block(f * n, g * n, n, n).cwiseAbs().maxCoeff() > tol::signalling)
        out.sites.push_back(f);
  }
  out.normalize();
  return out;
}

struct InfluenceEdge {
  VertexId from = 0;
  VertexId to = 0;
};

inline std::vector<InfluenceEdge> influence_graph(const Automaton& a) {
  std::vector<InfluenceEdge> edges;
  for (VertexId g = 0; g < a.graph.vertex_count(); ++g)
    for (int s : causal_neighborhood(a, g).first.sites) edges.push_back({g, s});
  return edges;
}

inline InfluenceReport influence_report(const Automaton& a, VertexId g) {
  InfluenceReport rep;
  rep.site = g;
  auto fwd = causal_neighborhood(a, g, false);
  rep.causal_forward = std::move(fwd.first);
  rep.witnesses = std::move(fwd.second);
  rep.causal_backward = causal_neighborhood(a, g, true).first;
  rep.signalling_forward = signalling_neighborhood(a, g);
  const auto fam = influence_family(a.system, Region{{g}}, a.graph.vertex_count());
  rep.spanning_set_size = static_cast<int>(fam.size());
  for (const auto& el : fam) rep.spanning_set.push_back(el.name);
  return rep;
}

}  // namespace opca
