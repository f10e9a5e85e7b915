#pragma once

#include <algorithm>
#include <climits>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "opca/automaton.hpp"
#include "opca/quotient.hpp"

namespace opca {

// ---------------------------------------------------------------------------
// Wrapping verification: one local rule, instantiated on a window of the
// source group and on a finite quotient, with the quotient hypotheses checked
// at the level the backend requires and local evolutions compared under the
// quotient homomorphism phi.

struct WrapComparison {
  std::string observable;
  int steps = 0;
  double deviation = 0.0;
};

struct WrapReport {
  QuotientReport quotient_report;
  CheckLevel required_level = CheckLevel::pedantic;
  bool rule_valid_on_source = false;
  bool rule_valid_on_target = false;
  std::string source_message;
  std::string target_message;
  std::vector<WrapComparison> comparison;
  int safe_radius_used = 0;
  int injectivity_radius = 0;
  std::string verdict;  // match | mismatch | hypotheses-failed
  std::string message;
};

// phi on window elements: evaluate the shared generators in the target model
inline Element phi_element(const QuotientMap& q, const Element& e) {
  const GroupModel& tm = q.target.model;
  if (const auto* w = std::get_if<Word>(&e)) return tm.evaluate(*w);
  if (const auto* vec = std::get_if<std::vector<std::int64_t>>(&e)) {
    // exponent vector over the shared generator list (standard basis map)
    Element out = tm.identity();
    for (std::size_t i = 0; i < q.source.generators.size() && i < vec->size(); ++i) {
      const Element g = tm.generator_map().at(q.source.generators[i]);
      const Element gi = tm.inverse(g);
      const std::int64_t k = (*vec)[i];
      for (std::int64_t j = 0; j < (k < 0 ? -k : k); ++j)
        out = tm.mul(out, k > 0 ? g : gi);
    }
    return out;
  }
  throw Error("cannot map table-model window elements through the quotient");
}

// blocks on a window graph, instantiated wherever the offsets stay inside
inline Automaton window_automaton(const LocalRule& rule, const CayleyGraph& window) {
  Automaton a;
  a.graph = window;
  a.system = rule.system;
  a.offsets = rule.offsets;
  a.rule = rule;
  for (VertexId g = 0; g < window.vertex_count(); ++g) {
    try {
      a.blocks.push_back(instantiate_block(window, rule, g));
    } catch (const Error&) {
      SiteBlock empty;
      empty.home = g;
      a.blocks.push_back(std::move(empty));  // touched only if the window is too small
    }
  }
  return a;
}

struct WrapOptions {
  int window_radius = 0;         // 0: sized from steps and offsets
  int steps = 1;
  Word base;                     // base site of the observables, as a word
  double corrupt_epsilon = 0.0;  // negative control: perturb one target block entry
};

inline WrapReport wrap_verify(const LocalRule& rule, const QuotientMap& q,
                              const WrapOptions& opt = {}) {
  q.validate();
  rule.validate_shape();
  if (!q.target.model.is_finite()) throw Error("the quotient target must be finite");
  if (q.source.model.is_finite())
    throw Error("the wrapping source is expected to be infinite (use a window)");
  if (opt.steps < 1) throw Error("steps must be positive");

  WrapReport rep;
  rep.required_level = rule.system.backend == Backend::fermionic ? CheckLevel::pedantic2
                                                                 : CheckLevel::pedantic;
  rep.quotient_report = check_quotient(q, rep.required_level);

  const int maxlen = std::max(rule.max_offset_length(), 1);
  const int base_len = static_cast<int>(opt.base.size());
  const int window_radius = opt.window_radius > 0
                                ? opt.window_radius
                                : base_len + (opt.steps + 1) * maxlen + 1;
  rep.safe_radius_used = base_len + (opt.steps + 1) * maxlen + 1;
  if (window_radius < rep.safe_radius_used)
    throw Error("safe radius exceeded: window radius " + std::to_string(window_radius) +
                " < required " + std::to_string(rep.safe_radius_used));

  // rule validity on both instantiations
  try {
    const RuleValidation v = validate_rule(rule, probe_graph(q.source, rule));
    rep.rule_valid_on_source = v.passed;
    rep.source_message = v.message;
  } catch (const Error& e) {
    rep.rule_valid_on_source = false;
    rep.source_message = e.what();
  }
  const CayleyGraph target_graph = CayleyGraph::build(q.target);
  try {
    const RuleValidation v = validate_rule(rule, target_graph);
    rep.rule_valid_on_target = v.passed;
    rep.target_message = v.message;
  } catch (const Error& e) {
    rep.rule_valid_on_target = false;
    rep.target_message = e.what();
  }

  rep.injectivity_radius = INT_MAX;
  if (const auto girth = target_graph.girth()) rep.injectivity_radius = *girth / 2;

  // structural gating: no comparison unless every hypothesis holds
  if (!rep.quotient_report.passed || !rep.rule_valid_on_source ||
      !rep.rule_valid_on_target) {
    rep.verdict = "hypotheses-failed";
    if (!rep.quotient_report.passed)
      rep.message = "quotient check did not reach level " + to_string(rep.required_level);
    else if (!rep.rule_valid_on_source)
      rep.message = "rule invalid on the source window: " + rep.source_message;
    else
      rep.message = "rule invalid on the quotient: " + rep.target_message;
    return rep;
  }

  if (opt.steps * maxlen > rep.injectivity_radius)
    throw Error("comparison exceeds the quotient injectivity radius (" +
                std::to_string(opt.steps * maxlen) + " > " +
                std::to_string(rep.injectivity_radius) + ")");

  // window side: blocks only; target side: full assembly
  const CayleyGraph window = CayleyGraph::build(q.source, window_radius);
  Automaton aw = window_automaton(rule, window);
  Automaton at = assemble(rule, target_graph);
  if (opt.corrupt_epsilon != 0.0) {
    SiteBlock& b = at.blocks[target_graph.identity_vertex()];
    if (at.system.backend == Backend::fermionic)
      b.fop.m(0, 0) += opt.corrupt_epsilon;
    else
      b.op.m(0, 0) += opt.corrupt_epsilon;
  }

  const VertexId base_w = window.require(q.source.model.evaluate(opt.base));
  const VertexId base_t = target_graph.require(phi_element(q, window.vertices()[base_w]));

  // phi sanity on the window: edges must commute with evaluation
  for (VertexId v = 0; v < window.vertex_count(); ++v) {
    for (const auto& [label, gen] : q.source.model.generator_map()) {
      const Element moved = q.source.model.mul(window.vertices()[v], gen);
      if (!window.find(moved)) continue;
      const Element lhs = phi_element(q, moved);
      const Element rhs = q.target.model.mul(phi_element(q, window.vertices()[v]),
                                             q.target.model.generator_map().at(label));
      if (!(lhs == rhs)) throw Error("quotient map is not a homomorphism on the window");
    }
  }

  const double slot_tol = tol::wrap_match;
  double worst = 0.0;
  for (const SpanningElement& el : single_site_spanning(rule.system, 0)) {
    // place the same local map at the corresponding base sites
    RegionTransformation fw = el.payload;
    fw.region = Region{{base_w}};
    RegionTransformation ft = el.payload;
    ft.region = Region{{base_t}};

    RegionTransformation rw, rt;
    try {
      rw = evolve_transformation(aw, fw, opt.steps, false);
      rt = evolve_transformation(at, ft, opt.steps, false);
    } catch (const Error& e) {
      // the dynamics failed to return the observable to the lattice layer;
      // that is a structural deviation, not a usage error
      WrapComparison cmp{el.name, opt.steps, 1.0};
      rep.comparison.push_back(std::move(cmp));
      if (rep.message.empty()) rep.message = e.what();
      worst = 1.0;
      continue;
    }

    // map the window result through phi
    std::vector<int> mapped;  // in window slot order
    for (int s : rw.region.sites)
      mapped.push_back(target_graph.require(phi_element(q, window.vertices()[s])));
    {
      std::vector<int> dedup = mapped;
      std::sort(dedup.begin(), dedup.end());
      if (std::adjacent_find(dedup.begin(), dedup.end()) != dedup.end())
        throw Error("quotient identifies sites inside the comparison window");
    }

    WrapComparison cmp;
    cmp.observable = el.name;
    cmp.steps = opt.steps;
    if (!(Region{mapped} == rt.region)) {
      cmp.deviation = 1.0;
    } else if (rule.system.backend == Backend::classical) {
      cmp.deviation = (detail::sort_matrix_payload(rw.classical, mapped, rule.system.dim) -
                       rt.classical)
                          .cwiseAbs()
                          .maxCoeff();
    } else if (rule.system.backend == Backend::qubit) {
      cmp.deviation = phase_aligned_residual(
          detail::sort_matrix_payload(rw.kraus.at(0), mapped, 2), rt.kraus.at(0));
    } else {
      cmp.deviation =
          (detail::sort_fermionic_matrix(rw.fermionic, mapped, rule.system.dim) -
           rt.fermionic)
              .cwiseAbs()
              .maxCoeff();
    }
    worst = std::max(worst, cmp.deviation);
    rep.comparison.push_back(std::move(cmp));
  }

  rep.verdict = worst <= slot_tol ? "match" : "mismatch";
  if (rep.verdict == "mismatch" && rep.message.empty())
    rep.message = "evolutions deviate by " + std::to_string(worst);
  return rep;
}

// ---------------------------------------------------------------------------
// Linear fermionic rules: assemble the one-particle matrix on a finite graph
// and check unitarity directly.

struct UnitarityReport {
  bool unitary = false;
  double residual = 0.0;
  Region neighborhood;  // column support at the identity vertex
};

inline Eigen::MatrixXcd assemble_one_particle(const LocalRule& rule,
                                              const CayleyGraph& graph) {
  if (rule.system.backend != Backend::fermionic)
    throw Error("one-particle assembly is for the fermionic backend");
  rule.validate_shape();
  if (graph.is_windowed()) throw Error("one-particle assembly needs a finite graph");
  const int n = rule.system.dim;
  const int nv = graph.vertex_count();
  Eigen::MatrixXcd t = Eigen::MatrixXcd::Zero(n * nv, n * nv);
  const GroupModel& model = graph.presentation().model;
  for (VertexId g = 0; g < nv; ++g)
    for (std::size_t h = 0; h < rule.offsets.size(); ++h) {
      const Element tgt = model.mul(graph.vertices()[g], model.evaluate(rule.offsets[h]));
      t.block(graph.require(tgt) * n, g * n, n, n) += rule.fermionic_coeffs[h];
    }
  return t;
}

inline UnitarityReport fermionic_unitarity(const LocalRule& rule, const CayleyGraph& graph) {
  const Eigen::MatrixXcd t = assemble_one_particle(rule, graph);
  const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(t.rows(), t.cols());
  UnitarityReport rep;
  rep.residual = std::max((t.adjoint() * t - id).cwiseAbs().maxCoeff(),
                          (t * t.adjoint() - id).cwiseAbs().maxCoeff());
  rep.unitary = rep.residual <= tol::fermionic_unitary;
  const int n = rule.system.dim;
  const VertexId e = graph.identity_vertex();
  for (VertexId f = 0; f < graph.vertex_count(); ++f)
    if (t.block(f * n, e * n, n, n).cwiseAbs().maxCoeff() > tol::support)
      rep.neighborhood.sites.push_back(f);
  rep.neighborhood.normalize();
  return rep;
}

}  // namespace opca
