#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "opca/backend.hpp"
#include "opca/cayley.hpp"
#include "opca/rule.hpp"

namespace opca {

// ---------------------------------------------------------------------------
// Doubled lattice: every vertex v carries two copies, (v,0) and (v,1).
// Doubled ids interleave as 2v+layer, so ascending id order is ascending
// (vertex, layer) order.  Ancilla sites live above all doubled ids.

inline int doubled_site(VertexId v, int layer) { return 2 * v + layer; }
inline VertexId doubled_vertex(int site) { return site / 2; }
inline int doubled_layer(int site) { return site % 2; }

inline int doubled_ancilla_base(const CayleyGraph& g) { return 2 * g.vertex_count(); }

inline Region to_doubled(const Region& single_layer, int layer, int vertex_count) {
  Region out;
  for (int v : single_layer.sites)
    out.sites.push_back(v < vertex_count ? doubled_site(v, layer)
                                         : vertex_count + v);  // ancilla: 2n + (v - n)
  out.normalize();
  return out;
}

inline Region from_doubled(const Region& doubled, int expect_layer, int vertex_count) {
  Region out;
  for (int s : doubled.sites) {
    if (s >= 2 * vertex_count) {
      out.sites.push_back(s - vertex_count);  // ancilla id back to single-layer form
      continue;
    }
    if (doubled_layer(s) != expect_layer)
      throw Error("operator leaked to the wrong layer at site " +
                  std::to_string(doubled_vertex(s)));
    out.sites.push_back(doubled_vertex(s));
  }
  out.normalize();
  return out;
}

// ---------------------------------------------------------------------------
// Plain matrix operators over uniformly-dimensioned slots, used for all
// doubled-lattice algebra (classical transition matrices and qubit unitaries
// or single-Kraus maps share the machinery).

struct DOp {
  Region region;  // doubled ids, ascending; payload slot order matches
  int slot_dim = 2;
  Eigen::MatrixXcd m;
};

inline DOp lift(const DOp& x, const Region& target) {
  if (!x.region.subset_of(target)) throw Error("lift target must contain the region");
  std::vector<int> extra;
  for (int s : target.sites)
    if (!x.region.contains(s)) extra.push_back(s);
  if (extra.empty()) return x;
  const auto ed = static_cast<Eigen::Index>(detail::ipow(x.slot_dim, extra.size()));
  Eigen::MatrixXcd k =
      Eigen::kroneckerProduct(x.m, Eigen::MatrixXcd::Identity(ed, ed)).eval();
  std::vector<int> concat = x.region.sites;
  concat.insert(concat.end(), extra.begin(), extra.end());
  return {target, x.slot_dim, detail::sort_matrix_payload(k, concat, x.slot_dim)};
}

// a after b
inline DOp mul(const DOp& a, const DOp& b) {
  if (a.slot_dim != b.slot_dim) throw Error("slot dimension mismatch");
  const Region u = a.region.unite(b.region);
  return {u, a.slot_dim, lift(a, u).m * lift(b, u).m};
}

// Peel slots on which the operator factors as (reduced) (x) (scalar * Id);
// the scalar is absorbed into the reduced matrix, which makes the test exact
// for channel-level triviality of deterministic maps.
inline DOp reduce_support(const DOp& x, double tol = tol::support) {
  DOp out = x;
  for (std::size_t pos = out.region.size(); pos-- > 0;) {
    std::vector<int> dims(out.region.size(), out.slot_dim);
    if (detail::matrix_slot_identity(out.m, dims, static_cast<int>(pos), tol)) {
      out.m = detail::matrix_drop_slot(out.m, dims, static_cast<int>(pos));
      out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
    }
  }
  return out;
}

// one-particle operators on (site, mode) blocks for the fermionic backend
struct FOp {
  Region region;  // doubled ids
  int modes = 1;
  Eigen::MatrixXcd m;  // modes*|region| square
};

inline FOp lift(const FOp& x, const Region& target) {
  if (!x.region.subset_of(target)) throw Error("lift target must contain the region");
  std::vector<int> extra;
  for (int s : target.sites)
    if (!x.region.contains(s)) extra.push_back(s);
  if (extra.empty()) return x;
  const Eigen::Index em = static_cast<Eigen::Index>(extra.size()) * x.modes;
  Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(x.m.rows() + em, x.m.cols() + em);
  k.topLeftCorner(x.m.rows(), x.m.cols()) = x.m;
  k.bottomRightCorner(em, em).setIdentity();
  std::vector<int> concat = x.region.sites;
  concat.insert(concat.end(), extra.begin(), extra.end());
  Region t = target;
  return {t, x.modes, detail::sort_fermionic_matrix(k, concat, x.modes)};
}

inline FOp mul(const FOp& a, const FOp& b) {
  const Region u = a.region.unite(b.region);
  return {u, a.modes, lift(a, u).m * lift(b, u).m};
}

inline FOp reduce_support(const FOp& x, double tol = tol::support) {
  FOp out = x;
  for (std::size_t pos = out.region.size(); pos-- > 0;) {
    const int m = out.modes;
    const Eigen::Index p = static_cast<Eigen::Index>(pos) * m;
    bool trivial = (out.m.block(p, p, m, m) - Eigen::MatrixXcd::Identity(m, m))
                       .cwiseAbs()
                       .maxCoeff() <= tol;
    for (Eigen::Index r = 0; trivial && r < out.m.rows(); ++r)
      for (Eigen::Index c = 0; trivial && c < out.m.cols(); ++c) {
        const bool rin = r >= p && r < p + m, cin = c >= p && c < p + m;
        if (rin != cin && std::abs(out.m(r, c)) > tol) trivial = false;
      }
    if (!trivial) continue;
    Eigen::MatrixXcd kept(out.m.rows() - m, out.m.cols() - m);
    Eigen::Index rr = 0;
    for (Eigen::Index r = 0; r < out.m.rows(); ++r) {
      if (r >= p && r < p + m) continue;
      Eigen::Index cc = 0;
      for (Eigen::Index c = 0; c < out.m.cols(); ++c) {
        if (c >= p && c < p + m) continue;
        kept(rr, cc++) = out.m(r, c);
      }
      ++rr;
    }
    out.m = kept;
    out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
  }
  return out;
}

// residual between two matrices as channels: unitaries are compared up to a
// global phase fixed by the largest overlap
inline double phase_aligned_residual(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return 1.0;
  const Cd overlap = (b.adjoint() * a).trace();
  const Cd phase = std::abs(overlap) > 1e-12 ? overlap / std::abs(overlap) : Cd(1, 0);
  return (a - phase * b).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

struct SiteBlock {
  VertexId home = 0;
  // exactly one of `op` / `fop` is meaningful, matching the backend
  DOp op;
  FOp fop;
  std::vector<std::size_t> perm;  // classical blocks: permutation on the region's joint index
};

namespace detail {

inline std::vector<std::size_t> permutation_from_matrix(const Eigen::MatrixXcd& m,
                                                        const std::string& what) {
  std::vector<std::size_t> perm(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    int hits = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const Cd v = m(r, c);
      if (std::abs(v) < 1e-12) continue;
      if (std::abs(v - Cd(1, 0)) > 1e-12 || ++hits > 1)
        throw Error(what + " is not a deterministic reversible map");
      perm[c] = static_cast<std::size_t>(r);
    }
    if (hits != 1) throw Error(what + " is not a deterministic reversible map");
  }
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t t : perm) {
    if (seen[t]) throw Error(what + " is not invertible");
    seen[t] = true;
  }
  return perm;
}

}  // namespace detail

// Resolve a rule's block at home vertex g: region is the layer-0 copies of
// the offset targets together with (g,1); payload is permuted from the
// canonical slot order (offsets as listed, then home) to ascending id order.
inline SiteBlock instantiate_block(const CayleyGraph& graph, const LocalRule& rule,
                                   VertexId g) {
  const GroupModel& model = graph.presentation().model;
  std::vector<int> canonical;  // doubled ids in canonical slot order
  for (const Word& o : rule.offsets) {
    const Element t = model.mul(graph.vertices()[g], model.evaluate(o));
    auto v = graph.find(t);
    if (!v)
      throw Error("offset " + o.str() + " leaves the graph at vertex " +
                  graph.vertex_name(g));
    canonical.push_back(doubled_site(*v, 0));
  }
  canonical.push_back(doubled_site(g, 1));
  for (std::size_t i = 0; i < canonical.size(); ++i)
    for (std::size_t j = i + 1; j < canonical.size(); ++j)
      if (canonical[i] == canonical[j])
        throw Error("offsets collide at vertex " + graph.vertex_name(g) +
                    " (graph too small for this rule)");
  Region region{canonical};

  SiteBlock block;
  block.home = g;
  if (rule.system.backend == Backend::fermionic) {
    const int n = rule.system.dim;
    const auto dim = static_cast<Eigen::Index>(n * region.size());
    std::vector<int> slot_of(canonical.size());  // canonical position -> sorted slot
    for (std::size_t i = 0; i < canonical.size(); ++i) {
      const auto it =
          std::lower_bound(region.sites.begin(), region.sites.end(), canonical[i]);
      slot_of[i] = static_cast<int>(it - region.sites.begin());
    }
    // S' = Id - sum_i w_i v_i^T, with w built from the rule coefficients and
    // v from their conjugates (rows of the inverse of a unitary assembly)
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Identity(dim, dim);
    const int home_slot = slot_of[canonical.size() - 1];
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
      Eigen::VectorXcd v = Eigen::VectorXcd::Zero(dim);
      for (std::size_t h = 0; h < rule.offsets.size(); ++h)
        for (int jm = 0; jm < n; ++jm) {
          w[slot_of[h] * n + jm] += rule.fermionic_coeffs[h](jm, i);
          v[slot_of[h] * n + jm] += std::conj(rule.fermionic_coeffs[h](jm, i));
        }
      w[home_slot * n + i] -= 1.0;
      v[home_slot * n + i] -= 1.0;
      s -= w * v.transpose();
    }
    block.fop = {region, n, std::move(s)};
    return block;
  }

  const int d = rule.system.backend == Backend::classical ? rule.system.dim : 2;
  Eigen::MatrixXcd payload = rule.system.backend == Backend::classical
                                 ? rule.classical_block.cast<Cd>().eval()
                                 : rule.qubit_block;
  payload = detail::sort_matrix_payload(payload, canonical, d);
  block.op = {region, d, std::move(payload)};
  if (rule.system.backend == Backend::classical)
    block.perm = detail::permutation_from_matrix(block.op.m, "classical block");
  return block;
}

// ---------------------------------------------------------------------------
// rule validation

struct MixevCase {
  std::vector<VertexId> r_sites;  // layer 0
  std::vector<VertexId> s_sites;  // layer 1
  std::string witness;            // element of the spanning family
  bool with_ancilla = false;
  bool localized = true;
  double leak = 0.0;  // 1 when support escapes (set-level check)
};

struct RuleValidation {
  bool passed = false;
  double involution_residual = 0.0;
  double commutation_residual = 0.0;
  std::string worst_pair;
  std::vector<MixevCase> mixev;
  int probe_radius = 0;
  double fermionic_unitarity_residual = 0.0;
  std::string message;  // first failure description
};

namespace detail {

inline Region scheme_nplus(const CayleyGraph& graph, const LocalRule& rule,
                           const Region& r) {
  NeighborhoodScheme s(graph, rule.offsets);
  return s.n_plus(r);
}

inline Region scheme_nminus(const CayleyGraph& graph, const LocalRule& rule,
                            const Region& r) {
  NeighborhoodScheme s(graph, rule.offsets);
  return s.n_minus(r);
}

}  // namespace detail

class Automaton;  // forward declaration (assemble returns one)

// Build a probe graph for validating a rule against a presentation: finite
// models are used whole, infinite ones through a window sized by the offsets
// and the declared decomposability bound.
inline CayleyGraph probe_graph(const Presentation& p, const LocalRule& rule) {
  if (p.model.is_finite()) return CayleyGraph::build(p);
  const int r = 4 * std::max(rule.max_offset_length(), 1) + 2 * rule.decomposability_bound;
  return CayleyGraph::build(p, r);
}

inline RuleValidation validate_rule(const LocalRule& rule, const CayleyGraph& graph) {
  rule.validate_shape();
  RuleValidation report;
  report.probe_radius = graph.window_radius().value_or(0);
  const bool fermionic = rule.system.backend == Backend::fermionic;
  const VertexId e = graph.identity_vertex();

  // fermionic rules must assemble to a one-particle unitary before the block
  // construction (which presumes unitarity) makes sense; on windows the
  // residual is measured on interior rows only
  if (fermionic) {
    const int n = rule.system.dim;
    const int nv = graph.vertex_count();
    Eigen::MatrixXcd t = Eigen::MatrixXcd::Zero(n * nv, n * nv);
    const GroupModel& model = graph.presentation().model;
    for (VertexId g = 0; g < nv; ++g)
      for (std::size_t h = 0; h < rule.offsets.size(); ++h) {
        const Element tgt = model.mul(graph.vertices()[g], model.evaluate(rule.offsets[h]));
        if (auto v = graph.find(tgt))
          t.block(*v * n, g * n, n, n) += rule.fermionic_coeffs[h];
      }
    Eigen::MatrixXcd gram = t.adjoint() * t - Eigen::MatrixXcd::Identity(n * nv, n * nv);
    double res = 0.0;
    for (VertexId g = 0; g < nv; ++g) {
      if (graph.is_windowed() && !graph.interior(g)) continue;
      // column g of T is complete whenever g's forward targets exist, which
      // holds for interior vertices; measure those columns of the Gram defect
      for (VertexId f = 0; f < nv; ++f) {
        if (graph.is_windowed() && !graph.interior(f)) continue;
        res = std::max(res, gram.block(f * n, g * n, n, n).cwiseAbs().maxCoeff());
      }
    }
    report.fermionic_unitarity_residual = res;
    if (res > tol::fermionic_unitary) {
      report.message = "assembled one-particle matrix is not unitary (residual " +
                       std::to_string(res) + ")";
      return report;
    }
  }

  auto block_at = [&](VertexId g) { return instantiate_block(graph, rule, g); };

  // (i) involution
  SiteBlock home = block_at(e);
  if (fermionic) {
    const Eigen::MatrixXcd sq = home.fop.m * home.fop.m;
    report.involution_residual =
        (sq - Eigen::MatrixXcd::Identity(sq.rows(), sq.cols())).cwiseAbs().maxCoeff();
  } else {
    const Eigen::MatrixXcd sq = home.op.m * home.op.m;
    report.involution_residual = phase_aligned_residual(
        sq, Eigen::MatrixXcd::Identity(sq.rows(), sq.cols()));
  }
  if (report.involution_residual > tol::involution) {
    report.message = "block is not involutive (residual " +
                     std::to_string(report.involution_residual) + ")";
    return report;
  }

  // (ii) commutation with every translate whose region overlaps
  const Region home_region = fermionic ? home.fop.region : home.op.region;
  for (VertexId f = 0; f < graph.vertex_count(); ++f) {
    if (f == e) continue;
    SiteBlock other;
    try {
      other = block_at(f);
    } catch (const Error&) {
      continue;  // block not instantiable at the window edge
    }
    const Region other_region = fermionic ? other.fop.region : other.op.region;
    bool overlap = false;
    for (int s : other_region.sites)
      if (home_region.contains(s)) overlap = true;
    if (!overlap) continue;
    double res;
    if (fermionic) {
      res = (mul(home.fop, other.fop).m - mul(other.fop, home.fop).m).cwiseAbs().maxCoeff();
    } else {
      res = phase_aligned_residual(mul(home.op, other.op).m, mul(other.op, home.op).m);
    }
    if (res > report.commutation_residual) {
      report.commutation_residual = res;
      report.worst_pair = graph.vertex_name(e) + " vs " + graph.vertex_name(f);
    }
  }
  if (report.commutation_residual > tol::involution) {
    report.message = "blocks do not commute (" + report.worst_pair + ", residual " +
                     std::to_string(report.commutation_residual) + ")";
    return report;
  }

  // (iii) localization of mixed evolutions: conjugating a spanning map on
  // (R,0)+(S,1) by the blocks over N-(R) u S must land inside
  // (N+(S),0) u (N-(R),1).
  std::vector<std::pair<std::vector<VertexId>, std::vector<VertexId>>> cases;
  cases.push_back({{e}, {}});
  cases.push_back({{}, {e}});
  if (fermionic) {
    // second sites drawn from nearby vertices
    std::vector<VertexId> partners;
    for (VertexId f = 0; f < graph.vertex_count() && partners.size() < 3; ++f) {
      if (f == e) continue;
      auto d = graph.graph_distance(e, f);
      if (d && *d <= std::max(rule.max_offset_length(), 1)) partners.push_back(f);
    }
    for (VertexId f : partners) {
      cases.push_back({{e, f}, {}});
      cases.push_back({{e}, {f}});
      cases.push_back({{}, {e, f}});
    }
  }

  const int nv = graph.vertex_count();
  for (const auto& [rs, ss] : cases) {
    Region r{std::vector<int>(rs.begin(), rs.end())};
    Region s{std::vector<int>(ss.begin(), ss.end())};
    Region conj_sites;  // N-(R) u S
    Region prescribed;  // (N+(S),0) u (N-(R),1), plus any ancilla
    try {
      if (!r.sites.empty()) {
        const Region nm = detail::scheme_nminus(graph, rule, r);
        conj_sites = conj_sites.unite(nm);
        prescribed = prescribed.unite(to_doubled(nm, 1, nv));
      }
      if (!s.sites.empty()) {
        conj_sites = conj_sites.unite(s);
        prescribed = prescribed.unite(to_doubled(detail::scheme_nplus(graph, rule, s), 0, nv));
      }
    } catch (const Error& err) {
      report.message = std::string("probe graph too small: ") + err.what();
      return report;
    }

    // spanning maps on the doubled region (R,0) u (S,1)
    Region c_region = to_doubled(r, 0, nv).unite(to_doubled(s, 1, nv));
    std::vector<SpanningElement> family = region_spanning(rule.system, c_region);
    {
      const int anc = doubled_ancilla_base(graph);
      for (int site : c_region.sites)
        for (auto& el : ancilla_spanning(rule.system, site, anc)) {
          el.name += "@" + std::to_string(site);
          family.push_back(std::move(el));
        }
    }

    for (const auto& el : family) {
      MixevCase mc;
      mc.r_sites = rs;
      mc.s_sites = ss;
      mc.witness = el.name;
      mc.with_ancilla = el.payload.region.sites.back() >= doubled_ancilla_base(graph);
      Region target = prescribed;
      for (int s2 : el.payload.region.sites)
        if (s2 >= doubled_ancilla_base(graph)) target.sites.push_back(s2);
      target.normalize();

      Region leaked;
      if (fermionic) {
        FOp c{el.payload.region, rule.system.dim, el.payload.fermionic};
        FOp acc = c;
        for (int g : conj_sites.sites) acc = mul(block_at(g).fop, mul(acc, block_at(g).fop));
        leaked = reduce_support(acc).region;
      } else {
        Eigen::MatrixXcd cm = rule.system.backend == Backend::classical
                                  ? el.payload.classical.cast<Cd>().eval()
                                  : el.payload.kraus.at(0);
        DOp c{el.payload.region, rule.system.backend == Backend::classical ? rule.system.dim : 2,
              std::move(cm)};
        DOp acc = c;
        for (int g : conj_sites.sites) acc = mul(block_at(g).op, mul(acc, block_at(g).op));
        leaked = reduce_support(acc).region;
      }
      mc.localized = leaked.subset_of(target);
      mc.leak = mc.localized ? 0.0 : 1.0;
      report.mixev.push_back(mc);
      if (!mc.localized && report.message.empty()) {
        std::string desc = "mixed evolution escapes its neighborhood (witness " + el.name + ")";
        report.message = desc;
      }
    }
  }

  for (const MixevCase& mc : report.mixev)
    if (!mc.localized) return report;

  report.passed = true;
  return report;
}

inline RuleValidation validate_rule(const LocalRule& rule, const Presentation& p) {
  return validate_rule(rule, probe_graph(p, rule));
}

// ---------------------------------------------------------------------------
// automaton: a finite graph together with per-site blocks and, within caps,
// an explicit single-layer global rule

constexpr std::size_t kTableCap = std::size_t(1) << 20;

class Automaton {
 public:
  CayleyGraph graph;
  SiteSystem system;
  std::vector<Word> offsets;           // declared forward scheme
  std::optional<LocalRule> rule;       // present when assembled from a rule
  std::vector<SiteBlock> blocks;       // one per vertex when available
  std::vector<std::size_t> table;      // classical configurations, when within cap
  std::vector<std::size_t> table_inv;
  Eigen::MatrixXcd unitary;            // qubit global rule, when materialized
  Eigen::MatrixXcd one_particle;       // fermionic global rule (always cheap)

  bool has_blocks() const { return !blocks.empty(); }
  bool has_table() const { return !table.empty(); }
  bool has_unitary() const { return unitary.size() > 0; }

  std::size_t config_count() const {
    return detail::ipow(system.dim, static_cast<std::size_t>(graph.vertex_count()));
  }

  NeighborhoodScheme scheme() const { return NeighborhoodScheme(graph, offsets); }
};

namespace detail {

// configuration index <-> per-vertex digits (vertex 0 most significant)
inline std::size_t config_encode(const std::vector<int>& digits, int d) {
  std::size_t idx = 0;
  for (int x : digits) idx = idx * d + static_cast<std::size_t>(x);
  return idx;
}

inline std::vector<int> config_decode(std::size_t idx, int d, int n) {
  std::vector<int> out(n);
  for (int k = n; k-- > 0;) {
    out[k] = static_cast<int>(idx % d);
    idx /= d;
  }
  return out;
}

// apply a block permutation to digits laid out over `slots`
inline void apply_perm_digits(std::vector<int>& digits, const std::vector<int>& slots,
                              const std::vector<std::size_t>& perm, int d) {
  std::size_t local = 0;
  for (int s : slots) local = local * d + static_cast<std::size_t>(digits[s]);
  std::size_t image = perm[local];
  for (std::size_t k = slots.size(); k-- > 0;) {
    digits[slots[k]] = static_cast<int>(image % d);
    image /= d;
  }
}

// apply a local unitary on the given slots (slot 0 of the vector most
// significant) to a dense state vector
inline void apply_local_unitary(Eigen::VectorXcd& psi, int total_slots,
                                const std::vector<int>& slots, const Eigen::MatrixXcd& u,
                                int d = 2) {
  const std::size_t local_dim = detail::ipow(d, slots.size());
  std::vector<std::size_t> slot_stride(total_slots, 1);
  for (int k = total_slots - 1; k > 0; --k) slot_stride[k - 1] = slot_stride[k] * d;
  std::vector<std::size_t> local_stride(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) local_stride[i] = slot_stride[slots[i]];

  // offsets of the local basis states relative to a base index; constant
  // across groups, so compute them once instead of per amplitude
  std::vector<std::size_t> offs(local_dim);
  for (std::size_t l = 0; l < local_dim; ++l) {
    std::size_t idx = 0, rest = l;
    for (std::size_t k = slots.size(); k-- > 0;) {
      idx += (rest % d) * local_stride[k];
      rest /= d;
    }
    offs[l] = idx;
  }

  // enumerate base indices with zeros on `slots` (odometer over the free
  // slots: ascending order, amortised O(1) per step, no divisions)
  std::vector<bool> on(total_slots, false);
  for (int s : slots) on[s] = true;
  std::vector<std::size_t> free_strides;
  for (int k = 0; k < total_slots; ++k)
    if (!on[k]) free_strides.push_back(slot_stride[k]);
  const std::size_t free_count = detail::ipow(d, free_strides.size());
  Eigen::VectorXcd gather(static_cast<Eigen::Index>(local_dim)),
      scratch(static_cast<Eigen::Index>(local_dim));
  std::vector<int> fd(free_strides.size(), 0);
  std::size_t base = 0;
  for (std::size_t f = 0; f < free_count; ++f) {
    for (std::size_t l = 0; l < local_dim; ++l)
      gather[static_cast<Eigen::Index>(l)] = psi[static_cast<Eigen::Index>(base + offs[l])];
    scratch.noalias() = u * gather;
    for (std::size_t l = 0; l < local_dim; ++l)
      psi[static_cast<Eigen::Index>(base + offs[l])] = scratch[static_cast<Eigen::Index>(l)];
    for (std::size_t k = free_strides.size(); k-- > 0;) {
      if (++fd[k] < d) {
        base += free_strides[k];
        break;
      }
      fd[k] = 0;
      base -= free_strides[k] * static_cast<std::size_t>(d - 1);
    }
  }
}

}  // namespace detail

// slots (positions within the doubled lattice) covered by a region of doubled ids
inline std::vector<int> doubled_slots(const Region& r) {
  return r.sites;  // doubled id == slot index: 2v+layer over 2n slots
}

// Apply the assembled doubled-lattice map W = (prod_g S'_g) . S_G to a
// doubled classical configuration (layer-interleaved digits).
inline void apply_w_config(const Automaton& a, std::vector<int>& digits) {
  const int nv = a.graph.vertex_count();
  for (int v = 0; v < nv; ++v) std::swap(digits[2 * v], digits[2 * v + 1]);  // S_G
  for (const SiteBlock& b : a.blocks)
    detail::apply_perm_digits(digits, b.op.region.sites, b.perm, a.system.dim);
}

inline void apply_w_state(const Automaton& a, Eigen::VectorXcd& psi) {
  const int nv = a.graph.vertex_count();
  // S_G: swap the two layers of every vertex
  for (int v = 0; v < nv; ++v) {
    std::vector<int> slots{2 * v, 2 * v + 1};
    static const Eigen::MatrixXcd swap_gate = [] {
      Eigen::MatrixXcd s = Eigen::MatrixXcd::Zero(4, 4);
      s(0, 0) = s(3, 3) = s(1, 2) = s(2, 1) = 1.0;
      return s;
    }();
    detail::apply_local_unitary(psi, 2 * nv, slots, swap_gate, 2);
  }
  for (const SiteBlock& b : a.blocks)
    detail::apply_local_unitary(psi, 2 * nv, b.op.region.sites, b.op.m, 2);
}

// Derive the global single-layer rule from the blocks: apply the doubled map
// W = (prod_g S'_g) . S_G to reference layer-1 data and read off layer 0.
// Cross-checks the two-layer product structure along the way.  Within caps
// this fills `table` / `unitary` / `one_particle`; beyond them the automaton
// keeps only its blocks.
inline void derive_global(Automaton& a, unsigned consistency_seed = 12345) {
  const int nv = a.graph.vertex_count();
  if (a.system.backend == Backend::classical) {
    // the layer-1 byproduct of W(x,0) must not depend on the layer-0 input x
    std::vector<int> ref(2 * nv, 0);
    apply_w_config(a, ref);
    std::mt19937 rng(consistency_seed);
    for (int t = 0; t < 8; ++t) {
      std::vector<int> digits(2 * nv, 0);
      for (int vtx = 0; vtx < nv; ++vtx)
        digits[2 * vtx] = static_cast<int>(rng() % a.system.dim);
      apply_w_config(a, digits);
      for (int vtx = 0; vtx < nv; ++vtx)
        if (digits[2 * vtx + 1] != ref[2 * vtx + 1])
          throw Error("assembly inconsistency: layer-1 output depends on layer-0 input");
    }
    const std::size_t n = a.config_count();
    if (n <= kTableCap) {
      a.table.assign(n, 0);
      a.table_inv.assign(n, 0);
      for (std::size_t x = 0; x < n; ++x) {
        std::vector<int> cfg = detail::config_decode(x, a.system.dim, nv);
        std::vector<int> digits(2 * nv, 0);
        for (int vtx = 0; vtx < nv; ++vtx) digits[2 * vtx] = cfg[vtx];
        apply_w_config(a, digits);
        std::vector<int> out(nv);
        for (int vtx = 0; vtx < nv; ++vtx) out[vtx] = digits[2 * vtx];
        a.table[x] = detail::config_encode(out, a.system.dim);
      }
      std::vector<bool> seen(n, false);
      for (std::size_t x = 0; x < n; ++x) {
        if (seen[a.table[x]])
          throw Error("assembly inconsistency: global rule is not invertible");
        seen[a.table[x]] = true;
        a.table_inv[a.table[x]] = x;
      }
    }
  } else if (a.system.backend == Backend::qubit) {
    const std::size_t dim = detail::ipow(2, static_cast<std::size_t>(nv));
    if (dim <= kGlobalDimensionCap && nv <= 9) {
      const std::vector<int> dims(2 * nv, 2);
      std::vector<int> perm;  // reshaping order: layer-0 slots first, then layer-1
      for (int vtx = 0; vtx < nv; ++vtx) perm.push_back(2 * vtx);
      for (int vtx = 0; vtx < nv; ++vtx) perm.push_back(2 * vtx + 1);
      // W(e_i (x) |0..0>) reshaped so that mi(alpha, beta) indexes layer 0 by
      // alpha and layer 1 by beta
      auto doubled_image = [&](std::size_t i) {
        Eigen::VectorXcd psi =
            Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(dim * dim));
        std::vector<int> digits(2 * nv, 0);
        std::vector<int> cfg = detail::config_decode(i, 2, nv);
        for (int vtx = 0; vtx < nv; ++vtx) digits[2 * vtx] = cfg[vtx];
        psi[static_cast<Eigen::Index>(detail::encode(digits, dims))] = 1.0;
        apply_w_state(a, psi);
        Eigen::VectorXcd sorted = detail::permute_vector_slots(psi, dims, perm);
        Eigen::Map<Eigen::MatrixXcd> m(sorted.data(), static_cast<Eigen::Index>(dim),
                                       static_cast<Eigen::Index>(dim));
        return Eigen::MatrixXcd(m.transpose());
      };
      // the doubled product acts as V on layer 0 and leaves a fixed unit-norm
      // byproduct w on layer 1, so every image is the product (V e_i) w^T;
      // divide out one fixed component of w (the leftover phase is global)
      const Eigen::MatrixXcd m0 = doubled_image(0);
      Eigen::Index pivot = 0;
      Eigen::VectorXd col_norms = m0.colwise().norm().transpose();
      col_norms.maxCoeff(&pivot);
      const double wmag = m0.col(pivot).norm();  // |w_pivot|, since ||V e_0|| = 1
      if (wmag < 1e-9)
        throw Error("assembly inconsistency: degenerate layer-1 byproduct");
      Eigen::MatrixXcd vmat(static_cast<Eigen::Index>(dim),
                            static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < dim; ++i) {
        const Eigen::MatrixXcd mi = i == 0 ? m0 : doubled_image(i);
        const Eigen::VectorXcd u = mi.col(pivot);
        Eigen::Index du = 0;
        u.cwiseAbs().maxCoeff(&du);
        if (std::abs(u(du)) < 1e-12)
          throw Error("assembly inconsistency: doubled output loses the byproduct");
        const Eigen::RowVectorXcd wrow = mi.row(du) / u(du);
        if ((mi - u * wrow).cwiseAbs().maxCoeff() > tol::evolve_agree)
          throw Error("assembly inconsistency: doubled output is not a product state");
        vmat.col(static_cast<Eigen::Index>(i)) = u / wmag;
      }
      const double ures =
          (vmat.adjoint() * vmat -
           Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(dim),
                                      static_cast<Eigen::Index>(dim)))
              .cwiseAbs()
              .maxCoeff();
      if (ures > tol::evolve_agree)
        throw Error("assembly inconsistency: extracted rule is not unitary (residual " +
                    std::to_string(ures) + ")");
      a.unitary = vmat;
    }
  } else {
    // fermionic: materialize W on the doubled one-particle space (cheap) and
    // demand the two-layer form V + V^{-1}
    const int n = a.system.dim;
    Region all;
    for (int s = 0; s < 2 * nv; ++s) all.sites.push_back(s);
    Eigen::MatrixXcd sg = Eigen::MatrixXcd::Zero(2 * nv * n, 2 * nv * n);
    for (int vtx = 0; vtx < nv; ++vtx)
      for (int i = 0; i < n; ++i) {
        sg((2 * vtx) * n + i, (2 * vtx + 1) * n + i) = 1.0;
        sg((2 * vtx + 1) * n + i, (2 * vtx) * n + i) = 1.0;
      }
    FOp acc{all, n, std::move(sg)};
    for (const SiteBlock& b : a.blocks) acc = mul(b.fop, acc);

    Eigen::MatrixXcd v0(nv * n, nv * n), v1(nv * n, nv * n);
    double cross = 0.0;
    for (int vg = 0; vg < nv; ++vg)
      for (int vf = 0; vf < nv; ++vf) {
        v0.block(vf * n, vg * n, n, n) = acc.m.block((2 * vf) * n, (2 * vg) * n, n, n);
        v1.block(vf * n, vg * n, n, n) =
            acc.m.block((2 * vf + 1) * n, (2 * vg + 1) * n, n, n);
        cross = std::max(cross,
                         acc.m.block((2 * vf) * n, (2 * vg + 1) * n, n, n)
                             .cwiseAbs()
                             .maxCoeff());
        cross = std::max(cross,
                         acc.m.block((2 * vf + 1) * n, (2 * vg) * n, n, n)
                             .cwiseAbs()
                             .maxCoeff());
      }
    if (cross > tol::evolve_agree)
      throw Error("assembly inconsistency: doubled product couples the two layers "
                  "(residual " + std::to_string(cross) + ")");
    const Eigen::MatrixXcd id = Eigen::MatrixXcd::Identity(nv * n, nv * n);
    const double inv_res = std::max((v0 * v1 - id).cwiseAbs().maxCoeff(),
                                    (v1 * v0 - id).cwiseAbs().maxCoeff());
    if (inv_res > tol::evolve_agree)
      throw Error("assembly inconsistency: layer-1 part is not the inverse rule "
                  "(residual " + std::to_string(inv_res) + ")");
    const double ures = (v0.adjoint() * v0 - id).cwiseAbs().maxCoeff();
    if (ures > tol::fermionic_unitary)
      throw Error("assembled one-particle matrix is not unitary (residual " +
                  std::to_string(ures) + ")");
    a.one_particle = v0;
  }
}

// Assemble a rule on a finite graph: validate, instantiate one block per
// vertex, then derive the global single-layer rule.
inline Automaton assemble(const LocalRule& rule, const CayleyGraph& graph,
                          unsigned consistency_seed = 12345) {
  if (graph.is_windowed())
    throw Error("assembly needs a finite graph (use windows only for probes)");
  RuleValidation v = validate_rule(rule, graph);
  if (!v.passed) throw Error("rule fails validation: " + v.message);

  Automaton a;
  a.graph = graph;
  a.system = rule.system;
  a.offsets = rule.offsets;
  a.rule = rule;
  for (VertexId g = 0; g < graph.vertex_count(); ++g)
    a.blocks.push_back(instantiate_block(graph, rule, g));
  derive_global(a, consistency_seed);
  return a;
}

// Explicit global rules (no generating blocks supplied): classical
// permutation tables, site-linear GF(2) maps, and qubit unitaries.
inline Automaton automaton_from_classical_table(const CayleyGraph& graph, int d,
                                                std::vector<std::size_t> table,
                                                std::vector<Word> offsets) {
  if (graph.is_windowed()) throw Error("explicit rules need a finite graph");
  Automaton a;
  a.graph = graph;
  a.system = SiteSystem{Backend::classical, d};
  a.system.validate();
  a.offsets = std::move(offsets);
  const std::size_t n = a.config_count();
  if (table.size() != n) throw Error("table size does not match the configuration count");
  a.table = std::move(table);
  a.table_inv.assign(n, 0);
  std::vector<bool> seen(n, false);
  for (std::size_t x = 0; x < n; ++x) {
    if (a.table[x] >= n || seen[a.table[x]]) throw Error("table is not a permutation");
    seen[a.table[x]] = true;
    a.table_inv[a.table[x]] = x;
  }
  return a;
}

// rows/cols indexed by vertices; configuration map x -> Mx over GF(2)
inline Automaton automaton_from_gf2(const CayleyGraph& graph,
                                    const std::vector<std::vector<int>>& m,
                                    std::vector<Word> offsets) {
  const int nv = graph.vertex_count();
  if (static_cast<int>(m.size()) != nv)
    throw Error("GF(2) matrix size does not match the vertex count");
  const std::size_t n = std::size_t(1) << nv;
  if (n > kTableCap) throw Error("configuration space exceeds the table cap");
  std::vector<std::size_t> table(n, 0);
  for (std::size_t x = 0; x < n; ++x) {
    std::size_t y = 0;
    for (int r = 0; r < nv; ++r) {
      int bit = 0;
      for (int c = 0; c < nv; ++c)
        if (m[r][c] & 1) bit ^= static_cast<int>((x >> (nv - 1 - c)) & 1u);
      y |= static_cast<std::size_t>(bit) << (nv - 1 - r);
    }
    table[x] = y;
  }
  return automaton_from_classical_table(graph, 2, std::move(table), std::move(offsets));
}

inline Automaton automaton_from_unitary(const CayleyGraph& graph, Eigen::MatrixXcd u,
                                        std::vector<Word> offsets) {
  if (graph.is_windowed()) throw Error("explicit rules need a finite graph");
  Automaton a;
  a.graph = graph;
  a.system = SiteSystem{Backend::qubit, 2};
  a.offsets = std::move(offsets);
  const auto dim = static_cast<Eigen::Index>(a.config_count());
  if (u.rows() != dim || u.cols() != dim)
    throw Error("unitary size does not match the configuration count");
  const double res =
      (u.adjoint() * u - Eigen::MatrixXcd::Identity(dim, dim)).cwiseAbs().maxCoeff();
  if (res > tol::fermionic_unitary)
    throw Error("explicit qubit rule is not unitary (residual " + std::to_string(res) + ")");
  a.unitary = std::move(u);
  return a;
}

// ---------------------------------------------------------------------------
// state evolution

inline std::vector<int> evolve_configuration(const Automaton& a, std::vector<int> cfg,
                                             int steps = 1, bool backward = false) {
  if (a.system.backend != Backend::classical)
    throw Error("configuration evolution is classical only");
  const int nv = a.graph.vertex_count();
  if (static_cast<int>(cfg.size()) != nv)
    throw Error("configuration length does not match the vertex count");
  for (int x : cfg)
    if (x < 0 || x >= a.system.dim) throw Error("configuration digit out of range");
  if (steps < 0) {
    backward = !backward;
    steps = -steps;
  }
  for (int s = 0; s < steps; ++s) {
    if (a.has_table()) {
      const std::size_t idx = detail::config_encode(cfg, a.system.dim);
      cfg = detail::config_decode(backward ? a.table_inv[idx] : a.table[idx],
                                  a.system.dim, nv);
      continue;
    }
    if (!a.has_blocks()) throw Error("automaton has neither a table nor blocks");
    std::vector<int> digits(2 * nv, 0);
    for (int v = 0; v < nv; ++v) digits[2 * v] = cfg[v];
    if (backward) {
      // W^{-1} = S_G W S_G collapses to: blocks first, then the layer swap
      for (const SiteBlock& b : a.blocks)
        detail::apply_perm_digits(digits, b.op.region.sites, b.perm, a.system.dim);
      for (int v = 0; v < nv; ++v) std::swap(digits[2 * v], digits[2 * v + 1]);
    } else {
      apply_w_config(a, digits);
    }
    for (int v = 0; v < nv; ++v) cfg[v] = digits[2 * v];
  }
  return cfg;
}

// Dense full-graph states; requires the explicit global rule.
inline RegionState evolve_state(const Automaton& a, const RegionState& st, int steps = 1,
                                bool backward = false) {
  const int nv = a.graph.vertex_count();
  Region full;
  for (int v = 0; v < nv; ++v) full.sites.push_back(v);
  if (!(st.region == full)) throw Error("state evolution expects a full-graph state");
  if (steps < 0) {
    backward = !backward;
    steps = -steps;
  }
  RegionState out = st;
  if (a.system.backend == Backend::classical) {
    if (!a.has_table()) throw Error("global rule exceeds the table cap");
    for (int s = 0; s < steps; ++s) {
      Eigen::VectorXd next = Eigen::VectorXd::Zero(out.classical.size());
      for (Eigen::Index x = 0; x < out.classical.size(); ++x) {
        const std::size_t y = backward ? a.table_inv[static_cast<std::size_t>(x)]
                                       : a.table[static_cast<std::size_t>(x)];
        next[static_cast<Eigen::Index>(y)] += out.classical[x];
      }
      out.classical = std::move(next);
    }
  } else if (a.system.backend == Backend::qubit) {
    if (!a.has_unitary()) throw Error("global rule exceeds the dimension cap");
    for (int s = 0; s < steps; ++s) {
      if (backward)
        out.qubit = (a.unitary.adjoint() * out.qubit * a.unitary).eval();
      else
        out.qubit = (a.unitary * out.qubit * a.unitary.adjoint()).eval();
    }
  } else {
    if (a.one_particle.size() == 0) throw Error("automaton has no one-particle rule");
    for (int s = 0; s < steps; ++s)
      out.fermionic = backward ? (a.one_particle.adjoint() * out.fermionic).eval()
                               : (a.one_particle * out.fermionic).eval();
  }
  return out;
}

// ---------------------------------------------------------------------------
// transformation evolution

namespace detail {

// joint identity-slot reduction across parallel payloads (e.g. Kraus lists)
inline std::pair<Region, std::vector<Eigen::MatrixXcd>> reduce_support_joint(
    Region region, std::vector<Eigen::MatrixXcd> ms, int slot_dim,
    double tol = tol::support) {
  for (std::size_t pos = region.size(); pos-- > 0;) {
    std::vector<int> dims(region.size(), slot_dim);
    bool trivial = true;
    for (const auto& m : ms)
      if (!matrix_slot_identity(m, dims, static_cast<int>(pos), tol)) {
        trivial = false;
        break;
      }
    if (!trivial) continue;
    for (auto& m : ms) m = matrix_drop_slot(m, dims, static_cast<int>(pos));
    region.sites.erase(region.sites.begin() + static_cast<long>(pos));
  }
  return {std::move(region), std::move(ms)};
}

inline RegionTransformation transformation_from_matrices(const SiteSystem& sys,
                                                         const Region& region,
                                                         std::vector<Eigen::MatrixXcd> ms) {
  RegionTransformation out;
  out.system = sys;
  out.region = region;
  if (sys.backend == Backend::classical) {
    if (ms.size() != 1) throw Error("classical transformations carry one matrix");
    if (ms[0].imag().cwiseAbs().maxCoeff() > 1e-12)
      throw Error("classical payload came out complex");
    out.classical = ms[0].real();
  } else if (sys.backend == Backend::qubit) {
    out.kraus = std::move(ms);
    if (ipow(4, region.size()) <= kGlobalDimensionCap)
      out.qubit_ptm = ptm_from_kraus(out.kraus, static_cast<int>(region.size()));
  } else {
    if (ms.size() != 1) throw Error("fermionic transformations carry one matrix");
    out.fermionic = std::move(ms[0]);
  }
  return out;
}

// single-layer payload matrices of a transformation, for conjugation algebra
inline std::vector<Eigen::MatrixXcd> payload_matrices(const RegionTransformation& f) {
  if (f.system.backend == Backend::classical) return {f.classical.cast<Cd>().eval()};
  if (f.system.backend == Backend::fermionic) return {f.fermionic};
  if (f.kraus.empty())
    throw Error("qubit transformation evolution needs a Kraus presentation");
  return f.kraus;
}

}  // namespace detail

// One evolution step of a transformation.  With blocks present the
// conjugation is local: the payload enters on layer 1 (forward) or layer 0
// (backward) and only the blocks over the region (forward) or its backward
// neighborhood are applied.  Explicit automata fall back to conjugation by
// the global rule, within caps.
inline RegionTransformation evolve_transformation_once(const Automaton& a,
                                                       const RegionTransformation& f,
                                                       bool backward = false) {
  if (!(f.system == a.system)) throw Error("transformation backend mismatch");
  const int nv = a.graph.vertex_count();
  Region lattice, ancilla;
  for (int v : f.region.sites) (v < nv ? lattice : ancilla).sites.push_back(v);
  if (lattice.sites.empty()) return f;

  const int in_layer = backward ? 0 : 1;
  const int out_layer = backward ? 1 : 0;

  if (a.has_blocks()) {
    const Region conj = backward ? a.scheme().n_minus(lattice) : lattice;
    for (int g : conj.sites) {
      const SiteBlock& b = a.blocks[g];
      if ((a.system.backend == Backend::fermionic ? b.fop.m.size() : b.op.m.size()) == 0)
        throw Error("no block at site " + a.graph.vertex_name(g) +
                    " (window too small)");
    }
    const Region start = to_doubled(f.region, in_layer, nv);
    if (a.system.backend == Backend::fermionic) {
      FOp cur{start, a.system.dim, f.fermionic};
      for (int g : conj.sites) {
        const FOp& b = a.blocks[g].fop;
        cur = mul(b, mul(cur, b));
      }
      const FOp red = reduce_support(cur);
      return detail::transformation_from_matrices(
          a.system, from_doubled(red.region, out_layer, nv), {red.m});
    }
    const int d = a.system.backend == Backend::classical ? a.system.dim : 2;
    std::vector<Eigen::MatrixXcd> ms = detail::payload_matrices(f);
    Region region = start;
    {
      // conjugate all payloads over a common region so slots stay aligned
      Region total = start;
      for (int g : conj.sites) total = total.unite(a.blocks[g].op.region);
      for (auto& m : ms) {
        DOp cur = lift(DOp{start, d, std::move(m)}, total);
        for (int g : conj.sites) {
          const DOp b = lift(a.blocks[g].op, total);
          cur.m = b.m * cur.m * b.m;
        }
        m = std::move(cur.m);
      }
      region = total;
    }
    auto [red_region, red_ms] = detail::reduce_support_joint(region, std::move(ms), d);
    return detail::transformation_from_matrices(
        a.system, from_doubled(red_region, out_layer, nv), std::move(red_ms));
  }

  // explicit global rule; single layer throughout
  Region full;
  for (int v = 0; v < nv; ++v) full.sites.push_back(v);
  for (int s : ancilla.sites) full.sites.push_back(s);
  const int anc_count = static_cast<int>(ancilla.size());

  if (a.system.backend == Backend::fermionic) {
    if (a.one_particle.size() == 0) throw Error("automaton has no one-particle rule");
    const int n = a.system.dim;
    Eigen::MatrixXcd tf = Eigen::MatrixXcd::Identity((nv + anc_count) * n,
                                                     (nv + anc_count) * n);
    tf.topLeftCorner(nv * n, nv * n) = a.one_particle;
    FOp cur = lift(FOp{f.region, n, f.fermionic}, full);
    if (backward)
      cur.m = (tf.adjoint() * cur.m * tf).eval();
    else
      cur.m = (tf * cur.m * tf.adjoint()).eval();
    const FOp red = reduce_support(cur);
    return detail::transformation_from_matrices(a.system, red.region, {red.m});
  }

  const int d = a.system.backend == Backend::classical ? a.system.dim : 2;
  const std::size_t anc_dim = detail::ipow(d, static_cast<std::size_t>(anc_count));
  const std::size_t total_dim = a.config_count() * anc_dim;
  if (total_dim > (std::size_t(1) << 11))
    throw Error("explicit conjugation exceeds the dense dimension cap");

  std::vector<Eigen::MatrixXcd> ms = detail::payload_matrices(f);
  if (a.system.backend == Backend::classical) {
    if (!a.has_table()) throw Error("global rule exceeds the table cap");
    // index permutation on (configuration, ancilla) pairs
    auto src = [&](std::size_t i) {
      const std::size_t x = i / anc_dim, y = i % anc_dim;
      return (backward ? a.table[x] : a.table_inv[x]) * anc_dim + y;
    };
    for (auto& m : ms) {
      const Eigen::MatrixXcd lifted =
          lift(DOp{f.region, d, std::move(m)}, full).m;
      Eigen::MatrixXcd g(lifted.rows(), lifted.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          g(r, c) = lifted(static_cast<Eigen::Index>(src(static_cast<std::size_t>(r))),
                           static_cast<Eigen::Index>(src(static_cast<std::size_t>(c))));
      m = std::move(g);
    }
  } else {
    if (!a.has_unitary()) throw Error("global rule exceeds the dimension cap");
    Eigen::MatrixXcd u_full = Eigen::kroneckerProduct(
        a.unitary, Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(anc_dim),
                                              static_cast<Eigen::Index>(anc_dim)));
    if (backward) u_full.adjointInPlace();
    for (auto& m : ms) {
      const Eigen::MatrixXcd lifted = lift(DOp{f.region, d, std::move(m)}, full).m;
      m = (u_full * lifted * u_full.adjoint()).eval();
    }
  }
  auto [red_region, red_ms] = detail::reduce_support_joint(full, std::move(ms), d);
  return detail::transformation_from_matrices(a.system, red_region, std::move(red_ms));
}

inline RegionTransformation evolve_transformation(const Automaton& a,
                                                  const RegionTransformation& f,
                                                  int steps = 1, bool backward = false) {
  if (steps < 0) {
    backward = !backward;
    steps = -steps;
  }
  RegionTransformation cur = f;
  for (int s = 0; s < steps; ++s) cur = evolve_transformation_once(a, cur, backward);
  return cur;
}

// ---------------------------------------------------------------------------
// block extraction from an explicit global rule

struct ExtractedBlock {
  VertexId home = 0;
  Region layer0;  // single-layer support sites on the input layer
  bool within_scheme = false;
  Eigen::MatrixXcd matrix;    // classical / qubit payload on the doubled region
  Eigen::MatrixXcd fermionic;
  std::vector<std::size_t> perm;
  Region doubled_region;
};

struct BlockExtraction {
  std::vector<ExtractedBlock> blocks;
  bool local = false;       // every support fits the declared scheme
  bool decomposed = false;  // reassembled product reproduces the rule
  double reassembly_residual = 1.0;
  std::string message;
};

namespace detail {

inline Automaton automaton_from_extracted(const Automaton& a,
                                          const BlockExtraction& ex) {
  Automaton out;
  out.graph = a.graph;
  out.system = a.system;
  out.offsets = a.offsets;
  for (const ExtractedBlock& b : ex.blocks) {
    SiteBlock sb;
    sb.home = b.home;
    if (a.system.backend == Backend::fermionic) {
      sb.fop = {b.doubled_region, a.system.dim, b.fermionic};
    } else {
      sb.op = {b.doubled_region, a.system.backend == Backend::classical ? a.system.dim : 2,
               b.matrix};
      sb.perm = b.perm;
    }
    out.blocks.push_back(std::move(sb));
  }
  return out;
}

}  // namespace detail

inline BlockExtraction extract_blocks(const Automaton& a) {
  const int nv = a.graph.vertex_count();
  BlockExtraction ex;
  const NeighborhoodScheme scheme = a.scheme();

  if (a.system.backend == Backend::classical) {
    if (!a.has_table()) throw Error("block extraction needs the configuration table");
    const std::size_t n = a.config_count();
    if (n * n > kTableCap) throw Error("doubled configuration space exceeds the table cap");
    const int d = a.system.dim;
    // composite index = x * n + y over (layer-0 config x, layer-1 config y);
    // per-site digit strides for O(1) digit access
    std::vector<std::size_t> stride(2 * nv);
    for (int v = 0; v < nv; ++v) {
      const std::size_t s = detail::ipow(d, static_cast<std::size_t>(nv - 1 - v));
      stride[doubled_site(v, 0)] = s * n;
      stride[doubled_site(v, 1)] = s;
    }
    auto digit_at = [&](std::size_t comp, int site) {
      return static_cast<int>((comp / stride[site]) % static_cast<std::size_t>(d));
    };
    for (VertexId h = 0; h < nv; ++h) {
      // S'_h as a function on doubled configurations
      std::vector<std::size_t> fn(n * n);
      for (std::size_t i = 0; i < n * n; ++i) {
        const std::size_t x = i / n, y = i % n;
        std::vector<int> u = detail::config_decode(a.table_inv[x], d, nv);
        std::vector<int> yv = detail::config_decode(y, d, nv);
        std::swap(u[h], yv[h]);
        fn[i] = a.table[detail::config_encode(u, d)] * n + detail::config_encode(yv, d);
      }
      // essential doubled sites: output moved there, or some output depends on it
      std::vector<bool> ess(2 * nv, false);
      for (std::size_t i = 0; i < n * n; ++i)
        for (int s = 0; s < 2 * nv; ++s)
          if (!ess[s] && digit_at(fn[i], s) != digit_at(i, s)) ess[s] = true;
      for (int s = 0; s < 2 * nv; ++s) {
        if (ess[s]) continue;
        for (std::size_t i = 0; i < n * n && !ess[s]; ++i) {
          const int dig = digit_at(i, s);
          const std::size_t bumped =
              i - static_cast<std::size_t>(dig) * stride[s] +
              static_cast<std::size_t>((dig + 1) % d) * stride[s];
          // compare the two outputs with the digit at s masked off
          const std::size_t m1 = fn[i] - digit_at(fn[i], s) * stride[s];
          const std::size_t m2 = fn[bumped] - digit_at(fn[bumped], s) * stride[s];
          if (m1 != m2) ess[s] = true;
        }
      }
      ExtractedBlock blk;
      blk.home = h;
      for (int s = 0; s < 2 * nv; ++s)
        if (ess[s]) blk.doubled_region.sites.push_back(s);
      blk.doubled_region.normalize();
      if (!blk.doubled_region.contains(doubled_site(h, 1)))
        blk.doubled_region.sites.insert(
            std::lower_bound(blk.doubled_region.sites.begin(),
                             blk.doubled_region.sites.end(), doubled_site(h, 1)),
            doubled_site(h, 1));
      for (int s : blk.doubled_region.sites) {
        if (doubled_layer(s) == 1 && doubled_vertex(s) != h) {
          ex.message = "block at " + a.graph.vertex_name(h) +
                       " touches a foreign layer-1 site";
          return ex;
        }
        if (doubled_layer(s) == 0) blk.layer0.sites.push_back(doubled_vertex(s));
      }
      blk.layer0.normalize();
      // reduced permutation over the support slots, checked on two backgrounds
      const auto& slots = blk.doubled_region.sites;
      const std::size_t local_n = detail::ipow(d, slots.size());
      blk.perm.assign(local_n, 0);
      blk.matrix = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(local_n),
                                          static_cast<Eigen::Index>(local_n));
      for (int background : {0, d - 1}) {
        for (std::size_t l = 0; l < local_n; ++l) {
          std::size_t comp = 0;
          for (int s = 0; s < 2 * nv; ++s)
            comp += static_cast<std::size_t>(background) * stride[s];
          std::size_t rest = l;
          for (std::size_t k = slots.size(); k-- > 0;) {
            comp -= static_cast<std::size_t>(background) * stride[slots[k]];
            comp += (rest % d) * stride[slots[k]];
            rest /= d;
          }
          const std::size_t image = fn[comp];
          std::size_t lim = 0;
          for (int s : slots) lim = lim * d + static_cast<std::size_t>(digit_at(image, s));
          if (background == 0) {
            blk.perm[l] = lim;
            blk.matrix(static_cast<Eigen::Index>(lim), static_cast<Eigen::Index>(l)) = 1.0;
          } else if (blk.perm[l] != lim) {
            ex.message = "support reduction is not exact at " + a.graph.vertex_name(h);
            return ex;
          }
        }
      }
      const Region prescribed = scheme.n_plus(Region{{h}});
      blk.within_scheme = blk.layer0.subset_of(prescribed);
      ex.blocks.push_back(std::move(blk));
    }
  } else if (a.system.backend == Backend::qubit) {
    if (!a.has_unitary()) throw Error("block extraction needs the global unitary");
    const std::size_t dim = a.config_count();
    const std::vector<int> dims(nv, 2);
    for (VertexId h = 0; h < nv; ++h) {
      // coefficients A_ij = V E_ij V^dagger of the block at h
      std::array<std::array<Eigen::MatrixXcd, 2>, 2> coeff;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          Eigen::MatrixXcd e = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                                      static_cast<Eigen::Index>(dim));
          for (std::size_t r = 0; r < dim; ++r) {
            std::vector<int> rd = detail::config_decode(r, 2, nv);
            if (rd[h] != i) continue;
            std::vector<int> cd = rd;
            cd[h] = j;
            e(static_cast<Eigen::Index>(r),
              static_cast<Eigen::Index>(detail::config_encode(cd, 2))) = 1.0;
          }
          coeff[i][j] = a.unitary * e * a.unitary.adjoint();
        }
      ExtractedBlock blk;
      blk.home = h;
      for (int f = 0; f < nv; ++f) {
        bool trivial = true;
        for (int i = 0; i < 2 && trivial; ++i)
          for (int j = 0; j < 2 && trivial; ++j)
            if (!detail::matrix_slot_identity(coeff[i][j], dims, f, tol::support))
              trivial = false;
        if (!trivial) blk.layer0.sites.push_back(f);
      }
      blk.layer0.normalize();
      if (blk.layer0.sites.empty()) blk.layer0.sites.push_back(h);
      // reduce coefficients to the support slots, dropping from the highest
      // site down so positions of lower sites stay valid
      std::array<std::array<Eigen::MatrixXcd, 2>, 2> red = coeff;
      for (int f = nv; f-- > 0;) {
        if (blk.layer0.contains(f)) continue;
        int count = f + 1;  // sites <= f still present, plus kept sites above
        for (int g : blk.layer0.sites)
          if (g > f) ++count;
        const std::vector<int> dcur(count, 2);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j)
            red[i][j] = detail::matrix_drop_slot(red[i][j], dcur, f);
      }
      // assemble the doubled block: sum_ij A~_ij (x) |j><i| at (h,1)
      std::vector<int> concat;
      for (int f : blk.layer0.sites) concat.push_back(doubled_site(f, 0));
      concat.push_back(doubled_site(h, 1));
      Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(red[0][0].rows() * 2,
                                                  red[0][0].cols() * 2);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          Eigen::MatrixXcd eji = Eigen::MatrixXcd::Zero(2, 2);
          eji(j, i) = 1.0;
          b += Eigen::kroneckerProduct(red[i][j], eji);
        }
      blk.matrix = detail::sort_matrix_payload(b, concat, 2);
      blk.doubled_region = Region{concat};
      const double ub = (blk.matrix.adjoint() * blk.matrix -
                         Eigen::MatrixXcd::Identity(blk.matrix.rows(), blk.matrix.cols()))
                            .cwiseAbs()
                            .maxCoeff();
      if (ub > tol::evolve_agree) {
        ex.message = "candidate block at " + a.graph.vertex_name(h) + " is not unitary";
        return ex;
      }
      blk.within_scheme = blk.layer0.subset_of(scheme.n_plus(Region{{h}}));
      ex.blocks.push_back(std::move(blk));
    }
  } else {
    if (a.one_particle.size() == 0) throw Error("automaton has no one-particle rule");
    const int n = a.system.dim;
    const Eigen::MatrixXcd& t = a.one_particle;
    const double ures =
        (t.adjoint() * t - Eigen::MatrixXcd::Identity(t.rows(), t.cols()))
            .cwiseAbs()
            .maxCoeff();
    if (ures > tol::fermionic_unitary) {
      ex.message = "one-particle rule is not unitary (residual " + std::to_string(ures) +
                   "); no block decomposition exists";
      return ex;
    }
    for (VertexId g = 0; g < nv; ++g) {
      ExtractedBlock blk;
      blk.home = g;
      for (int f = 0; f < nv; ++f)
        if (t.block(f * n, g * n, n, n).cwiseAbs().maxCoeff() > tol::support)
          blk.layer0.sites.push_back(f);
      blk.layer0.normalize();
      if (blk.layer0.sites.empty()) blk.layer0.sites.push_back(g);
      std::vector<int> concat;
      for (int f : blk.layer0.sites) concat.push_back(doubled_site(f, 0));
      concat.push_back(doubled_site(g, 1));
      Region region{concat};
      std::vector<int> slot_of(concat.size());
      for (std::size_t i = 0; i < concat.size(); ++i) {
        const auto it =
            std::lower_bound(region.sites.begin(), region.sites.end(), concat[i]);
        slot_of[i] = static_cast<int>(it - region.sites.begin());
      }
      const auto dim = static_cast<Eigen::Index>(n * region.size());
      Eigen::MatrixXcd s = Eigen::MatrixXcd::Identity(dim, dim);
      const int home_slot = slot_of[concat.size() - 1];
      for (int i = 0; i < n; ++i) {
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(dim);
        Eigen::VectorXcd v = Eigen::VectorXcd::Zero(dim);
        for (std::size_t k = 0; k < blk.layer0.sites.size(); ++k) {
          const int f = blk.layer0.sites[k];
          for (int jm = 0; jm < n; ++jm) {
            w[slot_of[k] * n + jm] += t(f * n + jm, g * n + i);
            v[slot_of[k] * n + jm] += std::conj(t(f * n + jm, g * n + i));
          }
        }
        w[home_slot * n + i] -= 1.0;
        v[home_slot * n + i] -= 1.0;
        s -= w * v.transpose();
      }
      blk.fermionic = std::move(s);
      blk.doubled_region = region;
      blk.within_scheme = blk.layer0.subset_of(scheme.n_plus(Region{{g}}));
      ex.blocks.push_back(std::move(blk));
    }
  }

  ex.local = true;
  for (const ExtractedBlock& b : ex.blocks)
    if (!b.within_scheme) ex.local = false;

  // reassembly: push the extracted blocks back through the doubled product
  try {
    Automaton re = detail::automaton_from_extracted(a, ex);
    derive_global(re);
    if (a.system.backend == Backend::classical) {
      ex.reassembly_residual = re.table == a.table ? 0.0 : 1.0;
    } else if (a.system.backend == Backend::qubit) {
      ex.reassembly_residual = phase_aligned_residual(re.unitary, a.unitary);
    } else {
      ex.reassembly_residual = (re.one_particle - a.one_particle).cwiseAbs().maxCoeff();
    }
    ex.decomposed = ex.reassembly_residual <= tol::evolve_agree;
    if (!ex.decomposed && ex.message.empty())
      ex.message = "reassembled blocks do not reproduce the rule (residual " +
                   std::to_string(ex.reassembly_residual) + ")";
  } catch (const Error& err) {
    ex.decomposed = false;
    if (ex.message.empty())
      ex.message = std::string("reassembly failed: ") + err.what();
  }
  return ex;
}

// ---------------------------------------------------------------------------
// translation invariance

struct TranslationReport {
  bool invariant = true;
  double residual = 0.0;
  std::string generator;
  std::string failing_site;
};

inline TranslationReport check_translation_invariance(const Automaton& a) {
  if (a.graph.is_windowed())
    throw Error("translation invariance is undefined on a windowed graph");
  TranslationReport rep;
  const GroupModel& model = a.graph.presentation().model;
  const int nv = a.graph.vertex_count();

  for (const std::string& label : a.graph.presentation().generators) {
    const Element t = model.generator_map().at(label);
    if (a.has_blocks()) {
      for (VertexId g = 0; g < nv; ++g) {
        const VertexId tg = a.graph.require(model.mul(t, a.graph.vertices()[g]));
        const SiteBlock& src = a.blocks[g];
        const SiteBlock& dst = a.blocks[tg];
        const Region& src_region =
            a.system.backend == Backend::fermionic ? src.fop.region : src.op.region;
        std::vector<int> moved;
        for (int s : src_region.sites)
          moved.push_back(doubled_site(
              a.graph.require(model.mul(t, a.graph.vertices()[doubled_vertex(s)])),
              doubled_layer(s)));
        const Region& dst_region =
            a.system.backend == Backend::fermionic ? dst.fop.region : dst.op.region;
        double res;
        if (!(Region{moved} == dst_region)) {
          res = 1.0;
        } else if (a.system.backend == Backend::fermionic) {
          res = (detail::sort_fermionic_matrix(src.fop.m, moved, a.system.dim) - dst.fop.m)
                    .cwiseAbs()
                    .maxCoeff();
        } else if (a.system.backend == Backend::qubit) {
          res = phase_aligned_residual(detail::sort_matrix_payload(src.op.m, moved, 2),
                                       dst.op.m);
        } else {
          res = (detail::sort_matrix_payload(src.op.m, moved, a.system.dim) - dst.op.m)
                    .cwiseAbs()
                    .maxCoeff();
        }
        if (res > rep.residual) {
          rep.residual = res;
          rep.generator = label;
          rep.failing_site = a.graph.vertex_name(tg);
        }
      }
      continue;
    }
    // explicit rules: conjugate by the induced configuration permutation
    const std::vector<VertexId> perm =
        a.graph.translation_permutation(Word::from_symbol(label));
    if (a.has_table()) {
      const int d = a.system.dim;
      const std::size_t n = a.config_count();
      auto pidx = [&](std::size_t x) {
        const std::vector<int> cfg = detail::config_decode(x, d, nv);
        std::vector<int> out(nv);
        for (int v = 0; v < nv; ++v) out[perm[v]] = cfg[v];
        return detail::config_encode(out, d);
      };
      for (std::size_t x = 0; x < n; ++x) {
        const std::size_t lhs = a.table[pidx(x)];
        const std::size_t rhs = pidx(a.table[x]);
        if (lhs != rhs) {
          rep.residual = 1.0;
          rep.generator = label;
          const std::vector<int> l = detail::config_decode(lhs, d, nv);
          const std::vector<int> r = detail::config_decode(rhs, d, nv);
          for (int v = 0; v < nv; ++v)
            if (l[v] != r[v]) {
              rep.failing_site = a.graph.vertex_name(v);
              break;
            }
          break;
        }
      }
    } else if (a.has_unitary()) {
      const std::size_t n = a.config_count();
      auto pidx = [&](std::size_t x) {
        const std::vector<int> cfg = detail::config_decode(x, 2, nv);
        std::vector<int> out(nv);
        for (int v = 0; v < nv; ++v) out[perm[v]] = cfg[v];
        return detail::config_encode(out, 2);
      };
      Eigen::MatrixXcd conj(a.unitary.rows(), a.unitary.cols());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          conj(static_cast<Eigen::Index>(pidx(r)), static_cast<Eigen::Index>(pidx(c))) =
              a.unitary(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      const double res = phase_aligned_residual(conj, a.unitary);
      if (res > rep.residual) {
        rep.residual = res;
        rep.generator = label;
        rep.failing_site = "";
      }
    } else if (a.one_particle.size() > 0) {
      const int n = a.system.dim;
      Eigen::MatrixXcd conj(a.one_particle.rows(), a.one_particle.cols());
      for (int f = 0; f < nv; ++f)
        for (int g = 0; g < nv; ++g)
          conj.block(perm[f] * n, perm[g] * n, n, n) = a.one_particle.block(f * n, g * n, n, n);
      const double res = (conj - a.one_particle).cwiseAbs().maxCoeff();
      if (res > rep.residual) {
        rep.residual = res;
        rep.generator = label;
        rep.failing_site = "";
      }
    } else {
      throw Error("automaton carries no rule data");
    }
  }
  rep.invariant = rep.residual <= tol::translation;
  if (rep.invariant) {
    rep.generator.clear();
    rep.failing_site.clear();
  }
  return rep;
}

// Replace one block by the identity on its region, keeping everything else;
// the result deliberately breaks translation invariance.  Globals are
// dropped: the doubled product generally loses its two-layer form.
inline Automaton perturb_block_to_identity(const Automaton& a, VertexId site) {
  if (!a.has_blocks()) throw Error("automaton has no blocks to perturb");
  Automaton out = a;
  out.table.clear();
  out.table_inv.clear();
  out.unitary.resize(0, 0);
  out.one_particle.resize(0, 0);
  for (SiteBlock& b : out.blocks) {
    if (b.home != site) continue;
    if (a.system.backend == Backend::fermionic) {
      b.fop.m.setIdentity();
    } else {
      b.op.m.setIdentity();
      if (!b.perm.empty())
        for (std::size_t i = 0; i < b.perm.size(); ++i) b.perm[i] = i;
    }
    return out;
  }
  throw Error("no block at vertex " + a.graph.vertex_name(site));
}

}  // namespace opca
