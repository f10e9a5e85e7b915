#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "opca/cayley.hpp"
#include "opca/common.hpp"

namespace opca {

using Cd = std::complex<double>;

enum class Backend { classical, qubit, fermionic };

inline std::string to_string(Backend b) {
  switch (b) {
    case Backend::classical: return "classical";
    case Backend::qubit: return "qubit";
    case Backend::fermionic: return "fermionic";
  }
  return "?";
}

inline Backend backend_from_string(const std::string& s) {
  if (s == "classical") return Backend::classical;
  if (s == "qubit") return Backend::qubit;
  if (s == "fermionic") return Backend::fermionic;
  throw Error("unknown backend '" + s + "'");
}

// Homogeneous per-site system.  dim: classical outcome count (>= 2), qubit
// Hilbert dimension (= 2), or fermionic modes per site (>= 1).
struct SiteSystem {
  Backend backend = Backend::classical;
  int dim = 2;

  void validate() const {
    if (backend == Backend::classical && dim < 2)
      throw Error("classical site needs at least two outcomes");
    if (backend == Backend::qubit && dim != 2) throw Error("qubit sites are two-dimensional");
    if (backend == Backend::fermionic && dim < 1)
      throw Error("fermionic site needs at least one mode");
  }
  bool operator==(const SiteSystem&) const = default;
};

namespace detail {

inline std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

inline std::size_t joint_dim(const std::vector<int>& dims) {
  std::size_t r = 1;
  for (int d : dims) r *= static_cast<std::size_t>(d);
  return r;
}

// mixed-radix digits, slot 0 most significant
inline void decode(std::size_t idx, const std::vector<int>& dims, std::vector<int>& out) {
  out.resize(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    out[k] = static_cast<int>(idx % dims[k]);
    idx /= dims[k];
  }
}

inline std::size_t encode(const std::vector<int>& digits, const std::vector<int>& dims) {
  std::size_t idx = 0;
  for (std::size_t k = 0; k < dims.size(); ++k)
    idx = idx * dims[k] + static_cast<std::size_t>(digits[k]);
  return idx;
}

// permutation placing concatenated slot list `sites` into ascending order;
// perm[new_position] = old_position
inline std::vector<int> sort_permutation(const std::vector<int>& sites) {
  std::vector<int> perm(sites.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  std::sort(perm.begin(), perm.end(), [&](int a, int b) { return sites[a] < sites[b]; });
  return perm;
}

template <class Vec>
Vec permute_vector_slots(const Vec& v, const std::vector<int>& dims,
                         const std::vector<int>& perm) {
  std::vector<int> new_dims(dims.size());
  for (std::size_t j = 0; j < perm.size(); ++j) new_dims[j] = dims[perm[j]];
  // where each old slot lands in the output layout, as a stride
  std::vector<std::size_t> new_stride(dims.size(), 1);
  for (std::size_t j = dims.size(); j-- > 1;)
    new_stride[j - 1] = new_stride[j] * static_cast<std::size_t>(new_dims[j]);
  std::vector<std::size_t> out_stride(dims.size(), 0);
  for (std::size_t j = 0; j < perm.size(); ++j) out_stride[perm[j]] = new_stride[j];

  // walk the input in order, tracking the permuted index incrementally
  Vec out(v.size());
  std::vector<int> digits(dims.size(), 0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()); ++i) {
    out[static_cast<Eigen::Index>(o)] = v[static_cast<Eigen::Index>(i)];
    for (std::size_t k = dims.size(); k-- > 0;) {
      if (++digits[k] < dims[k]) {
        o += out_stride[k];
        break;
      }
      digits[k] = 0;
      o -= out_stride[k] * static_cast<std::size_t>(dims[k] - 1);
    }
  }
  return out;
}

template <class Mat>
Mat permute_matrix_slots(const Mat& m, const std::vector<int>& dims,
                         const std::vector<int>& perm) {
  std::vector<int> new_dims(dims.size());
  for (std::size_t j = 0; j < perm.size(); ++j) new_dims[j] = dims[perm[j]];
  Mat out(m.rows(), m.cols());
  std::vector<int> rd, cd, nrd(dims.size()), ncd(dims.size());
  for (std::size_t r = 0; r < static_cast<std::size_t>(m.rows()); ++r) {
    decode(r, dims, rd);
    for (std::size_t j = 0; j < perm.size(); ++j) nrd[j] = rd[perm[j]];
    const std::size_t nr = encode(nrd, new_dims);
    for (std::size_t c = 0; c < static_cast<std::size_t>(m.cols()); ++c) {
      decode(c, dims, cd);
      for (std::size_t j = 0; j < perm.size(); ++j) ncd[j] = cd[perm[j]];
      out(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(encode(ncd, new_dims))) =
          m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

// slot strides: index = sum digit[k] * stride[k]
inline std::vector<std::size_t> strides(const std::vector<int>& dims) {
  std::vector<std::size_t> s(dims.size(), 1);
  for (std::size_t k = dims.size(); k-- > 1;) s[k - 1] = s[k] * dims[k];
  return s;
}

// True when every slice of v along slot k coincides (effect with an all-ones
// deterministic factor on that slot).
template <class Vec>
bool vector_slot_uniform(const Vec& v, const std::vector<int>& dims, int k, double tol) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = v.size() / (d * stride);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < stride; ++i) {
      const std::size_t base = (o * d) * stride + i;
      for (std::size_t x = 1; x < d; ++x)
        if (std::abs(v[static_cast<Eigen::Index>(base + x * stride)] -
                     v[static_cast<Eigen::Index>(base)]) > tol)
          return false;
    }
  return true;
}

template <class Vec>
Vec vector_drop_slot(const Vec& v, const std::vector<int>& dims, int k) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = v.size() / (d * stride);
  Vec out(static_cast<Eigen::Index>(outer * stride));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < stride; ++i)
      out[static_cast<Eigen::Index>(o * stride + i)] =
          v[static_cast<Eigen::Index>(o * d * stride + i)];
  return out;
}

// marginal: sum v over slot k
template <class Vec>
Vec vector_sum_slot(const Vec& v, const std::vector<int>& dims, int k) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = v.size() / (d * stride);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(outer * stride));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t i = 0; i < stride; ++i)
        out[static_cast<Eigen::Index>(o * stride + i)] +=
            v[static_cast<Eigen::Index>((o * d + x) * stride + i)];
  return out;
}

// True when M = M0 (x) Id on slot k: off-diagonal slot blocks vanish and all
// diagonal slot blocks agree, in max-entry norm.
template <class Mat>
bool matrix_slot_identity(const Mat& m, const std::vector<int>& dims, int k, double tol) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = m.rows() / (d * stride);
  auto entry = [&](std::size_t ro, std::size_t rs, std::size_t ri, std::size_t co,
                   std::size_t cs, std::size_t ci) {
    return m(static_cast<Eigen::Index>((ro * d + rs) * stride + ri),
             static_cast<Eigen::Index>((co * d + cs) * stride + ci));
  };
  for (std::size_t ro = 0; ro < outer; ++ro)
    for (std::size_t ri = 0; ri < stride; ++ri)
      for (std::size_t co = 0; co < outer; ++co)
        for (std::size_t ci = 0; ci < stride; ++ci)
          for (std::size_t rs = 0; rs < d; ++rs)
            for (std::size_t cs = 0; cs < d; ++cs) {
              const auto ref = rs == cs ? entry(ro, 0, ri, co, 0, ci)
                                        : decltype(entry(0, 0, 0, 0, 0, 0))(0);
              if (std::abs(entry(ro, rs, ri, co, cs, ci) - ref) > tol) return false;
            }
  return true;
}

template <class Mat>
Mat matrix_drop_slot(const Mat& m, const std::vector<int>& dims, int k) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = m.rows() / (d * stride);
  Mat out(static_cast<Eigen::Index>(outer * stride), static_cast<Eigen::Index>(outer * stride));
  for (std::size_t ro = 0; ro < outer; ++ro)
    for (std::size_t ri = 0; ri < stride; ++ri)
      for (std::size_t co = 0; co < outer; ++co)
        for (std::size_t ci = 0; ci < stride; ++ci)
          out(static_cast<Eigen::Index>(ro * stride + ri),
              static_cast<Eigen::Index>(co * stride + ci)) =
              m(static_cast<Eigen::Index>(ro * d * stride + ri),
                static_cast<Eigen::Index>(co * d * stride + ci));
  return out;
}

// partial trace of a density-style matrix over slot k
template <class Mat>
Mat matrix_trace_slot(const Mat& m, const std::vector<int>& dims, int k) {
  const auto st = strides(dims);
  const std::size_t d = dims[k], stride = st[k];
  const std::size_t outer = m.rows() / (d * stride);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(outer * stride),
                      static_cast<Eigen::Index>(outer * stride));
  for (std::size_t ro = 0; ro < outer; ++ro)
    for (std::size_t ri = 0; ri < stride; ++ri)
      for (std::size_t co = 0; co < outer; ++co)
        for (std::size_t ci = 0; ci < stride; ++ci)
          for (std::size_t s = 0; s < d; ++s)
            out(static_cast<Eigen::Index>(ro * stride + ri),
                static_cast<Eigen::Index>(co * stride + ci)) +=
                m(static_cast<Eigen::Index>((ro * d + s) * stride + ri),
                  static_cast<Eigen::Index>((co * d + s) * stride + ci));
  return out;
}

inline Eigen::MatrixXcd pauli(int i) {
  Eigen::MatrixXcd p(2, 2);
  switch (i) {
    case 0: p << 1, 0, 0, 1; break;
    case 1: p << 0, 1, 1, 0; break;
    case 2: p << 0, Cd(0, -1), Cd(0, 1), 0; break;
    default: p << 1, 0, 0, -1; break;
  }
  return p;
}

// orthonormal Hermitian product basis element for `sites` qubits, index
// base-4 with slot 0 most significant; tr(B_i B_j) = delta_ij
inline Eigen::MatrixXcd pauli_basis_element(int sites, std::size_t index) {
  Eigen::MatrixXcd b = Eigen::MatrixXcd::Identity(1, 1);
  std::vector<int> digits;
  std::vector<int> dims(sites, 4);
  decode(index, dims, digits);
  for (int s = 0; s < sites; ++s)
    b = Eigen::kroneckerProduct(b, (pauli(digits[s]) / std::sqrt(2.0)).eval()).eval();
  return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Region-supported objects.  Payload slot order is always the region's sites
// in ascending order, first site most significant.  Only the payload matching
// the backend tag is populated.

struct RegionEffect {
  SiteSystem system;
  Region region;
  Eigen::VectorXd classical;   // length dim^|region|
  Eigen::MatrixXcd qubit;      // Hermitian, 2^|region|
  Eigen::VectorXcd fermionic;  // one-particle functional, dim*|region|
};

struct RegionState {
  SiteSystem system;
  Region region;
  Eigen::VectorXd classical;   // probability vector
  Eigen::MatrixXcd qubit;      // density matrix
  Eigen::VectorXcd fermionic;  // mode amplitudes
};

// Classical payload: matrix on joint outcomes (substochastic when proper).
// Qubit payload: Pauli transfer matrix (4^|region|, real); `kraus` optionally
// carries an explicit Kraus list (a single entry means a unitary map).
// Fermionic payload: one-particle matrix on the region's modes.
struct RegionTransformation {
  SiteSystem system;
  Region region;
  Eigen::MatrixXd classical;
  Eigen::MatrixXd qubit_ptm;
  std::vector<Eigen::MatrixXcd> kraus;
  Eigen::MatrixXcd fermionic;

  const Eigen::MatrixXcd* unitary() const { return kraus.size() == 1 ? &kraus[0] : nullptr; }
};

// ---------------------------------------------------------------------------
// constructors

inline RegionEffect deterministic_effect(const SiteSystem& sys, const Region& r) {
  RegionEffect e{sys, r, {}, {}, {}};
  const std::size_t n = r.size();
  if (sys.backend == Backend::classical)
    e.classical = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(detail::ipow(sys.dim, n)));
  else if (sys.backend == Backend::qubit)
    e.qubit = Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(detail::ipow(2, n)),
                                         static_cast<Eigen::Index>(detail::ipow(2, n)));
  else
    e.fermionic = Eigen::VectorXcd::Ones(static_cast<Eigen::Index>(sys.dim * n));
  return e;
}

// slot dimension used by transformation payloads: joint-outcome index for
// classical, Pauli index for qubit
inline int transformation_slot_dim(const SiteSystem& sys) {
  return sys.backend == Backend::classical ? sys.dim : 4;
}

inline RegionTransformation identity_transformation(const SiteSystem& sys, const Region& r) {
  RegionTransformation t{sys, r, {}, {}, {}, {}};
  const std::size_t n = r.size();
  if (sys.backend == Backend::classical) {
    const auto d = static_cast<Eigen::Index>(detail::ipow(sys.dim, n));
    t.classical = Eigen::MatrixXd::Identity(d, d);
  } else if (sys.backend == Backend::qubit) {
    const auto d4 = static_cast<Eigen::Index>(detail::ipow(4, n));
    t.qubit_ptm = Eigen::MatrixXd::Identity(d4, d4);
    t.kraus = {Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(detail::ipow(2, n)),
                                          static_cast<Eigen::Index>(detail::ipow(2, n)))};
  } else {
    const auto m = static_cast<Eigen::Index>(sys.dim * n);
    t.fermionic = Eigen::MatrixXcd::Identity(m, m);
  }
  return t;
}

// ---------------------------------------------------------------------------
// qubit map plumbing

// expand X in the orthonormal Pauli product basis
inline Eigen::VectorXd pauli_coordinates(const Eigen::MatrixXcd& x) {
  int sites = 0;
  for (Eigen::Index d = x.rows(); d > 1; d /= 2) ++sites;
  const std::size_t n4 = detail::ipow(4, sites);
  Eigen::VectorXd c(static_cast<Eigen::Index>(n4));
  for (std::size_t i = 0; i < n4; ++i)
    c[static_cast<Eigen::Index>(i)] = (detail::pauli_basis_element(sites, i) * x).trace().real();
  return c;
}

inline Eigen::MatrixXcd from_pauli_coordinates(const Eigen::VectorXd& c, int sites) {
  const auto d = static_cast<Eigen::Index>(detail::ipow(2, sites));
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(d, d);
  for (Eigen::Index i = 0; i < c.size(); ++i)
    x += c[i] * detail::pauli_basis_element(sites, static_cast<std::size_t>(i));
  return x;
}

inline Eigen::MatrixXd ptm_from_kraus(const std::vector<Eigen::MatrixXcd>& kraus, int sites) {
  const std::size_t n4 = detail::ipow(4, sites);
  Eigen::MatrixXd t(static_cast<Eigen::Index>(n4), static_cast<Eigen::Index>(n4));
  std::vector<Eigen::MatrixXcd> basis(n4);
  for (std::size_t i = 0; i < n4; ++i) basis[i] = detail::pauli_basis_element(sites, i);
  for (std::size_t j = 0; j < n4; ++j) {
    Eigen::MatrixXcd image = Eigen::MatrixXcd::Zero(basis[j].rows(), basis[j].cols());
    for (const auto& k : kraus) image += k * basis[j] * k.adjoint();
    for (std::size_t i = 0; i < n4; ++i)
      t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (basis[i] * image).trace().real();
  }
  return t;
}

inline RegionTransformation unitary_transformation(const SiteSystem& sys, const Region& r,
                                                   const Eigen::MatrixXcd& u) {
  if (sys.backend != Backend::qubit) throw Error("unitary_transformation expects qubits");
  RegionTransformation t{sys, r, {}, {}, {}, {}};
  t.kraus = {u};
  t.qubit_ptm = ptm_from_kraus(t.kraus, static_cast<int>(r.size()));
  return t;
}

// apply a PTM to a Hermitian operator
inline Eigen::MatrixXcd ptm_apply(const Eigen::MatrixXd& ptm, const Eigen::MatrixXcd& x) {
  int sites = 0;
  for (Eigen::Index d = x.rows(); d > 1; d /= 2) ++sites;
  return from_pauli_coordinates(ptm * pauli_coordinates(x), sites);
}

// Choi matrix sum_{ab} E_ab (x) F(E_ab) of the map encoded by a PTM, computed
// as sum_j B_j^T (x) F(B_j) over the Hermitian product basis (the same
// operator by linearity) so that the PTM only ever acts on Hermitian inputs.
inline Eigen::MatrixXcd choi_from_ptm(const Eigen::MatrixXd& ptm, int sites) {
  const auto d = static_cast<Eigen::Index>(detail::ipow(2, sites));
  const std::size_t n4 = detail::ipow(4, sites);
  Eigen::MatrixXcd choi = Eigen::MatrixXcd::Zero(d * d, d * d);
  for (std::size_t j = 0; j < n4; ++j) {
    const Eigen::MatrixXcd b = detail::pauli_basis_element(sites, j);
    choi += Eigen::kroneckerProduct(b.transpose().eval(), ptm_apply(ptm, b)).eval();
  }
  return choi;
}

// ---------------------------------------------------------------------------
// tensor / lift / compose

namespace detail {

// reorder a payload laid out over `concat` (x.region then y.region) into
// ascending site order
template <class Vec>
Vec sort_vector_payload(const Vec& v, const std::vector<int>& concat_sites, int slot_dim) {
  std::vector<int> dims(concat_sites.size(), slot_dim);
  return permute_vector_slots(v, dims, sort_permutation(concat_sites));
}

template <class Mat>
Mat sort_matrix_payload(const Mat& m, const std::vector<int>& concat_sites, int slot_dim) {
  std::vector<int> dims(concat_sites.size(), slot_dim);
  return permute_matrix_slots(m, dims, sort_permutation(concat_sites));
}

inline std::vector<int> concat_sites(const Region& a, const Region& b) {
  std::vector<int> s = a.sites;
  s.insert(s.end(), b.sites.begin(), b.sites.end());
  return s;
}

// fermionic payloads are indexed by (site, mode) blocks: direct sums reorder
// by block
inline Eigen::VectorXcd sort_fermionic_vector(const Eigen::VectorXcd& v,
                                              const std::vector<int>& sites, int modes) {
  const auto perm = sort_permutation(sites);
  Eigen::VectorXcd out(v.size());
  for (std::size_t j = 0; j < perm.size(); ++j)
    out.segment(static_cast<Eigen::Index>(j) * modes, modes) =
        v.segment(static_cast<Eigen::Index>(perm[j]) * modes, modes);
  return out;
}

inline Eigen::MatrixXcd sort_fermionic_matrix(const Eigen::MatrixXcd& m,
                                              const std::vector<int>& sites, int modes) {
  const auto perm = sort_permutation(sites);
  Eigen::MatrixXcd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j)
      out.block(static_cast<Eigen::Index>(i) * modes, static_cast<Eigen::Index>(j) * modes,
                modes, modes) =
          m.block(static_cast<Eigen::Index>(perm[i]) * modes,
                  static_cast<Eigen::Index>(perm[j]) * modes, modes, modes);
  return out;
}

inline void require_disjoint(const Region& a, const Region& b) {
  for (int s : a.sites)
    if (b.contains(s)) throw Error("regions overlap at site " + std::to_string(s));
}

}  // namespace detail

inline RegionEffect tensor(const RegionEffect& x, const RegionEffect& y) {
  if (!(x.system == y.system)) throw Error("backend mismatch in tensor");
  detail::require_disjoint(x.region, y.region);
  RegionEffect out{x.system, x.region.unite(y.region), {}, {}, {}};
  const auto concat = detail::concat_sites(x.region, y.region);
  if (x.system.backend == Backend::classical) {
    Eigen::VectorXd k = Eigen::kroneckerProduct(x.classical, y.classical).eval();
    out.classical = detail::sort_vector_payload(k, concat, x.system.dim);
  } else if (x.system.backend == Backend::qubit) {
    Eigen::MatrixXcd k = Eigen::kroneckerProduct(x.qubit, y.qubit).eval();
    out.qubit = detail::sort_matrix_payload(k, concat, 2);
  } else {
    Eigen::VectorXcd k(x.fermionic.size() + y.fermionic.size());
    k << x.fermionic, y.fermionic;
    out.fermionic = detail::sort_fermionic_vector(k, concat, x.system.dim);
  }
  return out;
}

inline RegionState tensor(const RegionState& x, const RegionState& y) {
  if (!(x.system == y.system)) throw Error("backend mismatch in tensor");
  detail::require_disjoint(x.region, y.region);
  RegionState out{x.system, x.region.unite(y.region), {}, {}, {}};
  const auto concat = detail::concat_sites(x.region, y.region);
  if (x.system.backend == Backend::classical) {
    Eigen::VectorXd k = Eigen::kroneckerProduct(x.classical, y.classical).eval();
    out.classical = detail::sort_vector_payload(k, concat, x.system.dim);
  } else if (x.system.backend == Backend::qubit) {
    Eigen::MatrixXcd k = Eigen::kroneckerProduct(x.qubit, y.qubit).eval();
    out.qubit = detail::sort_matrix_payload(k, concat, 2);
  } else {
    // a joint one-particle amplitude vector is not a product of one-particle
    // states; there is nothing meaningful to build here
    throw Error("fermionic one-particle states do not compose in parallel");
  }
  return out;
}

inline RegionTransformation tensor(const RegionTransformation& x,
                                   const RegionTransformation& y) {
  if (!(x.system == y.system)) throw Error("backend mismatch in tensor");
  detail::require_disjoint(x.region, y.region);
  RegionTransformation out{x.system, x.region.unite(y.region), {}, {}, {}, {}};
  const auto concat = detail::concat_sites(x.region, y.region);
  if (x.system.backend == Backend::classical) {
    Eigen::MatrixXd k = Eigen::kroneckerProduct(x.classical, y.classical).eval();
    out.classical = detail::sort_matrix_payload(k, concat, x.system.dim);
  } else if (x.system.backend == Backend::qubit) {
    Eigen::MatrixXd k = Eigen::kroneckerProduct(x.qubit_ptm, y.qubit_ptm).eval();
    out.qubit_ptm = detail::sort_matrix_payload(k, concat, 4);
    if (!x.kraus.empty() && !y.kraus.empty() && x.kraus.size() * y.kraus.size() <= 16) {
      for (const auto& a : x.kraus)
        for (const auto& b : y.kraus) {
          Eigen::MatrixXcd kb = Eigen::kroneckerProduct(a, b).eval();
          out.kraus.push_back(detail::sort_matrix_payload(kb, concat, 2));
        }
    }
  } else {
    Eigen::MatrixXcd k =
        Eigen::MatrixXcd::Zero(x.fermionic.rows() + y.fermionic.rows(),
                               x.fermionic.cols() + y.fermionic.cols());
    k.topLeftCorner(x.fermionic.rows(), x.fermionic.cols()) = x.fermionic;
    k.bottomRightCorner(y.fermionic.rows(), y.fermionic.cols()) = y.fermionic;
    out.fermionic = detail::sort_fermionic_matrix(k, concat, x.system.dim);
  }
  return out;
}

// pad an object to a superset region with the identity transformation /
// deterministic effect on the new sites
inline RegionTransformation lift(const RegionTransformation& x, const Region& target) {
  if (!x.region.subset_of(target)) throw Error("lift target must contain the region");
  Region extra;
  for (int s : target.sites)
    if (!x.region.contains(s)) extra.sites.push_back(s);
  if (extra.sites.empty()) return x;
  return tensor(x, identity_transformation(x.system, extra));
}

inline RegionEffect lift(const RegionEffect& x, const Region& target) {
  if (!x.region.subset_of(target)) throw Error("lift target must contain the region");
  Region extra;
  for (int s : target.sites)
    if (!x.region.contains(s)) extra.sites.push_back(s);
  if (extra.sites.empty()) return x;
  return tensor(x, deterministic_effect(x.system, extra));
}

// a then b (i.e. b after a), lifted to the union region
inline RegionTransformation compose(const RegionTransformation& b,
                                    const RegionTransformation& a) {
  if (!(a.system == b.system)) throw Error("backend mismatch in compose");
  const Region u = a.region.unite(b.region);
  RegionTransformation la = lift(a, u), lb = lift(b, u);
  RegionTransformation out{a.system, u, {}, {}, {}, {}};
  if (a.system.backend == Backend::classical) {
    out.classical = lb.classical * la.classical;
  } else if (a.system.backend == Backend::qubit) {
    out.qubit_ptm = lb.qubit_ptm * la.qubit_ptm;
    if (!la.kraus.empty() && !lb.kraus.empty() && la.kraus.size() * lb.kraus.size() <= 16)
      for (const auto& kb : lb.kraus)
        for (const auto& ka : la.kraus) out.kraus.push_back(kb * ka);
  } else {
    out.fermionic = lb.fermionic * la.fermionic;
  }
  return out;
}

// effect composed after a transformation: (b | A(.))
inline RegionEffect apply_to_effect(const RegionTransformation& a, const RegionEffect& b) {
  if (!(a.system == b.system)) throw Error("backend mismatch");
  const Region u = a.region.unite(b.region);
  RegionTransformation la = lift(a, u);
  RegionEffect lb = lift(b, u);
  RegionEffect out{a.system, u, {}, {}, {}};
  if (a.system.backend == Backend::classical)
    out.classical = la.classical.transpose() * lb.classical;
  else if (a.system.backend == Backend::qubit)
    out.qubit = ptm_apply(la.qubit_ptm.transpose(), lb.qubit);  // adjoint map
  else
    out.fermionic = la.fermionic.adjoint() * lb.fermionic;
  return out;
}

// transformation applied to a state on the same region
inline RegionState apply_to_state(const RegionTransformation& a, const RegionState& rho) {
  if (!(a.system == rho.system)) throw Error("backend mismatch");
  if (!a.region.subset_of(rho.region)) throw Error("state region must contain the map region");
  RegionTransformation la = lift(a, rho.region);
  RegionState out{rho.system, rho.region, {}, {}, {}};
  if (a.system.backend == Backend::classical)
    out.classical = la.classical * rho.classical;
  else if (a.system.backend == Backend::qubit)
    out.qubit = ptm_apply(la.qubit_ptm, rho.qubit);
  else
    out.fermionic = la.fermionic * rho.fermionic;
  return out;
}

inline double pair(const RegionEffect& a, const RegionState& rho) {
  if (!(a.system == rho.system) || !(a.region == rho.region))
    throw Error("pairing needs matching system and region");
  if (a.system.backend == Backend::classical) return a.classical.dot(rho.classical);
  if (a.system.backend == Backend::qubit) return (a.qubit * rho.qubit).trace().real();
  return std::abs(a.fermionic.dot(rho.fermionic));
}

// ---------------------------------------------------------------------------
// restriction and minimal support

inline RegionState restrict_state(const RegionState& rho, const Region& s) {
  if (!s.subset_of(rho.region)) throw Error("restriction target not contained in region");
  RegionState out = rho;
  // drop complement slots from the back so slot indices stay valid
  for (std::size_t pos = rho.region.size(); pos-- > 0;) {
    const int site = rho.region.sites[pos];
    if (s.contains(site)) continue;
    std::vector<int> dims(out.region.size(),
                          rho.system.backend == Backend::qubit ? 2 : rho.system.dim);
    if (rho.system.backend == Backend::classical)
      out.classical = detail::vector_sum_slot(out.classical, dims, static_cast<int>(pos));
    else if (rho.system.backend == Backend::qubit)
      out.qubit = detail::matrix_trace_slot(out.qubit, dims, static_cast<int>(pos));
    else {
      const Eigen::Index m = rho.system.dim, p = static_cast<Eigen::Index>(pos) * m;
      Eigen::VectorXcd kept(out.fermionic.size() - m);
      if (p > 0) kept.head(p) = out.fermionic.head(p);
      if (kept.size() > p) kept.tail(kept.size() - p) = out.fermionic.tail(kept.size() - p);
      out.fermionic = kept;
    }
    out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
  }
  return out;
}

// Smallest region carrying the effect: a site is dropped when the payload
// factors as (reduced) (x) e on it.  The factorization makes per-site tests
// independent, so one descending sweep reaches the unique minimal region.
inline RegionEffect minimal_support(const RegionEffect& a, double tol = tol::support) {
  RegionEffect out = a;
  for (std::size_t pos = out.region.size(); pos-- > 0;) {
    const std::size_t n = out.region.size();
    if (a.system.backend == Backend::classical) {
      std::vector<int> dims(n, a.system.dim);
      if (detail::vector_slot_uniform(out.classical, dims, static_cast<int>(pos), tol)) {
        out.classical = detail::vector_drop_slot(out.classical, dims, static_cast<int>(pos));
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    } else if (a.system.backend == Backend::qubit) {
      std::vector<int> dims(n, 2);
      if (detail::matrix_slot_identity(out.qubit, dims, static_cast<int>(pos), tol)) {
        out.qubit = detail::matrix_drop_slot(out.qubit, dims, static_cast<int>(pos));
        // the deterministic factor is Id (trace 2), not Id/sqrt(2): dropping
        // the (0,0) slot block is exact for A = reduced (x) Id
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    } else {
      const int m = a.system.dim;
      const Eigen::VectorXcd ones = Eigen::VectorXcd::Ones(m);
      const Eigen::Index p = static_cast<Eigen::Index>(pos) * m;
      const auto seg = out.fermionic.segment(p, m);
      if ((seg - ones).cwiseAbs().maxCoeff() <= tol) {
        Eigen::VectorXcd kept(out.fermionic.size() - m);
        if (p > 0) kept.head(p) = out.fermionic.head(p);
        if (kept.size() > p) kept.tail(kept.size() - p) = out.fermionic.tail(kept.size() - p);
        out.fermionic = kept;
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    }
  }
  return out;
}

inline RegionTransformation minimal_support(const RegionTransformation& t,
                                            double tol = tol::support) {
  RegionTransformation out = t;
  for (std::size_t pos = out.region.size(); pos-- > 0;) {
    const std::size_t n = out.region.size();
    if (t.system.backend == Backend::classical) {
      std::vector<int> dims(n, t.system.dim);
      if (detail::matrix_slot_identity(out.classical, dims, static_cast<int>(pos), tol)) {
        out.classical = detail::matrix_drop_slot(out.classical, dims, static_cast<int>(pos));
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    } else if (t.system.backend == Backend::qubit) {
      std::vector<int> dims(n, 4);
      if (detail::matrix_slot_identity(out.qubit_ptm, dims, static_cast<int>(pos), tol)) {
        out.qubit_ptm = detail::matrix_drop_slot(out.qubit_ptm, dims, static_cast<int>(pos));
        std::vector<Eigen::MatrixXcd> reduced;
        std::vector<int> kdims(n, 2);
        for (const auto& k : out.kraus) {
          if (detail::matrix_slot_identity(k, kdims, static_cast<int>(pos), tol))
            reduced.push_back(detail::matrix_drop_slot(k, kdims, static_cast<int>(pos)));
        }
        // keep Kraus forms only when every one of them sliced cleanly
        out.kraus = reduced.size() == out.kraus.size() ? reduced
                                                       : std::vector<Eigen::MatrixXcd>{};
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    } else {
      const int m = t.system.dim;
      const auto p = static_cast<Eigen::Index>(pos) * m;
      bool trivial = (out.fermionic.block(p, p, m, m) -
                      Eigen::MatrixXcd::Identity(m, m)).cwiseAbs().maxCoeff() <= tol;
      if (trivial) {
        const Eigen::Index rest = out.fermionic.rows() - m;
        trivial = rest == 0 ||
                  (out.fermionic.block(p, 0, m, out.fermionic.cols()).cwiseAbs().sum() +
                       out.fermionic.block(0, p, out.fermionic.rows(), m).cwiseAbs().sum() -
                       2 * m <=
                   tol * (1 + 2.0 * m));
      }
      if (trivial) {
        // remove row/col block p
        Eigen::MatrixXcd kept(out.fermionic.rows() - m, out.fermionic.cols() - m);
        Eigen::Index rr = 0;
        for (Eigen::Index r = 0; r < out.fermionic.rows(); ++r) {
          if (r >= p && r < p + m) continue;
          Eigen::Index cc = 0;
          for (Eigen::Index c = 0; c < out.fermionic.cols(); ++c) {
            if (c >= p && c < p + m) continue;
            kept(rr, cc++) = out.fermionic(r, c);
          }
          ++rr;
        }
        out.fermionic = kept;
        out.region.sites.erase(out.region.sites.begin() + static_cast<long>(pos));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// norms and classifier predicates

// sup over states of |(a|rho)|: the maximum is attained on extremal states
inline double op_norm(const RegionEffect& a) {
  if (a.system.backend == Backend::classical)
    return a.classical.size() ? a.classical.cwiseAbs().maxCoeff() : 0.0;
  if (a.system.backend == Backend::qubit) {
    if (!a.qubit.size()) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(a.qubit);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  // one-particle states are unit amplitude vectors
  return a.fermionic.norm();
}

// least lambda with lambda*e - a and lambda*e + a both in the effect cone
inline double sup_norm(const RegionEffect& a) {
  if (a.system.backend == Backend::classical)
    return a.classical.size() ? a.classical.cwiseAbs().maxCoeff() : 0.0;
  if (a.system.backend == Backend::qubit) {
    if (!a.qubit.size()) return 0.0;
    // lambda*I +/- A psd iff lambda bounds the spectrum on both sides
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(a.qubit);
    return std::max(std::abs(es.eigenvalues().minCoeff()),
                    std::abs(es.eigenvalues().maxCoeff()));
  }
  return a.fermionic.norm();
}

inline bool is_cp(const RegionTransformation& t, double eig_tol = tol::psd_eigenvalue) {
  if (t.system.backend == Backend::classical) return t.classical.minCoeff() >= eig_tol;
  if (t.system.backend == Backend::qubit) {
    if (!t.kraus.empty()) return true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(
        choi_from_ptm(t.qubit_ptm, static_cast<int>(t.region.size())));
    return es.eigenvalues().minCoeff() >= eig_tol;
  }
  return true;  // one-particle blocks of linear maps
}

// channel: preserves the deterministic effect (and lies in the cone)
inline bool is_channel(const RegionTransformation& t, double tol_ = tol::trace_preserve) {
  if (t.system.backend == Backend::classical) {
    if (!is_cp(t)) return false;
    const Eigen::VectorXd sums = t.classical.colwise().sum();
    return (sums.array() - 1.0).abs().maxCoeff() <= tol_;
  }
  if (t.system.backend == Backend::qubit) {
    if (!is_cp(t)) return false;
    // trace preservation: first PTM row is (1, 0, ..., 0)
    Eigen::VectorXd row0 = t.qubit_ptm.row(0);
    row0[0] -= 1.0;
    return row0.cwiseAbs().maxCoeff() <= tol_;
  }
  const Eigen::MatrixXcd& u = t.fermionic;
  return (u.adjoint() * u - Eigen::MatrixXcd::Identity(u.rows(), u.cols()))
             .cwiseAbs()
             .maxCoeff() <= tol::fermionic_unitary;
}

// proper transformation: dominated by some channel
inline bool is_proper(const RegionTransformation& t, double tol_ = tol::trace_preserve) {
  if (t.system.backend == Backend::classical) {
    if (!is_cp(t)) return false;
    return t.classical.colwise().sum().maxCoeff() <= 1.0 + tol_;
  }
  if (t.system.backend == Backend::qubit) {
    if (!is_cp(t)) return false;
    // dominated by a channel iff the adjoint maps I below I
    Eigen::MatrixXcd dual_e = ptm_apply(t.qubit_ptm.transpose(),
                                        Eigen::MatrixXcd::Identity(
                                            static_cast<Eigen::Index>(
                                                detail::ipow(2, t.region.size())),
                                            static_cast<Eigen::Index>(
                                                detail::ipow(2, t.region.size()))));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(dual_e);
    return es.eigenvalues().maxCoeff() <= 1.0 + tol_ &&
           es.eigenvalues().minCoeff() >= tol::psd_eigenvalue;
  }
  return is_channel(t);
}

// Least lambda such that lambda*C dominates both A and -A for some channel C.
// Classical closed form: with D := lambda*C the constraints read D >= |A|
// entrywise with every column of D summing to lambda, so the optimum is the
// largest column absolute sum.  Positive qubit maps reduce to the adjoint
// image of the deterministic effect.
inline double sup_norm(const RegionTransformation& t) {
  if (t.system.backend == Backend::classical) {
    if (!t.classical.size()) return 0.0;
    return t.classical.cwiseAbs().colwise().sum().maxCoeff();
  }
  if (t.system.backend == Backend::qubit) {
    if (!is_cp(t))
      throw Error("sup-norm of a non-positive qubit transformation is not implemented "
                  "(needs semidefinite optimization)");
    const auto d = static_cast<Eigen::Index>(detail::ipow(2, t.region.size()));
    Eigen::MatrixXcd dual_e =
        ptm_apply(t.qubit_ptm.transpose(), Eigen::MatrixXcd::Identity(d, d));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(dual_e);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(t.fermionic);
  return t.fermionic.size() ? svd.singularValues().maxCoeff() : 0.0;
}

// ---------------------------------------------------------------------------
// spanning families of single-site transformations (used for causal influence
// detection and rule validation); each family linearly spans enough of the
// transformation cone to witness any nontrivial action on a site.

struct SpanningElement {
  std::string name;
  RegionTransformation payload;
};

// classical: the four deterministic bit functions (generalised to d outcomes
// as constants/shifts) plus the measure-and-keep instruments E_jj; these span
// all matrix units.
inline std::vector<SpanningElement> single_site_spanning(const SiteSystem& sys, int site) {
  Region r{{site}};
  std::vector<SpanningElement> out;
  if (sys.backend == Backend::classical) {
    const int d = sys.dim;
    auto add = [&](const std::string& name, const Eigen::MatrixXd& m) {
      RegionTransformation t{sys, r, m, {}, {}, {}};
      out.push_back({name, std::move(t)});
    };
    add("identity", Eigen::MatrixXd::Identity(d, d));
    Eigen::MatrixXd shift = Eigen::MatrixXd::Zero(d, d);
    for (int j = 0; j < d; ++j) shift((j + 1) % d, j) = 1.0;
    add("cyclic-shift", shift);
    for (int v = 0; v < d; ++v) {
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
      c.row(v).setOnes();
      add("constant-" + std::to_string(v), c);
    }
    for (int v = 0; v < d; ++v) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
      m(v, v) = 1.0;
      add("measure-" + std::to_string(v), m);
    }
  } else if (sys.backend == Backend::qubit) {
    const char* names[] = {"pauli-x", "pauli-y", "pauli-z"};
    for (int p = 1; p <= 3; ++p)
      out.push_back({names[p - 1], unitary_transformation(sys, r, detail::pauli(p))});
  } else {
    const int m = sys.dim;
    for (int k = 0; k < m; ++k) {
      Eigen::MatrixXcd p = Eigen::MatrixXcd::Identity(m, m);
      p(k, k) = -1.0;
      RegionTransformation t{sys, r, {}, {}, {}, p};
      out.push_back({"mode-phase-" + std::to_string(k), std::move(t)});
    }
  }
  return out;
}

// controlled interaction between a site and a fresh ancilla site; the ancilla
// site id must not collide with lattice ids
inline std::vector<SpanningElement> ancilla_spanning(const SiteSystem& sys, int site,
                                                     int ancilla) {
  Region r{{site, ancilla}};
  std::vector<SpanningElement> out;
  if (sys.backend == Backend::classical) {
    const int d = sys.dim;
    // (x, a) -> (x, a + x mod d): copies the site value into the ancilla
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d * d, d * d);
    for (int x = 0; x < d; ++x)
      for (int a = 0; a < d; ++a)
        m(x * d + (a + x) % d, x * d + a) = 1.0;
    // payload slots are ascending site order; reorder when ancilla < site
    if (ancilla < site) m = detail::sort_matrix_payload(m, {site, ancilla}, d);
    RegionTransformation t{sys, r, m, {}, {}, {}};
    out.push_back({"controlled-add-ancilla", std::move(t)});
  } else if (sys.backend == Backend::qubit) {
    Eigen::MatrixXcd cnot = Eigen::MatrixXcd::Zero(4, 4);
    cnot(0, 0) = cnot(1, 1) = cnot(3, 2) = cnot(2, 3) = 1.0;
    if (ancilla < site) cnot = detail::sort_matrix_payload(cnot, {site, ancilla}, 2);
    out.push_back({"cnot-ancilla", unitary_transformation(sys, r, cnot)});
  } else {
    const int m = sys.dim;
    // swap the site's first mode with the ancilla mode
    Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(2 * m, 2 * m);
    u(0, 0) = 0;
    u(m, m) = 0;
    u(0, m) = 1;
    u(m, 0) = 1;
    if (ancilla < site) u = detail::sort_fermionic_matrix(u, {site, ancilla}, m);
    RegionTransformation t{sys, r, {}, {}, {}, u};
    out.push_back({"mode-swap-ancilla", std::move(t)});
  }
  return out;
}

// spanning family on a small multi-site region (fermionic rule validation
// needs two-site regions): single-site members lifted, plus pair couplings
inline std::vector<SpanningElement> region_spanning(const SiteSystem& sys, const Region& r) {
  std::vector<SpanningElement> out;
  for (int s : r.sites)
    for (auto& e : single_site_spanning(sys, s)) {
      e.name += "@" + std::to_string(s);
      out.push_back(std::move(e));
    }
  if (sys.backend == Backend::fermionic && r.size() >= 2) {
    const int m = sys.dim;
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = i + 1; j < r.size(); ++j) {
        Region pairr{{r.sites[i], r.sites[j]}};
        Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(2 * m, 2 * m);
        u(0, 0) = 0;
        u(m, m) = 0;
        u(0, m) = 1;
        u(m, 0) = 1;
        RegionTransformation t{sys, pairr, {}, {}, {}, u};
        out.push_back({"mode-swap@" + std::to_string(r.sites[i]) + "," +
                           std::to_string(r.sites[j]),
                       std::move(t)});
      }
  }
  if (sys.backend == Backend::qubit && r.size() >= 2) {
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = i + 1; j < r.size(); ++j) {
        Region pairr{{r.sites[i], r.sites[j]}};
        Eigen::MatrixXcd cnot = Eigen::MatrixXcd::Zero(4, 4);
        cnot(0, 0) = cnot(1, 1) = cnot(3, 2) = cnot(2, 3) = 1.0;
        out.push_back({"cnot@" + std::to_string(r.sites[i]) + "," +
                           std::to_string(r.sites[j]),
                       unitary_transformation(sys, pairr, cnot)});
      }
  }
  if (sys.backend == Backend::classical && r.size() >= 2) {
    const int d = sys.dim;
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = i + 1; j < r.size(); ++j) {
        Region pairr{{r.sites[i], r.sites[j]}};
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d * d, d * d);
        for (int x = 0; x < d; ++x)
          for (int a = 0; a < d; ++a) m(x * d + (a + x) % d, x * d + a) = 1.0;
        RegionTransformation t{sys, pairr, m, {}, {}, {}};
        out.push_back({"controlled-add@" + std::to_string(r.sites[i]) + "," +
                           std::to_string(r.sites[j]),
                       std::move(t)});
      }
  }
  return out;
}

}  // namespace opca
