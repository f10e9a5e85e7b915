#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opca/backend.hpp"
#include "opca/word.hpp"

namespace opca {

// A homogeneous local rule: forward neighborhood offsets (words over the
// generators) plus a single reversible block acting on the layer-0 copies of
// the offset sites together with the layer-1 home site.  Block payload slot
// order is canonical: offsets in their listed order (most significant first),
// then the home site as the least significant slot.
struct LocalRule {
  SiteSystem system;
  std::vector<Word> offsets;
  int decomposability_bound = 2;

  Eigen::MatrixXd classical_block;                 // channel matrix, dim^(k+1)
  Eigen::MatrixXcd qubit_block;                    // unitary, 2^(k+1)
  std::vector<Eigen::MatrixXcd> fermionic_coeffs;  // one dim x dim matrix per offset

  std::size_t block_sites() const { return offsets.size() + 1; }

  std::size_t block_dim() const {
    if (system.backend == Backend::fermionic) return system.dim * block_sites();
    return detail::ipow(system.backend == Backend::classical ? system.dim : 2, block_sites());
  }

  void validate_shape() const {
    system.validate();
    if (offsets.empty()) throw Error("a rule needs at least one neighborhood offset");
    for (std::size_t i = 0; i < offsets.size(); ++i)
      for (std::size_t j = i + 1; j < offsets.size(); ++j)
        if (offsets[i] == offsets[j]) throw Error("duplicate offset " + offsets[i].str());
    const auto d = static_cast<Eigen::Index>(block_dim());
    switch (system.backend) {
      case Backend::classical:
        if (classical_block.rows() != d || classical_block.cols() != d)
          throw Error("classical block must be " + std::to_string(d) + "x" +
                      std::to_string(d));
        break;
      case Backend::qubit:
        if (qubit_block.rows() != d || qubit_block.cols() != d)
          throw Error("qubit block must be " + std::to_string(d) + "x" + std::to_string(d));
        break;
      case Backend::fermionic:
        if (fermionic_coeffs.size() != offsets.size())
          throw Error("fermionic rule needs one coefficient matrix per offset");
        for (const auto& c : fermionic_coeffs)
          if (c.rows() != system.dim || c.cols() != system.dim)
            throw Error("fermionic coefficient matrices must be " +
                        std::to_string(system.dim) + "x" + std::to_string(system.dim));
        break;
    }
  }

  int max_offset_length() const {
    std::size_t m = 0;
    for (const Word& w : offsets) m = std::max(m, w.size());
    return static_cast<int>(m);
  }
};

namespace io {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline Eigen::MatrixXd real_matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw Error(what + ": expected a dense array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw Error(what + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw Error(what + ": entries must be numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

// complex entries are [re, im] pairs; a bare number means a real entry
inline Cd complex_entry(const json& e, const std::string& what) {
  if (e.is_number()) return Cd(e.get<double>(), 0.0);
  if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number())
    return Cd(e[0].get<double>(), e[1].get<double>());
  throw Error(what + ": complex entries are [re, im] pairs");
}

inline Eigen::MatrixXcd complex_matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw Error(what + ": expected a dense array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXcd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw Error(what + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = complex_entry(j[r][c], what);
  }
  return m;
}

inline ordered_json real_matrix_to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ordered_json complex_matrix_to_json(const Eigen::MatrixXcd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      row.push_back(ordered_json::array({m(r, c).real(), m(r, c).imag()}));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ordered_json real_vector_to_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

}  // namespace io

inline LocalRule parse_rule(const std::string& text, const std::string& origin = "<rule>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(origin + ": " + e.what());
  }
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw Error(origin + ": missing field '" + key + "'");
    return j.at(key);
  };
  LocalRule rule;
  rule.system.backend = backend_from_string(need("backend").get<std::string>());
  rule.system.dim = j.value("dim", rule.system.backend == Backend::fermionic ? 1 : 2);
  for (const auto& o : need("offsets")) {
    Word::ParseError pe;
    try {
      rule.offsets.push_back(Word::parse(o.get<std::string>(), &pe));
    } catch (const Error&) {
      throw Error(origin + ": offset '" + o.get<std::string>() + "': " + pe.message);
    }
  }
  rule.decomposability_bound = j.value("decomposability_bound", 2);
  if (rule.decomposability_bound < 1)
    throw Error(origin + ": decomposability_bound must be positive");
  const auto& block = need("block");
  switch (rule.system.backend) {
    case Backend::classical:
      rule.classical_block = io::real_matrix_from_json(block, origin + ": block");
      break;
    case Backend::qubit:
      rule.qubit_block = io::complex_matrix_from_json(block, origin + ": block");
      break;
    case Backend::fermionic: {
      if (!block.is_array()) throw Error(origin + ": fermionic block must be a list");
      for (const auto& c : block)
        rule.fermionic_coeffs.push_back(
            io::complex_matrix_from_json(c, origin + ": coefficient"));
      break;
    }
  }
  rule.validate_shape();
  return rule;
}

inline LocalRule load_rule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open rule file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_rule(text, path);
}

inline io::ordered_json rule_to_json(const LocalRule& rule) {
  io::ordered_json j;
  j["backend"] = to_string(rule.system.backend);
  j["dim"] = rule.system.dim;
  io::ordered_json offs = io::ordered_json::array();
  for (const Word& w : rule.offsets) offs.push_back(w.str());
  j["offsets"] = std::move(offs);
  j["decomposability_bound"] = rule.decomposability_bound;
  switch (rule.system.backend) {
    case Backend::classical: j["block"] = io::real_matrix_to_json(rule.classical_block); break;
    case Backend::qubit: j["block"] = io::complex_matrix_to_json(rule.qubit_block); break;
    case Backend::fermionic: {
      io::ordered_json coeffs = io::ordered_json::array();
      for (const auto& c : rule.fermionic_coeffs) coeffs.push_back(io::complex_matrix_to_json(c));
      j["block"] = std::move(coeffs);
      break;
    }
  }
  return j;
}

}  // namespace opca
