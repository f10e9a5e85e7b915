#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "opca/word.hpp"

namespace opca {

// A group element in one of the concrete models. Free-abelian and cyclic
// elements are exponent vectors, table elements are indices, free-window
// elements are reduced words.
using Element = std::variant<std::vector<std::int64_t>, int, Word>;

struct FreeAbelianModel {
  int dim = 0;
};

struct CyclicProductModel {
  std::vector<std::int64_t> moduli;
};

struct FiniteTableModel {
  std::vector<std::string> names;
  std::vector<std::vector<int>> mul;  // mul[i][j] = index of names[i]*names[j]
  int identity = 0;
};

// Free group truncated at a word-length bound; evaluation beyond the bound is
// an error, never a silent truncation.
struct FreeWindowModel {
  int max_length = 0;
};

class GroupModel {
 public:
  using Variant =
      std::variant<FreeAbelianModel, CyclicProductModel, FiniteTableModel, FreeWindowModel>;

  GroupModel() = default;
  GroupModel(Variant v, std::map<std::string, Element> generator_map)
      : variant_(std::move(v)), generators_(std::move(generator_map)) {
    if (const auto* t = std::get_if<FiniteTableModel>(&variant_)) validate_table(*t);
  }

  const Variant& variant() const { return variant_; }
  const std::map<std::string, Element>& generator_map() const { return generators_; }

  bool is_finite() const {
    return std::holds_alternative<CyclicProductModel>(variant_) ||
           std::holds_alternative<FiniteTableModel>(variant_);
  }

  Element identity() const {
    if (const auto* m = std::get_if<FreeAbelianModel>(&variant_))
      return std::vector<std::int64_t>(m->dim, 0);
    if (const auto* m = std::get_if<CyclicProductModel>(&variant_))
      return std::vector<std::int64_t>(m->moduli.size(), 0);
    if (const auto* m = std::get_if<FiniteTableModel>(&variant_)) return m->identity;
    return Word{};
  }

  Element mul(const Element& a, const Element& b) const {
    if (const auto* m = std::get_if<FreeAbelianModel>(&variant_)) {
      (void)m;
      auto va = std::get<std::vector<std::int64_t>>(a);
      const auto& vb = std::get<std::vector<std::int64_t>>(b);
      for (std::size_t i = 0; i < va.size(); ++i) va[i] += vb[i];
      return va;
    }
    if (const auto* m = std::get_if<CyclicProductModel>(&variant_)) {
      auto va = std::get<std::vector<std::int64_t>>(a);
      const auto& vb = std::get<std::vector<std::int64_t>>(b);
      for (std::size_t i = 0; i < va.size(); ++i)
        va[i] = ((va[i] + vb[i]) % m->moduli[i] + m->moduli[i]) % m->moduli[i];
      return va;
    }
    if (const auto* m = std::get_if<FiniteTableModel>(&variant_))
      return m->mul[std::get<int>(a)][std::get<int>(b)];
    const auto& m = std::get<FreeWindowModel>(variant_);
    Word w = std::get<Word>(a) * std::get<Word>(b);
    if (static_cast<int>(w.size()) > m.max_length)
      throw Error("free-window bound " + std::to_string(m.max_length) + " exceeded by '" +
                  w.str() + "'");
    return w;
  }

  Element inverse(const Element& a) const {
    if (std::holds_alternative<FreeAbelianModel>(variant_)) {
      auto v = std::get<std::vector<std::int64_t>>(a);
      for (auto& x : v) x = -x;
      return v;
    }
    if (const auto* m = std::get_if<CyclicProductModel>(&variant_)) {
      auto v = std::get<std::vector<std::int64_t>>(a);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = (m->moduli[i] - v[i]) % m->moduli[i];
      return v;
    }
    if (const auto* m = std::get_if<FiniteTableModel>(&variant_)) {
      const int i = std::get<int>(a);
      for (int j = 0; j < static_cast<int>(m->names.size()); ++j)
        if (m->mul[i][j] == m->identity) return j;
      throw Error("table element '" + m->names[i] + "' has no inverse");
    }
    return std::get<Word>(a).inverse();
  }

  bool is_identity(const Element& a) const { return a == identity(); }

  // Homomorphic evaluation of a word through the generator map.
  Element evaluate(const Word& w) const {
    Element acc = identity();
    for (const Symbol& s : w.symbols()) {
      auto it = generators_.find(s.label);
      if (it == generators_.end()) throw Error("unknown generator label '" + s.label + "'");
      acc = mul(acc, s.sign > 0 ? it->second : inverse(it->second));
    }
    return acc;
  }

  // All elements of a finite model, in a fixed deterministic order
  // (mixed-radix for cyclic products, table order otherwise).
  std::vector<Element> enumerate() const {
    if (const auto* m = std::get_if<CyclicProductModel>(&variant_)) {
      std::vector<Element> out;
      std::vector<std::int64_t> v(m->moduli.size(), 0);
      while (true) {
        out.push_back(v);
        std::size_t k = v.size();
        while (k > 0 && ++v[k - 1] == m->moduli[k - 1]) v[--k] = 0;
        if (k == 0) break;
      }
      return out;
    }
    if (const auto* m = std::get_if<FiniteTableModel>(&variant_)) {
      std::vector<Element> out;
      for (int i = 0; i < static_cast<int>(m->names.size()); ++i) out.push_back(i);
      return out;
    }
    throw Error("cannot enumerate an infinite model");
  }

  std::string element_str(const Element& a) const {
    if (const auto* v = std::get_if<std::vector<std::int64_t>>(&a)) {
      if (v->size() == 1) return std::to_string((*v)[0]);
      std::string out = "(";
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (i) out += ',';
        out += std::to_string((*v)[i]);
      }
      return out + ")";
    }
    if (const auto* i = std::get_if<int>(&a))
      return std::get<FiniteTableModel>(variant_).names[*i];
    return std::get<Word>(a).str();
  }

 private:
  static void validate_table(const FiniteTableModel& t) {
    const int n = static_cast<int>(t.names.size());
    if (t.identity < 0 || t.identity >= n) throw Error("table identity index out of range");
    if (static_cast<int>(t.mul.size()) != n) throw Error("table row count mismatch");
    for (const auto& row : t.mul) {
      if (static_cast<int>(row.size()) != n) throw Error("table column count mismatch");
      for (int x : row)
        if (x < 0 || x >= n) throw Error("table entry out of range");
    }
    for (int i = 0; i < n; ++i)
      if (t.mul[t.identity][i] != i || t.mul[i][t.identity] != i)
        throw Error("table identity is not neutral");
    // full associativity for small tables, deterministic stride sample beyond
    const int stride = n <= 24 ? 1 : n / 16 + 1;
    for (int a = 0; a < n; a += stride)
      for (int b = 0; b < n; b += stride)
        for (int c = 0; c < n; c += stride)
          if (t.mul[t.mul[a][b]][c] != t.mul[a][t.mul[b][c]])
            throw Error("table is not associative");
    for (int i = 0; i < n; ++i) {
      bool has_inverse = false;
      for (int j = 0; j < n; ++j) has_inverse |= t.mul[i][j] == t.identity;
      if (!has_inverse) throw Error("table element without inverse");
    }
  }

  Variant variant_;
  std::map<std::string, Element> generators_;
};

// Generator list S+ (formal inverses implicit), relators, and a concrete model
// claimed to realize the presented group.
struct Presentation {
  std::vector<std::string> generators;
  std::vector<Word> relators;
  GroupModel model;
  std::string name;  // optional, used in reports

  void validate() const {
    for (const auto& g : generators)
      if (!model.generator_map().count(g))
        throw Error("generator '" + g + "' missing from the model's generator map");
    for (const Word& r : relators)
      if (!model.is_identity(model.evaluate(r)))
        throw Error("relator '" + r.str() + "' does not evaluate to the identity");
  }

  bool declares_self_inverse(const std::string& label) const {
    Word square = Word::from_symbol(label) * Word::from_symbol(label);
    for (const Word& r : relators)
      if (r == square) return true;
    return false;
  }
};

// True iff the word lies in the relator normal closure, decided by evaluation
// in the presentation's model.
inline bool in_relator_subgroup(const Word& w, const Presentation& p) {
  return p.model.is_identity(p.model.evaluate(w));
}

// Quotient homomorphism phi between presentations sharing one generator list.
struct QuotientMap {
  Presentation source;
  Presentation target;
  std::vector<Word> extra_relators;  // relators of the target beyond the source's

  void validate() const {
    source.validate();
    target.validate();
    if (source.generators != target.generators)
      throw Error("quotient requires identical generator lists");
    for (const Word& r : source.relators)
      if (!target.model.is_identity(target.model.evaluate(r)))
        throw Error("source relator '" + r.str() + "' not satisfied in the target");
    for (const Word& r : extra_relators)
      if (!target.model.is_identity(target.model.evaluate(r)))
        throw Error("extra relator '" + r.str() + "' not satisfied in the target");
  }
};

}  // namespace opca
