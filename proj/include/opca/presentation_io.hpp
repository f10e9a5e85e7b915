#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "opca/group.hpp"

namespace opca {

namespace detail {

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Locates the n-th occurrence of a JSON string literal to attach line/column
// to word-level diagnostics. Best effort; falls back to 0:0.
inline std::pair<int, int> locate_string(const std::string& text, const std::string& value,
                                         int occurrence) {
  const std::string needle = "\"" + value + "\"";
  std::size_t pos = 0;
  for (int k = 0; k <= occurrence; ++k) {
    pos = text.find(needle, pos == 0 && k == 0 ? 0 : pos + 1);
    if (pos == std::string::npos) return {0, 0};
  }
  return line_column(text, pos);
}

}  // namespace detail

// File format:
//   {
//     "name": "Z2",                            (optional)
//     "generators": ["a", "b"],
//     "relators": ["a b a^-1 b^-1"],
//     "model": {"free_abelian": 2} | {"cyclic": [6,5]} |
//              {"free_window": 16} |
//              {"table": {"elements": [...], "mul": [[...]], "identity": 0,
//                         "generator_map": {"a": "r"}}},
//     "generator_map": {"a": [1,0]}            (optional for vector models)
//   }
// Relators must parse and must already be freely reduced; violations are
// reported with line and column.
inline Presentation parse_presentation(const std::string& text, const std::string& origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw Error(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                ": JSON syntax error: " + e.what());
  }
  Presentation p;
  p.name = j.value("name", origin);
  if (!j.contains("generators") || !j["generators"].is_array())
    throw Error(origin + ": missing 'generators' array");
  for (const auto& g : j["generators"]) p.generators.push_back(g.get<std::string>());

  if (!j.contains("model") || !j["model"].is_object())
    throw Error(origin + ": missing 'model' object");
  const auto& jm = j["model"];
  GroupModel::Variant variant;
  std::map<std::string, Element> gmap;
  if (jm.contains("free_abelian")) {
    const int dim = jm["free_abelian"].get<int>();
    variant = FreeAbelianModel{dim};
    if (j.contains("generator_map")) {
      for (auto it = j["generator_map"].begin(); it != j["generator_map"].end(); ++it)
        gmap[it.key()] = it.value().get<std::vector<std::int64_t>>();
    } else {
      if (static_cast<int>(p.generators.size()) != dim)
        throw Error(origin + ": free_abelian rank must match the generator count "
                             "unless generator_map is given");
      for (int i = 0; i < dim; ++i) {
        std::vector<std::int64_t> e(dim, 0);
        e[i] = 1;
        gmap[p.generators[i]] = e;
      }
    }
  } else if (jm.contains("cyclic")) {
    const auto moduli = jm["cyclic"].get<std::vector<std::int64_t>>();
    for (auto m : moduli)
      if (m <= 0) throw Error(origin + ": cyclic moduli must be positive");
    variant = CyclicProductModel{moduli};
    if (j.contains("generator_map")) {
      for (auto it = j["generator_map"].begin(); it != j["generator_map"].end(); ++it)
        gmap[it.key()] = it.value().get<std::vector<std::int64_t>>();
    } else {
      if (p.generators.size() != moduli.size())
        throw Error(origin + ": cyclic factor count must match the generator count "
                             "unless generator_map is given");
      for (std::size_t i = 0; i < moduli.size(); ++i) {
        std::vector<std::int64_t> e(moduli.size(), 0);
        e[i] = 1;
        gmap[p.generators[i]] = e;
      }
    }
  } else if (jm.contains("free_window")) {
    variant = FreeWindowModel{jm["free_window"].get<int>()};
    for (const auto& g : p.generators) gmap[g] = Word::from_symbol(g);
  } else if (jm.contains("table")) {
    const auto& jt = jm["table"];
    FiniteTableModel t;
    t.names = jt["elements"].get<std::vector<std::string>>();
    t.mul = jt["mul"].get<std::vector<std::vector<int>>>();
    t.identity = jt.value("identity", 0);
    variant = t;
    if (!jt.contains("generator_map"))
      throw Error(origin + ": table model requires generator_map");
    for (auto it = jt["generator_map"].begin(); it != jt["generator_map"].end(); ++it) {
      const std::string name = it.value().get<std::string>();
      const auto found = std::find(t.names.begin(), t.names.end(), name);
      if (found == t.names.end())
        throw Error(origin + ": generator_map value '" + name + "' is not a table element");
      gmap[it.key()] = static_cast<int>(found - t.names.begin());
    }
  } else {
    throw Error(origin + ": model must be one of free_abelian, cyclic, free_window, table");
  }
  p.model = GroupModel(std::move(variant), std::move(gmap));

  int occurrence = -1;
  for (const auto& jr : j.value("relators", nlohmann::json::array())) {
    const std::string raw = jr.get<std::string>();
    ++occurrence;
    Word::ParseError perr;
    Word reduced;
    try {
      reduced = Word::parse(raw, &perr);
    } catch (const Error&) {
      auto [line, col] = detail::locate_string(text, raw, occurrence);
      throw Error(origin + ":" + std::to_string(line) + ":" +
                  std::to_string(col + perr.column) + ": relator '" + raw +
                  "': " + perr.message);
    }
    // reject relators that were not written freely reduced
    RawWord verbatim;
    for (const Symbol& s : reduced.symbols()) verbatim.push_back(s);
    std::size_t raw_len = 0;
    {
      std::istringstream iss(raw);
      std::string tok;
      while (iss >> tok) {
        if (tok == "1") continue;
        long expo = 1;
        if (auto c = tok.find('^'); c != std::string::npos) expo = std::stol(tok.substr(c + 1));
        raw_len += static_cast<std::size_t>(std::labs(expo));
      }
    }
    if (raw_len != reduced.size()) {
      auto [line, col] = detail::locate_string(text, raw, occurrence);
      throw Error(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                  ": relator '" + raw + "' is not freely reduced");
    }
    p.relators.push_back(reduced);
  }
  p.validate();
  return p;
}

inline Presentation load_presentation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open presentation file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_presentation(buf.str(), path);
}

}  // namespace opca
