#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "opca/group.hpp"

namespace opca {

enum class CheckLevel { none = 0, pedantic = 1, pedantic2 = 2 };

inline std::string to_string(CheckLevel level) {
  switch (level) {
    case CheckLevel::none: return "none";
    case CheckLevel::pedantic: return "pedantic";
    case CheckLevel::pedantic2: return "pedantic2";
  }
  return "?";
}

inline CheckLevel check_level_from_string(const std::string& s) {
  if (s == "none") return CheckLevel::none;
  if (s == "pedantic") return CheckLevel::pedantic;
  if (s == "pedantic2") return CheckLevel::pedantic2;
  throw Error("unknown check level '" + s + "'");
}

struct QuotientViolation {
  Word word;
  bool holds_in_source;
  bool holds_in_target;
  int length;  // freely reduced length
};

struct QuotientReport {
  CheckLevel requested = CheckLevel::none;
  CheckLevel level_reached = CheckLevel::pedantic2;
  bool passed = true;
  // ordered tuples examined per raw word length class (2, 4, then 6)
  std::vector<std::uint64_t> enumeration_counts;
  std::uint64_t total_violations = 0;
  std::vector<QuotientViolation> violations;  // distinct reduced words, capped
  static constexpr std::size_t kViolationCap = 16;
};

// Tests the alternating patterns h_a h_b^-1, h_a h_b^-1 h_c h_d^-1 and (at
// level pedantic2) h_a h_b^-1 h_c h_d^-1 h_e h_f^-1, with every h drawn from
// the generators together with their formal inverses.  Equivalently this
// covers every word of even raw length up to 4 (resp. 6).  A violation is a
// word trivial in the target model but not in the source; the converse cannot
// occur once QuotientMap::validate holds.  Length-6 tuples are only examined
// once the shorter classes are clean.
inline QuotientReport check_quotient(const QuotientMap& q, CheckLevel level) {
  q.validate();
  QuotientReport report;
  report.requested = level;
  if (level == CheckLevel::none) {
    report.level_reached = CheckLevel::none;
    return report;
  }

  std::vector<Symbol> alphabet;
  for (const std::string& g : q.source.generators) alphabet.push_back({g, +1});
  for (const std::string& g : q.source.generators) alphabet.push_back({g, -1});
  const std::size_t a = alphabet.size();

  std::set<Word> seen;
  auto run_class = [&](int pairs) -> std::uint64_t {
    // tuple (h_1 .. h_{2*pairs}), lexicographic, last index fastest
    std::uint64_t violations_found = 0;
    std::uint64_t count = 1;
    for (int i = 0; i < 2 * pairs; ++i) count *= a;
    report.enumeration_counts.push_back(count);
    std::vector<std::size_t> idx(2 * pairs, 0);
    while (true) {
      RawWord raw;
      for (int i = 0; i < 2 * pairs; ++i) {
        if (i % 2 == 0)
          raw.push_back(alphabet[idx[i]]);
        else
          raw.push_back(alphabet[idx[i]].inverse());
      }
      const Word w = Word::reduce(raw);
      if (seen.insert(w).second) {
        const bool in_source = q.source.model.is_identity(q.source.model.evaluate(w));
        const bool in_target = q.target.model.is_identity(q.target.model.evaluate(w));
        if (in_target && !in_source) {
          ++violations_found;
          ++report.total_violations;
          if (report.violations.size() < QuotientReport::kViolationCap)
            report.violations.push_back(
                {w, in_source, in_target, static_cast<int>(w.size())});
        }
      }
      std::size_t k = idx.size();
      while (k > 0 && ++idx[k - 1] == a) idx[--k] = 0;
      if (k == 0) break;
    }
    return violations_found;
  };

  std::uint64_t short_violations = run_class(1) + run_class(2);
  if (short_violations > 0) {
    report.level_reached = CheckLevel::none;
  } else if (level == CheckLevel::pedantic) {
    report.level_reached = CheckLevel::pedantic;
  } else {
    report.level_reached =
        run_class(3) > 0 ? CheckLevel::pedantic : CheckLevel::pedantic2;
  }
  report.passed = static_cast<int>(report.level_reached) >= static_cast<int>(level);
  return report;
}

}  // namespace opca
