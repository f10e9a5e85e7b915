#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <string>
#include <vector>

#include "opca/common.hpp"

namespace opca {

// One generator occurrence: label plus exponent sign.
struct Symbol {
  std::string label;
  int sign = +1;  // +1 or -1

  Symbol inverse() const { return {label, -sign}; }
  bool operator==(const Symbol&) const = default;
};

using RawWord = std::vector<Symbol>;

// Freely reduced generator word; the empty word is the identity.
class Word {
 public:
  Word() = default;

  // Cancels adjacent inverse pairs left to right; one pass with a stack is
  // confluent, so the result is independent of cancellation order.
  static Word reduce(const RawWord& raw) {
    Word w;
    for (const Symbol& s : raw) {
      if (!w.syms_.empty() && w.syms_.back().label == s.label &&
          w.syms_.back().sign == -s.sign) {
        w.syms_.pop_back();
      } else {
        w.syms_.push_back(s);
      }
    }
    return w;
  }

  static Word from_symbol(const std::string& label, int sign = +1) {
    return reduce({Symbol{label, sign}});
  }

  const std::vector<Symbol>& symbols() const { return syms_; }
  bool empty() const { return syms_.empty(); }
  std::size_t size() const { return syms_.size(); }

  Word inverse() const {
    RawWord raw;
    raw.reserve(syms_.size());
    for (auto it = syms_.rbegin(); it != syms_.rend(); ++it) raw.push_back(it->inverse());
    return reduce(raw);
  }

  Word operator*(const Word& other) const {
    RawWord raw = syms_;
    raw.insert(raw.end(), other.syms_.begin(), other.syms_.end());
    return reduce(raw);
  }

  bool operator==(const Word&) const = default;
  bool operator<(const Word& other) const {
    if (syms_.size() != other.syms_.size()) return syms_.size() < other.syms_.size();
    for (std::size_t i = 0; i < syms_.size(); ++i) {
      if (syms_[i].label != other.syms_[i].label) return syms_[i].label < other.syms_[i].label;
      if (syms_[i].sign != other.syms_[i].sign) return syms_[i].sign > other.syms_[i].sign;
    }
    return false;
  }

  // "a b^-1 a", identity prints as "1".
  std::string str() const {
    if (syms_.empty()) return "1";
    std::string out;
    for (std::size_t i = 0; i < syms_.size(); ++i) {
      if (i) out += ' ';
      out += syms_[i].label;
      if (syms_[i].sign < 0) out += "^-1";
    }
    return out;
  }

  struct ParseError {
    std::string message;
    int column = 0;  // 1-based offset of the offending token
  };

  // Whitespace-separated tokens "a", "a^-1", "a^3"; "1" alone is the identity.
  // Failures throw; when `err` is given it is filled first, so callers that
  // catch can attach file/line context to the recorded message and column.
  static Word parse(const std::string& text, ParseError* err = nullptr) {
    RawWord raw;
    std::size_t i = 0;
    auto fail = [&](const std::string& msg, std::size_t col) {
      if (err) *err = {msg, static_cast<int>(col) + 1};
      throw Error(msg + " at column " + std::to_string(col + 1));
    };
    bool any = false;
    while (i < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[i]))) {
        ++i;
        continue;
      }
      std::size_t start = i;
      while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::string token = text.substr(start, i - start);
      if (token == "1") {
        any = true;
        continue;  // identity token contributes nothing
      }
      std::string label = token;
      long exponent = 1;
      if (auto caret = token.find('^'); caret != std::string::npos) {
        label = token.substr(0, caret);
        const std::string expo = token.substr(caret + 1);
        try {
          std::size_t used = 0;
          exponent = std::stol(expo, &used);
          if (used != expo.size()) throw std::invalid_argument(expo);
        } catch (const std::exception&) {
          fail("bad exponent '" + expo + "'", start);
        }
      }
      if (label.empty() ||
          !std::all_of(label.begin(), label.end(), [](unsigned char c) {
            return std::isalnum(c) || c == '_';
          })) {
        fail("bad generator token '" + token + "'", start);
      }
      const int sign = exponent < 0 ? -1 : +1;
      for (long k = 0; k < std::labs(exponent); ++k) raw.push_back({label, sign});
      any = true;
    }
    if (!any) fail("empty word", 0);
    return reduce(raw);
  }

 private:
  std::vector<Symbol> syms_;
};

}  // namespace opca
