#pragma once

// The seven-way time-complexity taxonomy: canonical answer tokens, display
// forms, the total order by asymptotic growth, and the alias table used to
// normalize free-form model answers back onto the seven labels.

#include <array>
#include <cctype>
#include <compare>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace quorum {

enum class ComplexityClass : int {
  Constant = 0,
  LogN = 1,
  Linear = 2,
  NLogN = 3,
  Quadratic = 4,
  Cubic = 5,
  Exponential = 6,
};

inline constexpr int kClassCount = 7;

inline constexpr std::array<ComplexityClass, kClassCount> all_classes() {
  return {ComplexityClass::Constant,  ComplexityClass::LogN,
          ComplexityClass::Linear,    ComplexityClass::NLogN,
          ComplexityClass::Quadratic, ComplexityClass::Cubic,
          ComplexityClass::Exponential};
}

constexpr int rank(ComplexityClass c) { return static_cast<int>(c); }

inline std::optional<ComplexityClass> class_from_rank(int r) {
  if (r < 0 || r >= kClassCount) return std::nullopt;
  return static_cast<ComplexityClass>(r);
}

constexpr std::string_view canonical_token(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::Constant:
      return "constant";
    case ComplexityClass::LogN:
      return "logn";
    case ComplexityClass::Linear:
      return "linear";
    case ComplexityClass::NLogN:
      return "nlogn";
    case ComplexityClass::Quadratic:
      return "quadratic";
    case ComplexityClass::Cubic:
      return "cubic";
    case ComplexityClass::Exponential:
      return "exponential";
  }
  return "?";
}

constexpr std::string_view display_form(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::Constant:
      return "O(1)";
    case ComplexityClass::LogN:
      return "O(log n)";
    case ComplexityClass::Linear:
      return "O(n)";
    case ComplexityClass::NLogN:
      return "O(n log n)";
    case ComplexityClass::Quadratic:
      return "O(n^2)";
    case ComplexityClass::Cubic:
      return "O(n^3)";
    case ComplexityClass::Exponential:
      return "O(2^n)";
  }
  return "?";
}

// Total order by asymptotic growth; equal ranks compare equal.
constexpr std::strong_ordering class_order(ComplexityClass a, ComplexityClass b) {
  return rank(a) <=> rank(b);
}

// Trim ASCII whitespace at both ends and lowercase ASCII letters. Bytes
// outside ASCII pass through untouched.
inline std::string normalize_token(std::string_view raw) {
  auto is_space = [](unsigned char ch) { return std::isspace(ch) != 0; };
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && is_space(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) {
    auto ch = static_cast<unsigned char>(raw[i]);
    out.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : raw[i]);
  }
  return out;
}

// Alias -> class lookup. Keys are stored normalized. Adding an alias that
// already maps to a different class throws, so the table can never answer
// ambiguously.
class AliasTable {
 public:
  void add(std::string_view alias, ComplexityClass cls) {
    std::string key = normalize_token(alias);
    if (key.empty()) throw std::invalid_argument("alias must not be empty");
    auto [it, inserted] = entries_.emplace(std::move(key), cls);
    if (!inserted && it->second != cls)
      throw std::invalid_argument("alias '" + it->first +
                                  "' already maps to a different class");
  }

  std::optional<ComplexityClass> lookup(std::string_view raw) const {
    auto it = entries_.find(normalize_token(raw));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  const std::map<std::string, ComplexityClass, std::less<>>& entries() const {
    return entries_;
  }

  static AliasTable with_defaults() {
    AliasTable t;
    for (ComplexityClass c : all_classes()) {
      t.add(canonical_token(c), c);
      t.add(display_form(c), c);
    }
    t.add("log n", ComplexityClass::LogN);
    t.add("o(logn)", ComplexityClass::LogN);
    t.add("logarithmic", ComplexityClass::LogN);
    t.add("n log n", ComplexityClass::NLogN);
    t.add("o(nlogn)", ComplexityClass::NLogN);
    t.add("linearithmic", ComplexityClass::NLogN);
    t.add("n^2", ComplexityClass::Quadratic);
    t.add("n²", ComplexityClass::Quadratic);
    t.add("o(n²)", ComplexityClass::Quadratic);
    t.add("n^3", ComplexityClass::Cubic);
    t.add("n³", ComplexityClass::Cubic);
    t.add("o(n³)", ComplexityClass::Cubic);
    t.add("2^n", ComplexityClass::Exponential);
    t.add("2ⁿ", ComplexityClass::Exponential);
    return t;
  }

 private:
  std::map<std::string, ComplexityClass, std::less<>> entries_;
};

inline const AliasTable& default_aliases() {
  static const AliasTable table = AliasTable::with_defaults();
  return table;
}

inline std::optional<ComplexityClass> class_from_token(
    std::string_view token, const AliasTable& aliases = default_aliases()) {
  return aliases.lookup(token);
}

}  // namespace quorum
