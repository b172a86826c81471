#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "quorum/taxonomy.hpp"

using namespace quorum;

TEST_CASE("ranks enumerate the growth order") {
  auto classes = all_classes();
  REQUIRE(classes.size() == 7);
  for (int r = 0; r < kClassCount; ++r) {
    REQUIRE(rank(classes[static_cast<std::size_t>(r)]) == r);
    auto c = class_from_rank(r);
    REQUIRE(c.has_value());
    REQUIRE(*c == classes[static_cast<std::size_t>(r)]);
  }
  REQUIRE_FALSE(class_from_rank(-1).has_value());
  REQUIRE_FALSE(class_from_rank(7).has_value());
}

TEST_CASE("canonical tokens and display forms are fixed") {
  REQUIRE(canonical_token(ComplexityClass::Constant) == "constant");
  REQUIRE(canonical_token(ComplexityClass::LogN) == "logn");
  REQUIRE(canonical_token(ComplexityClass::Linear) == "linear");
  REQUIRE(canonical_token(ComplexityClass::NLogN) == "nlogn");
  REQUIRE(canonical_token(ComplexityClass::Quadratic) == "quadratic");
  REQUIRE(canonical_token(ComplexityClass::Cubic) == "cubic");
  REQUIRE(canonical_token(ComplexityClass::Exponential) == "exponential");

  REQUIRE(display_form(ComplexityClass::Constant) == "O(1)");
  REQUIRE(display_form(ComplexityClass::LogN) == "O(log n)");
  REQUIRE(display_form(ComplexityClass::Linear) == "O(n)");
  REQUIRE(display_form(ComplexityClass::NLogN) == "O(n log n)");
  REQUIRE(display_form(ComplexityClass::Quadratic) == "O(n^2)");
  REQUIRE(display_form(ComplexityClass::Cubic) == "O(n^3)");
  REQUIRE(display_form(ComplexityClass::Exponential) == "O(2^n)");

  std::set<std::string_view> tokens;
  for (ComplexityClass c : all_classes()) tokens.insert(canonical_token(c));
  REQUIRE(tokens.size() == 7);
}

TEST_CASE("class_order is the strict growth order") {
  auto classes = all_classes();
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = 0; j < classes.size(); ++j) {
      auto ord = class_order(classes[i], classes[j]);
      if (i < j) REQUIRE(ord == std::strong_ordering::less);
      if (i == j) REQUIRE(ord == std::strong_ordering::equal);
      if (i > j) REQUIRE(ord == std::strong_ordering::greater);
    }
}

TEST_CASE("normalize_token trims, lowercases ASCII, keeps UTF-8") {
  REQUIRE(normalize_token("  Linear \t") == "linear");
  REQUIRE(normalize_token("O(N LOG N)") == "o(n log n)");
  REQUIRE(normalize_token("  O(N²)  ") == "o(n²)");
  REQUIRE(normalize_token("") == "");
  REQUIRE(normalize_token("   ") == "");
}

TEST_CASE("default alias table resolves the common spellings") {
  const AliasTable& t = default_aliases();
  for (ComplexityClass c : all_classes()) {
    REQUIRE(t.lookup(canonical_token(c)) == c);
    REQUIRE(t.lookup(display_form(c)) == c);
  }
  REQUIRE(t.lookup("LOG N") == ComplexityClass::LogN);
  REQUIRE(t.lookup("logarithmic") == ComplexityClass::LogN);
  REQUIRE(t.lookup("Linearithmic") == ComplexityClass::NLogN);
  REQUIRE(t.lookup("n log n") == ComplexityClass::NLogN);
  REQUIRE(t.lookup("N^2") == ComplexityClass::Quadratic);
  REQUIRE(t.lookup("n²") == ComplexityClass::Quadratic);
  REQUIRE(t.lookup("n^3") == ComplexityClass::Cubic);
  REQUIRE(t.lookup("2^n") == ComplexityClass::Exponential);
  REQUIRE(t.lookup("2ⁿ") == ComplexityClass::Exponential);
  REQUIRE_FALSE(t.lookup("polynomial").has_value());
  REQUIRE_FALSE(t.lookup("").has_value());
}

TEST_CASE("alias table rejects conflicts and empty keys") {
  AliasTable t;
  t.add("fast", ComplexityClass::Constant);
  REQUIRE_NOTHROW(t.add("FAST", ComplexityClass::Constant));
  REQUIRE_THROWS_AS(t.add("fast", ComplexityClass::Linear), std::invalid_argument);
  REQUIRE_THROWS_AS(t.add("   ", ComplexityClass::Linear), std::invalid_argument);
  REQUIRE(t.entries().size() == 1);
}

TEST_CASE("class_from_token uses the default table") {
  REQUIRE(class_from_token("O(n log n)") == ComplexityClass::NLogN);
  REQUIRE_FALSE(class_from_token("amortized").has_value());
  AliasTable custom;
  custom.add("blazing", ComplexityClass::Constant);
  REQUIRE(class_from_token("Blazing", custom) == ComplexityClass::Constant);
  REQUIRE_FALSE(class_from_token("constant", custom).has_value());
}
