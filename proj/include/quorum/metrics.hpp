#pragma once

// Evaluation mathematics: 7x8 confusion matrices (seven predicted classes
// plus an abstain column), one-vs-rest F1, macro/weighted summaries, and the
// exact one-sided binomial sign test.

#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "quorum/taxonomy.hpp"

namespace quorum {

inline constexpr std::size_t kAbstainColumn = 7;

struct ConfusionMatrix {
  // counts[gold rank][predicted rank]; column 7 collects abstentions.
  std::array<std::array<std::uint64_t, 8>, 7> counts{};

  void add(ComplexityClass gold, std::optional<ComplexityClass> predicted) {
    std::size_t col =
        predicted ? static_cast<std::size_t>(rank(*predicted)) : kAbstainColumn;
    ++counts[static_cast<std::size_t>(rank(gold))][col];
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (std::uint64_t v : row) n += v;
    return n;
  }

  std::uint64_t support(ComplexityClass c) const {
    const auto& row = counts[static_cast<std::size_t>(rank(c))];
    return std::accumulate(row.begin(), row.end(), std::uint64_t{0});
  }

  std::uint64_t abstains() const {
    std::uint64_t n = 0;
    for (const auto& row : counts) n += row[kAbstainColumn];
    return n;
  }
};

inline ConfusionMatrix confusion(
    const std::vector<ComplexityClass>& golds,
    const std::vector<std::optional<ComplexityClass>>& predictions) {
  if (golds.size() != predictions.size())
    throw std::invalid_argument("golds and predictions differ in length");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < golds.size(); ++i) m.add(golds[i], predictions[i]);
  return m;
}

// One-vs-rest F1 per class. Ratios with zero denominators are 0, so a class
// that is never predicted and never gold scores 0, not NaN.
inline std::array<double, 7> per_class_f1(const ConfusionMatrix& m) {
  std::array<double, 7> f1{};
  for (std::size_t c = 0; c < 7; ++c) {
    std::uint64_t tp = m.counts[c][c];
    std::uint64_t fp = 0;
    for (std::size_t g = 0; g < 7; ++g)
      if (g != c) fp += m.counts[g][c];
    std::uint64_t fn = 0;
    for (std::size_t p = 0; p < 8; ++p)
      if (p != c) fn += m.counts[c][p];
    double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1[c] = (precision + recall > 0.0)
                ? 2.0 * precision * recall / (precision + recall)
                : 0.0;
  }
  return f1;
}

struct MetricsReport {
  double accuracy = 0.0;
  std::array<double, 7> f1{};
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::array<std::uint64_t, 7> support{};
  std::uint64_t abstains = 0;
  std::uint64_t total = 0;
};

inline MetricsReport summarize(const ConfusionMatrix& m) {
  MetricsReport r;
  r.total = m.total();
  if (r.total == 0) throw std::invalid_argument("empty confusion matrix");
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < 7; ++c) correct += m.counts[c][c];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.f1 = per_class_f1(m);
  for (std::size_t c = 0; c < 7; ++c)
    r.support[c] = m.support(*class_from_rank(static_cast<int>(c)));
  r.abstains = m.abstains();
  double sum = 0.0;
  for (double v : r.f1) sum += v;
  r.macro_f1 = sum / 7.0;
  double weighted = 0.0;
  for (std::size_t c = 0; c < 7; ++c)
    weighted += static_cast<double>(r.support[c]) * r.f1[c];
  r.weighted_f1 = weighted / static_cast<double>(r.total);
  return r;
}

// One-sided sign test: probability of k or more wins in n fair coin flips.
// Exact rational tail, numerator / denominator already reduced.
struct SignTest {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;
  double p = 0.0;
};

inline SignTest sign_test_exact(unsigned k, unsigned n) {
  if (n < 1) throw std::invalid_argument("sign test needs at least one trial");
  if (n > 63)
    throw std::invalid_argument("exact sign test supports at most 63 trials");
  if (k > n) throw std::invalid_argument("wins exceed trials");
  // Pascal row n; every entry and the full tail sum fit in uint64 for n <= 63.
  std::vector<std::uint64_t> row(n + 1, 0);
  row[0] = 1;
  for (unsigned i = 1; i <= n; ++i)
    for (unsigned j = i; j >= 1; --j) row[j] += row[j - 1];
  std::uint64_t tail = 0;
  for (unsigned i = k; i <= n; ++i) tail += row[i];
  std::uint64_t denom = std::uint64_t{1} << n;
  std::uint64_t g = std::gcd(tail, denom);
  SignTest t;
  t.numerator = tail / g;
  t.denominator = denom / g;
  t.p = static_cast<double>(static_cast<long double>(tail) /
                            static_cast<long double>(denom));
  return t;
}

inline double sign_test(unsigned k, unsigned n) { return sign_test_exact(k, n).p; }

}  // namespace quorum
