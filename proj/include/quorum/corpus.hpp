#pragma once

// Snippet corpus ingestion (one JSON record per line) and the seeded,
// class-balanced expertise/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "quorum/errors.hpp"
#include "quorum/taxonomy.hpp"

namespace quorum {

struct Snippet {
  std::string id;
  std::string language;
  std::string source;
  ComplexityClass gold = ComplexityClass::Constant;
};

// Corpus records: {"src": code, "complexity": label, "language": name,
// "id"?: text}. Ids are synthesized as "rec-<ordinal>" when absent.
inline std::vector<Snippet> load_corpus(
    const std::filesystem::path& file,
    const AliasTable& aliases = default_aliases()) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + file.string());
  std::vector<Snippet> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  std::size_t ordinal = 0;
  auto where = [&](const char* what) {
    return DataError("corpus record " + std::to_string(ordinal) + " (line " +
                     std::to_string(line_no) + "): " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw where("malformed JSON");
    Snippet s;
    for (const char* field : {"src", "complexity", "language"}) {
      if (!j.contains(field) || !j[field].is_string())
        throw DataError("corpus record " + std::to_string(ordinal) + " (line " +
                        std::to_string(line_no) + "): missing or non-text field '" +
                        field + "'");
    }
    s.source = j["src"].get<std::string>();
    if (s.source.empty()) throw where("field 'src' must be non-empty");
    s.language = j["language"].get<std::string>();
    std::string label = j["complexity"].get<std::string>();
    auto cls = class_from_token(label, aliases);
    if (!cls)
      throw DataError("corpus record " + std::to_string(ordinal) + " (line " +
                      std::to_string(line_no) + "): unrecognized complexity label '" +
                      label + "'");
    s.gold = *cls;
    if (j.contains("id")) {
      if (!j["id"].is_string()) throw where("field 'id' must be text");
      s.id = j["id"].get<std::string>();
      if (s.id.empty()) throw where("field 'id' must be non-empty");
    } else {
      s.id = "rec-" + std::to_string(ordinal);
    }
    if (!seen.insert(s.id).second)
      throw DataError("corpus record " + std::to_string(ordinal) + " (line " +
                      std::to_string(line_no) + "): duplicate snippet id '" + s.id +
                      "'");
    out.push_back(std::move(s));
    ++ordinal;
  }
  return out;
}

// One id per line, preserved verbatim apart from surrounding whitespace;
// blank lines ignored.
inline std::vector<std::string> load_id_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open id file: " + file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    std::size_t e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

struct SplitPlan {
  std::set<std::string> expertise_ids;
  std::set<std::string> test_ids;
  std::size_t per_class_expertise_count = 0;
  std::uint64_t seed = 0;
};

struct SplitOptions {
  bool stratify_by_language = false;
};

namespace detail {

// Uniform draw in [0, n) by rejection sampling. std::uniform_int_distribution
// is implementation-defined, this is not.
inline std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Partial Fisher-Yates: move a uniform k-subset to the front, in draw order.
template <typename T>
void draw_front(std::vector<T>& items, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(
                            bounded_uniform(rng, items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace detail

// Draws floor(fraction * |non-test| / 7) snippets per class from the pool
// outside the pinned test set. Deterministic in (corpus order, fraction,
// test_ids, seed, options).
inline SplitPlan make_split(const std::vector<Snippet>& corpus, double fraction,
                            const std::set<std::string>& test_ids,
                            std::uint64_t seed, const SplitOptions& options = {}) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("expertise fraction must lie in (0, 1)");
  std::unordered_set<std::string> known;
  for (const Snippet& s : corpus) known.insert(s.id);
  std::string missing;
  std::size_t missing_count = 0;
  for (const std::string& id : test_ids) {
    if (known.count(id)) continue;
    ++missing_count;
    if (missing_count <= 5) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (missing_count)
    throw DataError("test ids not present in corpus (" +
                    std::to_string(missing_count) + "): " + missing);

  std::array<std::vector<const Snippet*>, 7> pool;
  std::size_t non_test = 0;
  for (const Snippet& s : corpus) {
    if (test_ids.count(s.id)) continue;
    pool[static_cast<std::size_t>(rank(s.gold))].push_back(&s);
    ++non_test;
  }
  // the epsilon absorbs decimal representation error, e.g. 0.1*4410/7
  auto k = static_cast<std::size_t>(std::floor(
      static_cast<long double>(fraction) * static_cast<long double>(non_test) /
          7.0L +
      1e-9L));
  if (k == 0)
    throw DataError("expertise fraction yields zero snippets per class "
                    "(non-test pool has " +
                    std::to_string(non_test) + " snippets)");

  std::mt19937_64 rng(seed);
  SplitPlan plan;
  plan.per_class_expertise_count = k;
  plan.seed = seed;
  plan.test_ids = test_ids;
  for (ComplexityClass c : all_classes()) {
    auto& candidates = pool[static_cast<std::size_t>(rank(c))];
    if (candidates.size() < k)
      throw DataError("class '" + std::string(canonical_token(c)) + "' has only " +
                      std::to_string(candidates.size()) +
                      " non-test snippets, need " + std::to_string(k));
    if (!options.stratify_by_language) {
      detail::draw_front(candidates, k, rng);
      for (std::size_t i = 0; i < k; ++i)
        plan.expertise_ids.insert(candidates[i]->id);
      continue;
    }
    // proportional per-language quotas, remainders by largest fraction then
    // language name
    std::map<std::string, std::vector<const Snippet*>> buckets;
    for (const Snippet* s : candidates) buckets[s->language].push_back(s);
    std::size_t n_c = candidates.size();
    std::map<std::string, std::size_t> quota;
    std::size_t assigned = 0;
    std::vector<std::pair<long double, std::string>> remainders;
    for (const auto& [lang, members] : buckets) {
      long double exact = static_cast<long double>(k) *
                          static_cast<long double>(members.size()) /
                          static_cast<long double>(n_c);
      auto q = static_cast<std::size_t>(std::floor(exact + 1e-9L));
      quota[lang] = q;
      assigned += q;
      remainders.push_back({exact - static_cast<long double>(q), lang});
    }
    std::sort(remainders.begin(), remainders.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
              });
    for (std::size_t i = 0; assigned < k; ++i, ++assigned) ++quota[remainders[i].second];
    for (auto& [lang, members] : buckets) {
      detail::draw_front(members, quota[lang], rng);
      for (std::size_t i = 0; i < quota[lang]; ++i)
        plan.expertise_ids.insert(members[i]->id);
    }
  }
  return plan;
}

}  // namespace quorum
