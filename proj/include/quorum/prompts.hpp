#pragma once

// Role instruction templates, prompt rendering for the initial and debate
// phases, and parsing of model completions into structured verdicts.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "quorum/backends.hpp"
#include "quorum/corpus.hpp"
#include "quorum/errors.hpp"
#include "quorum/taxonomy.hpp"

namespace quorum {

namespace builtin_prompts {

inline constexpr std::string_view kConstant =
    R"PT(You are the best programmer in the world.
You are also an expert in constant time complexity.
Constant time complexity means that the execution time of a function does not depend on the size of the input.
Regardless of how large the input is, the function completes in a fixed number of operations.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kLogN =
    R"PT(You are the best programmer in the world.
You are also an expert in logarithmic time complexity.
Logarithmic complexity means that the number of operations grows proportionally to the logarithm of the input size.
This often occurs in divide-and-conquer algorithms or binary search-like structures.

## Logical Steps to Determine logarithmic time complexity:
1. Identify if the input size is being reduced by a constant factor (e.g., half) at each iteration.
2. Look for algorithms that involve binary search, tree traversal (balanced trees), or divide-and-conquer.
3. Ensure the number of operations does not scale linearly but instead decreases exponentially.
4. If the loop or recursion reduces the problem size logarithmically, classify it as the logarithmic complexity.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kLinear =
    R"PT(You are the best programmer in the world.
You are also an expert in linear time complexity.
Linear complexity means that the execution time grows proportionally with the input size.
This is typical in single-loop iterations over an array or list.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kNLogN =
    R"PT(You are the best programmer in the world.
You are also an expert in nlogn time complexity.
O(n log n) complexity is common in efficient sorting algorithms like Merge Sort or Quick Sort.
It arises when a problem is divided into smaller subproblems while still iterating over the input.

## Logical Steps to Determine nlogn time complexity:
1. Identify if the input is being divided into smaller parts recursively (logarithmic factor).
2. Ensure that a linear operation is performed at each level of recursion.
3. Look for sorting algorithms like Merge Sort, Quick Sort (average case), or efficient divide-and-conquer solutions.
4. If the algorithm involves dividing the problem and processing each part linearly, classify it as nlogn time complexity.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kQuadratic =
    R"PT(You are the best programmer in the world.
You are also an expert in quadratic time complexity.
Quadratic complexity occurs when an algorithm has double nested loops, where each loop iteration depends on the input size.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kCubic =
    R"PT(You are the best programmer in the world.
You are also an expert in cubic time complexity.
Cubic complexity occurs when an algorithm has three nested loops iterating over the input size.

## Logical Steps to Determine cubic time complexity:
1. Identify if there are three nested loops iterating from 0 to n.
2. Ensure that each element is compared or processed against every pair of elements.
3. Look for brute-force solutions that check all triplets in an input set.
4. If the number of operations scales as the cube of the input size, classify it as cubic complexity.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kExponential =
    R"PT(You are the best programmer in the world.
You are also an expert in exponential time complexity.
Exponential complexity occurs when the number of operations doubles with each additional input element.
This is common in brute-force recursive algorithms, such as solving the Traveling Salesman Problem.

## Logical Steps to Determine exponential time complexity:
1. Identify if the function calls itself recursively, doubling the number of calls at each step.
2. Look for recursion that does not significantly reduce the input size in each step.
3. Check for exhaustive searches, backtracking algorithms, or recursive Fibonacci calculations.
4. If the number of operations grows exponentially with input size, classify it as exponential complexity.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.
However, you may sometimes encounter code whose complexity does not match your expertise.
Do not hesitate to use any other supplementary materials you need for the task.)PT";

inline constexpr std::string_view kNeutral =
    R"PT(You are the best programmer in the world.

You will be asked to determine the time complexity of the following code.
For the time complexity, choose one time complexity from the following options: constant, logn, linear, nlogn, quadratic, cubic, or exponential.)PT";

inline constexpr std::string_view kFooter =
    R"PT(Respond in exactly this format:
COMPLEXITY: <one of constant, logn, linear, nlogn, quadratic, cubic, exponential>
CONFIDENCE: <a number between 0 and 1>
REASONING: <your reasoning>)PT";

inline constexpr std::string_view body_for(ComplexityClass c) {
  switch (c) {
    case ComplexityClass::Constant:
      return kConstant;
    case ComplexityClass::LogN:
      return kLogN;
    case ComplexityClass::Linear:
      return kLinear;
    case ComplexityClass::NLogN:
      return kNLogN;
    case ComplexityClass::Quadratic:
      return kQuadratic;
    case ComplexityClass::Cubic:
      return kCubic;
    case ComplexityClass::Exponential:
      return kExponential;
  }
  return {};
}

}  // namespace builtin_prompts

struct InstructionTemplate {
  ComplexityClass cls = ComplexityClass::Constant;
  std::string body;
};

enum class Phase { Initial, Updated };

inline const char* phase_name(Phase p) {
  return p == Phase::Initial ? "initial" : "updated";
}

inline Phase phase_from_name(std::string_view name) {
  if (name == "initial") return Phase::Initial;
  if (name == "updated") return Phase::Updated;
  throw DataError("unknown phase: " + std::string(name));
}

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

// One expert's structured answer for one snippet.
struct Verdict {
  std::string backend;
  ComplexityClass expert_class = ComplexityClass::Constant;
  std::optional<ComplexityClass> predicted;  // nullopt = invalid
  std::string opinion;
  std::optional<double> logit_conf;  // (0, 1]
  std::optional<double> self_conf;   // [0, 1]
  Phase phase = Phase::Initial;
  TokenUsage usage;
  std::string raw;  // full completion text, kept for audit
  bool logit_conf_fallback = false;
  std::vector<std::string> notes;
};

// Template store. Bodies carry no trailing newline; render adds structure.
class PromptLibrary {
 public:
  static PromptLibrary builtin() {
    PromptLibrary lib;
    for (ComplexityClass c : all_classes())
      lib.bodies_[static_cast<std::size_t>(rank(c))] =
          std::string(builtin_prompts::body_for(c));
    lib.neutral_ = std::string(builtin_prompts::kNeutral);
    lib.footer_ = std::string(builtin_prompts::kFooter);
    return lib;
  }

  // Files <token>.txt, footer.txt and neutral.txt override the built-ins;
  // absent files keep them. Exactly one trailing newline is stripped.
  static PromptLibrary from_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
      throw DataError("template directory does not exist: " + dir.string());
    PromptLibrary lib = builtin();
    auto maybe_load = [&dir](const std::string& name, std::string& slot) {
      std::filesystem::path file = dir / (name + ".txt");
      if (!std::filesystem::exists(file)) return;
      std::ifstream in(file, std::ios::binary);
      if (!in) throw DataError("cannot open template file: " + file.string());
      std::ostringstream buf;
      buf << in.rdbuf();
      std::string text = std::move(buf).str();
      if (!text.empty() && text.back() == '\n') text.pop_back();
      slot = std::move(text);
    };
    for (ComplexityClass c : all_classes())
      maybe_load(std::string(canonical_token(c)),
                 lib.bodies_[static_cast<std::size_t>(rank(c))]);
    maybe_load("footer", lib.footer_);
    maybe_load("neutral", lib.neutral_);
    return lib;
  }

  const std::string& body(ComplexityClass c) const {
    return bodies_[static_cast<std::size_t>(rank(c))];
  }
  const std::string& neutral_body() const { return neutral_; }
  const std::string& footer() const { return footer_; }

  InstructionTemplate instruction(ComplexityClass c) const {
    return {c, body(c)};
  }

  std::string render_initial(ComplexityClass c, const Snippet& snippet) const {
    return compose(body(c), snippet.source);
  }

  std::string render_neutral(const Snippet& snippet) const {
    return compose(neutral_, snippet.source);
  }

  // Debate prompt: code, the receiver's own initial verdict restated, the six
  // peer verdicts in class-rank order, and explicit permission to keep the
  // original answer.
  std::string render_debate(ComplexityClass c, const Snippet& snippet,
                            const Verdict& own_initial,
                            std::span<const Verdict> peers) const {
    if (peers.empty())
      throw std::invalid_argument("debate prompt requires at least one peer verdict");
    std::vector<const Verdict*> ordered;
    ordered.reserve(peers.size());
    for (const Verdict& p : peers) {
      if (p.expert_class == c)
        throw std::invalid_argument(
            "peer verdict set must exclude the receiving expert's own role");
      ordered.push_back(&p);
    }
    std::sort(ordered.begin(), ordered.end(), [](const Verdict* a, const Verdict* b) {
      return rank(a->expert_class) < rank(b->expert_class);
    });
    for (std::size_t i = 1; i < ordered.size(); ++i)
      if (ordered[i]->expert_class == ordered[i - 1]->expert_class)
        throw std::invalid_argument("duplicate peer role in debate prompt");

    std::string out = body(c);
    out += "\n\nCode:\n";
    out += snippet.source;
    out += "\n\nYour initial answer: ";
    out += label_or_invalid(own_initial);
    out += "\nYour initial reasoning:\n";
    out += own_initial.opinion;
    out += "\n\nThe other experts reviewed the same code and answered as follows.\n\n";
    for (const Verdict* p : ordered) {
      std::string role = "[" + std::string(display_form(p->expert_class)) + " expert]";
      out += role + " answer: " + label_or_invalid(*p) + "\n";
      out += role + " reasoning:\n";
      out += p->opinion;
      out += "\n\n";
    }
    out += "Reconsider the time complexity of the code in light of the other "
           "experts' reasoning.\n";
    out += "You may keep your original answer if you are still convinced it is "
           "correct.\n\n";
    out += footer_;
    return out;
  }

 private:
  static std::string label_or_invalid(const Verdict& v) {
    return v.predicted ? std::string(canonical_token(*v.predicted))
                       : std::string("no valid label");
  }

  std::string compose(const std::string& body, const std::string& source) const {
    std::string out = body;
    out += "\n\nCode:\n";
    out += source;
    out += "\n\n";
    out += footer_;
    return out;
  }

  std::array<std::string, 7> bodies_;
  std::string neutral_;
  std::string footer_;
};

inline std::string render_initial(const InstructionTemplate& tmpl,
                                  const Snippet& snippet,
                                  const std::string& footer) {
  std::string out = tmpl.body;
  out += "\n\nCode:\n";
  out += snippet.source;
  out += "\n\n";
  out += footer;
  return out;
}

namespace detail {

inline std::string trim_copy(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  auto blank = [](unsigned char ch) { return std::isspace(ch) != 0; };
  while (b < e && blank(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && blank(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

struct LineHit {
  std::size_t payload_begin = 0;  // offset into the full text
  std::string payload;            // rest of the line after the prefix
};

inline bool iequals_prefix(std::string_view text, std::size_t at,
                           std::string_view prefix) {
  if (at + prefix.size() > text.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    auto a = static_cast<unsigned char>(text[at + i]);
    auto b = static_cast<unsigned char>(prefix[i]);
    if (std::tolower(a) != std::tolower(b)) return false;
  }
  return true;
}

// Last line whose content starts (case-insensitively, after leading blanks)
// with the given prefix.
inline std::optional<LineHit> last_line_with_prefix(std::string_view text,
                                                    std::string_view prefix) {
  std::optional<LineHit> hit;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    std::size_t content = line_start;
    while (content < line_end &&
           (text[content] == ' ' || text[content] == '\t')) ++content;
    if (iequals_prefix(text, content, prefix)) {
      LineHit h;
      h.payload_begin = content + prefix.size();
      h.payload = std::string(text.substr(h.payload_begin, line_end - h.payload_begin));
      hit = std::move(h);
    }
    if (line_end == text.size()) break;
    line_start = line_end + 1;
  }
  return hit;
}

struct TailScan {
  std::optional<ComplexityClass> cls;
  std::size_t begin = 0;  // global offsets of the winning occurrence
  std::size_t end = 0;
  int distinct = 0;
};

// Boundary-checked, longest-alias-first scan of the final window of the
// text. Matched spans are masked so "o(n log n)" cannot also count its inner
// "log n". Exactly one distinct class wins.
inline TailScan scan_tail_for_alias(std::string_view text, const AliasTable& aliases,
                                    std::size_t window = 200) {
  std::size_t begin = text.size() > window ? text.size() - window : 0;
  std::string tail;
  tail.reserve(text.size() - begin);
  for (std::size_t i = begin; i < text.size(); ++i) {
    auto ch = static_cast<unsigned char>(text[i]);
    tail.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch)) : text[i]);
  }
  std::vector<std::pair<std::string_view, ComplexityClass>> keys;
  keys.reserve(aliases.entries().size());
  for (const auto& [alias, cls] : aliases.entries()) keys.push_back({alias, cls});
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
    return a.first < b.first;
  });
  auto word_byte = [](unsigned char ch) {
    return ch < 0x80 && std::isalnum(ch) != 0;
  };
  std::vector<bool> masked(tail.size(), false);
  std::array<bool, 7> seen{};
  std::array<std::pair<std::size_t, std::size_t>, 7> latest{};
  for (const auto& [alias, cls] : keys) {
    if (alias.empty()) continue;
    std::size_t from = 0;
    while (true) {
      std::size_t at = tail.find(alias, from);
      if (at == std::string::npos) break;
      from = at + 1;
      std::size_t stop = at + alias.size();
      bool left_ok = at == 0 || !word_byte(static_cast<unsigned char>(tail[at - 1]));
      bool right_ok =
          stop == tail.size() || !word_byte(static_cast<unsigned char>(tail[stop]));
      if (!left_ok || !right_ok) continue;
      bool overlapped = false;
      for (std::size_t i = at; i < stop; ++i)
        if (masked[i]) {
          overlapped = true;
          break;
        }
      if (overlapped) continue;
      for (std::size_t i = at; i < stop; ++i) masked[i] = true;
      auto r = static_cast<std::size_t>(rank(cls));
      if (!seen[r] || at > latest[r].first) latest[r] = {at, stop};
      seen[r] = true;
    }
  }
  TailScan result;
  for (std::size_t r = 0; r < 7; ++r)
    if (seen[r]) ++result.distinct;
  if (result.distinct == 1) {
    for (std::size_t r = 0; r < 7; ++r) {
      if (!seen[r]) continue;
      result.cls = class_from_rank(static_cast<int>(r));
      result.begin = begin + latest[r].first;
      result.end = begin + latest[r].second;
    }
  }
  return result;
}

// Token offsets must reconstruct the text exactly for a span to be trusted.
inline std::optional<std::pair<std::size_t, std::size_t>> token_span_for_range(
    const std::vector<TokenLogprob>& tokens, std::string_view text,
    std::size_t char_begin, std::size_t char_end) {
  std::size_t offset = 0;
  std::size_t first = tokens.size();
  std::size_t last = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i].token;
    if (offset + tok.size() > text.size()) return std::nullopt;
    if (text.compare(offset, tok.size(), tok) != 0) return std::nullopt;
    std::size_t tok_begin = offset;
    std::size_t tok_end = offset + tok.size();
    if (tok_begin < char_end && tok_end > char_begin) {
      first = std::min(first, i);
      last = std::max(last, i + 1);
    }
    offset = tok_end;
  }
  if (offset != text.size()) return std::nullopt;
  if (first >= last) return std::nullopt;
  return std::make_pair(first, last);
}

}  // namespace detail

// Total over arbitrary completion text: never throws on content, every
// anomaly lands in notes and, at worst, the verdict is invalid.
inline Verdict parse_verdict(const Completion& completion, std::string backend,
                             ComplexityClass expert_class, Phase phase,
                             const AliasTable& aliases = default_aliases()) {
  Verdict v;
  v.backend = std::move(backend);
  v.expert_class = expert_class;
  v.phase = phase;
  v.raw = completion.text;
  v.usage = {completion.prompt_tokens, completion.completion_tokens};
  const std::string& text = completion.text;

  std::size_t label_begin = 0;
  std::size_t label_end = 0;
  if (auto line = detail::last_line_with_prefix(text, "complexity:")) {
    std::string token = normalize_token(line->payload);
    auto cls = aliases.lookup(token);
    if (cls) {
      v.predicted = cls;
      std::size_t lead = line->payload.find_first_not_of(" \t");
      if (lead == std::string::npos) lead = 0;
      label_begin = line->payload_begin + lead;
      label_end = label_begin + token.size();
    } else {
      v.notes.push_back("unrecognized complexity payload: '" + token + "'");
    }
  } else {
    auto scan = detail::scan_tail_for_alias(text, aliases);
    if (scan.cls) {
      v.predicted = scan.cls;
      label_begin = scan.begin;
      label_end = scan.end;
      v.notes.push_back("label recovered by fallback scan");
    } else if (scan.distinct > 1) {
      v.notes.push_back("no complexity line; multiple class aliases near the end");
    } else {
      v.notes.push_back("no complexity line and no class alias near the end");
    }
  }

  if (auto line = detail::last_line_with_prefix(text, "confidence:")) {
    const char* start = line->payload.c_str();
    char* end = nullptr;
    double value = std::strtod(start, &end);
    if (end != start) {
      if (value >= 0.0 && value <= 1.0)
        v.self_conf = value;
      else
        v.notes.push_back("self-reported confidence out of range: " +
                          line->payload);
    } else {
      v.notes.push_back("unparsable confidence payload: " + line->payload);
    }
  }

  if (auto line = detail::last_line_with_prefix(text, "reasoning:")) {
    v.opinion = detail::trim_copy(
        std::string_view(text).substr(line->payload_begin));
  } else {
    v.opinion = detail::trim_copy(text);
  }

  if (v.predicted && completion.token_logprobs &&
      !completion.token_logprobs->empty()) {
    const auto& tokens = *completion.token_logprobs;
    auto span = detail::token_span_for_range(tokens, text, label_begin, label_end);
    if (span) {
      v.logit_conf = logit_confidence(completion, span->first, span->second);
    } else {
      std::size_t n = tokens.size();
      std::size_t m = std::min<std::size_t>(10, n);
      v.logit_conf = logit_confidence(completion, n - m, n);
      v.logit_conf_fallback = true;
      v.notes.push_back("logit span alignment failed; used final-token window");
    }
  }
  return v;
}

}  // namespace quorum
