#pragma once

// Fusing the panel's verdicts into one decision: expertise-and-confidence
// weighted scores with a deterministic tie cascade, plus the plain
// majority-vote variant used for ablations.

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "quorum/prompts.hpp"
#include "quorum/taxonomy.hpp"

namespace quorum {

struct ConsensusWeights {
  double alpha = 2.0;  // verdict inside the expert's own class
  double beta = 1.0;   // verdict outside it
};

enum class ConfSource { Logit, SelfReport, None };

inline const char* conf_source_name(ConfSource s) {
  switch (s) {
    case ConfSource::Logit:
      return "logit";
    case ConfSource::SelfReport:
      return "self-report";
    case ConfSource::None:
      return "none";
  }
  return "?";
}

inline ConfSource conf_source_from_name(std::string_view name) {
  if (name == "logit") return ConfSource::Logit;
  if (name == "self-report") return ConfSource::SelfReport;
  if (name == "none") return ConfSource::None;
  throw std::invalid_argument("unknown confidence source: " + std::string(name));
}

inline constexpr double kMissingConfidenceFallback = 0.5;

struct Contribution {
  ComplexityClass role = ComplexityClass::Constant;
  std::string backend;
  ComplexityClass predicted = ComplexityClass::Constant;
  double expertise_weight = 0.0;
  double confidence_weight = 0.0;
  double weight = 0.0;
  bool confidence_fallback = false;  // requested signal missing, 0.5 used
};

struct ScoreTable {
  std::array<double, 7> score{};
  std::vector<Contribution> contributions;
};

// Each valid verdict adds w_expertise * w_confidence to its predicted class;
// invalid verdicts add nothing anywhere. Contributions are accumulated in
// verdict order, so equal inputs give bit-equal scores.
inline ScoreTable weighted_score(std::span<const Verdict> verdicts,
                                 const ConsensusWeights& w, ConfSource source) {
  if (!(w.alpha > 0.0) || !(w.beta > 0.0))
    throw std::invalid_argument("consensus weights must be positive");
  ScoreTable table;
  for (const Verdict& v : verdicts) {
    if (!v.predicted) continue;
    double we = (*v.predicted == v.expert_class) ? w.alpha : w.beta;
    double wc = 1.0;
    bool fallback = false;
    switch (source) {
      case ConfSource::Logit:
        if (v.logit_conf) {
          wc = *v.logit_conf;
        } else {
          wc = kMissingConfidenceFallback;
          fallback = true;
        }
        break;
      case ConfSource::SelfReport:
        if (v.self_conf) {
          wc = *v.self_conf;
        } else {
          wc = kMissingConfidenceFallback;
          fallback = true;
        }
        break;
      case ConfSource::None:
        break;
    }
    double weight = we * wc;
    table.score[static_cast<std::size_t>(rank(*v.predicted))] += weight;
    table.contributions.push_back(
        {v.expert_class, v.backend, *v.predicted, we, wc, weight, fallback});
  }
  return table;
}

struct ConsensusResult {
  std::optional<ComplexityClass> final_class;  // nullopt = abstain
  ScoreTable table;
  std::string tie_path;  // "unique-max", "tie-self-predicted", ...
  ConsensusWeights weights{};
  ConfSource conf_source = ConfSource::None;
  std::string method;  // "weighted" or "majority"
};

namespace detail {

// Argmax over classes that received at least one valid contribution. Ties
// prefer classes whose own designated expert predicted them, then the lowest
// complexity rank.
inline std::pair<std::optional<ComplexityClass>, std::string> pick_winner(
    const std::array<double, 7>& score, const std::array<bool, 7>& in_play,
    const std::array<bool, 7>& self_predicted) {
  std::vector<std::size_t> tied;
  double best = 0.0;
  for (std::size_t r = 0; r < 7; ++r) {
    if (!in_play[r]) continue;
    if (tied.empty() || score[r] > best) {
      best = score[r];
      tied.assign(1, r);
    } else if (score[r] == best) {
      tied.push_back(r);
    }
  }
  if (tied.empty()) return {std::nullopt, "abstain"};
  if (tied.size() == 1)
    return {class_from_rank(static_cast<int>(tied[0])), "unique-max"};
  std::vector<std::size_t> preferred;
  for (std::size_t r : tied)
    if (self_predicted[r]) preferred.push_back(r);
  if (preferred.size() == 1)
    return {class_from_rank(static_cast<int>(preferred[0])), "tie-self-predicted"};
  const auto& pool = preferred.empty() ? tied : preferred;
  std::size_t win = pool.front();  // both vectors are rank-sorted
  return {class_from_rank(static_cast<int>(win)),
          preferred.empty() ? "tie-lowest-rank" : "tie-self-predicted-lowest-rank"};
}

inline std::array<bool, 7> self_predicted_flags(std::span<const Verdict> verdicts) {
  std::array<bool, 7> flags{};
  for (const Verdict& v : verdicts)
    if (v.predicted && *v.predicted == v.expert_class)
      flags[static_cast<std::size_t>(rank(v.expert_class))] = true;
  return flags;
}

}  // namespace detail

inline ConsensusResult decide(const ScoreTable& table,
                              std::span<const Verdict> verdicts) {
  std::array<bool, 7> in_play{};
  for (const Contribution& c : table.contributions)
    in_play[static_cast<std::size_t>(rank(c.predicted))] = true;
  auto [winner, path] =
      detail::pick_winner(table.score, in_play, detail::self_predicted_flags(verdicts));
  ConsensusResult r;
  r.final_class = winner;
  r.table = table;
  r.tie_path = path;
  r.method = "weighted";
  return r;
}

inline ConsensusResult weighted_decide(std::span<const Verdict> verdicts,
                                       const ConsensusWeights& w,
                                       ConfSource source) {
  ConsensusResult r = decide(weighted_score(verdicts, w, source), verdicts);
  r.weights = w;
  r.conf_source = source;
  return r;
}

// Independent plain count; shares only the tie cascade with decide().
inline ConsensusResult majority_vote(std::span<const Verdict> verdicts) {
  ConsensusResult r;
  r.method = "majority";
  r.weights = {1.0, 1.0};
  r.conf_source = ConfSource::None;
  std::array<bool, 7> in_play{};
  for (const Verdict& v : verdicts) {
    if (!v.predicted) continue;
    auto c = static_cast<std::size_t>(rank(*v.predicted));
    r.table.score[c] += 1.0;
    in_play[c] = true;
    r.table.contributions.push_back(
        {v.expert_class, v.backend, *v.predicted, 1.0, 1.0, 1.0, false});
  }
  auto [winner, path] = detail::pick_winner(r.table.score, in_play,
                                            detail::self_predicted_flags(verdicts));
  r.final_class = winner;
  r.tie_path = path;
  return r;
}

}  // namespace quorum
