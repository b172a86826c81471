#pragma once

// Shared helpers for consensus tests: verdict builders, a random panel
// generator, and a brute-force consensus oracle written against the rules
// directly, structured nothing like the library implementation.

#include <array>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "quorum/consensus.hpp"
#include "quorum/prompts.hpp"

namespace testsupport {

inline quorum::Verdict make_verdict(
    quorum::ComplexityClass role, std::optional<quorum::ComplexityClass> predicted,
    std::optional<double> logit_conf = std::nullopt,
    std::optional<double> self_conf = std::nullopt, std::string backend = "b") {
  quorum::Verdict v;
  v.backend = std::move(backend);
  v.expert_class = role;
  v.predicted = predicted;
  v.logit_conf = logit_conf;
  v.self_conf = self_conf;
  v.phase = quorum::Phase::Updated;
  return v;
}

// Full seven-role panel with a mix of invalid verdicts, missing confidences,
// and repeated backends.
inline std::vector<quorum::Verdict> random_panel(std::mt19937_64& rng) {
  std::vector<quorum::Verdict> out;
  std::uniform_int_distribution<int> cls(0, 6);
  std::uniform_int_distribution<int> pct(0, 99);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (quorum::ComplexityClass role : quorum::all_classes()) {
    std::optional<quorum::ComplexityClass> predicted;
    std::optional<double> logit, self;
    if (pct(rng) >= 15) {
      predicted = quorum::class_from_rank(cls(rng));
      if (pct(rng) >= 20) logit = std::max(1e-6, unit(rng));
      if (pct(rng) >= 20) self = unit(rng);
    }
    out.push_back(make_verdict(role, predicted, logit, self,
                               "b" + std::to_string(pct(rng) % 3)));
  }
  return out;
}

struct OracleResult {
  std::array<double, 7> score{};
  std::optional<quorum::ComplexityClass> final_class;
  std::string tie_path;
};

inline OracleResult oracle_weighted(const std::vector<quorum::Verdict>& verdicts,
                                    double alpha, double beta,
                                    quorum::ConfSource source) {
  using quorum::ComplexityClass;
  OracleResult r;
  std::array<bool, 7> in_play{};
  for (int c = 0; c < 7; ++c) {
    for (const quorum::Verdict& v : verdicts) {
      if (!v.predicted || quorum::rank(*v.predicted) != c) continue;
      double we = (*v.predicted == v.expert_class) ? alpha : beta;
      double wc = 1.0;
      if (source == quorum::ConfSource::Logit)
        wc = v.logit_conf ? *v.logit_conf : 0.5;
      else if (source == quorum::ConfSource::SelfReport)
        wc = v.self_conf ? *v.self_conf : 0.5;
      r.score[static_cast<std::size_t>(c)] += we * wc;
      in_play[static_cast<std::size_t>(c)] = true;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < 7; ++c)
    if (in_play[static_cast<std::size_t>(c)])
      best = std::max(best, r.score[static_cast<std::size_t>(c)]);
  std::vector<int> tied;
  for (int c = 0; c < 7; ++c)
    if (in_play[static_cast<std::size_t>(c)] &&
        r.score[static_cast<std::size_t>(c)] == best)
      tied.push_back(c);
  if (tied.empty()) {
    r.tie_path = "abstain";
    return r;
  }
  if (tied.size() == 1) {
    r.final_class = quorum::class_from_rank(tied[0]);
    r.tie_path = "unique-max";
    return r;
  }
  std::vector<int> self;
  for (int c : tied)
    for (const quorum::Verdict& v : verdicts)
      if (quorum::rank(v.expert_class) == c && v.predicted &&
          *v.predicted == v.expert_class) {
        self.push_back(c);
        break;
      }
  if (self.size() == 1) {
    r.final_class = quorum::class_from_rank(self[0]);
    r.tie_path = "tie-self-predicted";
  } else if (!self.empty()) {
    r.final_class = quorum::class_from_rank(self.front());
    r.tie_path = "tie-self-predicted-lowest-rank";
  } else {
    r.final_class = quorum::class_from_rank(tied.front());
    r.tie_path = "tie-lowest-rank";
  }
  return r;
}

inline OracleResult oracle_majority(const std::vector<quorum::Verdict>& verdicts) {
  return oracle_weighted(verdicts, 1.0, 1.0, quorum::ConfSource::None);
}

}  // namespace testsupport
