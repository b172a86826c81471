#pragma once

// Per-class scoring of candidate backends on the expertise split and the
// argmax assignment of one expert backend per complexity class.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "quorum/backends.hpp"
#include "quorum/errors.hpp"
#include "quorum/metrics.hpp"
#include "quorum/parallel.hpp"
#include "quorum/prompts.hpp"
#include "quorum/taxonomy.hpp"

namespace quorum {

struct ClassScoreTable {
  std::vector<std::string> backends;                    // evaluation order
  std::map<std::string, std::array<double, 7>> scores;  // backend -> per-class F1
};

enum class ScoringPromptMode { ExpertRole, Neutral };

inline const char* scoring_prompt_name(ScoringPromptMode m) {
  return m == ScoringPromptMode::ExpertRole ? "expert-role" : "neutral";
}

struct ScoringSettings {
  ScoringPromptMode mode = ScoringPromptMode::ExpertRole;
  DecodingParams decoding{};
  std::size_t parallelism = 1;
};

struct ScoringOutcome {
  ClassScoreTable table;
  std::vector<std::string> warnings;
};

// Expert-role mode evaluates each backend once per candidate role (7 passes,
// each rendering that role's instruction over the whole split); the class-c
// score comes from the pass where the backend played the class-c expert.
// Neutral mode is a single pass with the neutral template. Failed calls
// degrade to abstentions and a warning, never abort the scoring.
inline ScoringOutcome score_backends(BackendPool& pool,
                                     const std::vector<std::string>& backends,
                                     const std::vector<Snippet>& expertise_split,
                                     const PromptLibrary& prompts,
                                     const ScoringSettings& settings) {
  if (backends.empty()) throw std::invalid_argument("no backends to score");
  if (expertise_split.empty())
    throw DataError("expertise split is empty");
  std::array<std::size_t, 7> per_class{};
  for (const Snippet& s : expertise_split)
    ++per_class[static_cast<std::size_t>(rank(s.gold))];
  for (std::size_t r = 0; r < 7; ++r)
    if (per_class[r] != per_class[0])
      throw DataError("expertise split is not class-balanced: class '" +
                      std::string(canonical_token(*class_from_rank(static_cast<int>(r)))) +
                      "' has " + std::to_string(per_class[r]) + " snippets, '" +
                      std::string(canonical_token(ComplexityClass::Constant)) +
                      "' has " + std::to_string(per_class[0]));

  std::vector<ComplexityClass> golds;
  golds.reserve(expertise_split.size());
  for (const Snippet& s : expertise_split) golds.push_back(s.gold);

  ScoringOutcome outcome;
  outcome.table.backends = backends;
  std::mutex warn_mutex;
  for (const std::string& backend : backends) {
    std::array<double, 7>& row = outcome.table.scores[backend];
    row.fill(0.0);
    std::vector<ComplexityClass> roles;
    if (settings.mode == ScoringPromptMode::ExpertRole) {
      for (ComplexityClass c : all_classes()) roles.push_back(c);
    } else {
      roles.push_back(ComplexityClass::Constant);  // single neutral pass
    }
    for (ComplexityClass role : roles) {
      std::vector<std::optional<ComplexityClass>> preds(expertise_split.size());
      detail::parallel_for(
          expertise_split.size(), settings.parallelism, [&](std::size_t i) {
            const Snippet& s = expertise_split[i];
            std::string prompt = settings.mode == ScoringPromptMode::ExpertRole
                                     ? prompts.render_initial(role, s)
                                     : prompts.render_neutral(s);
            try {
              auto out = pool.complete(backend, prompt, settings.decoding, "scoring");
              preds[i] = parse_verdict(out.completion, backend, role, Phase::Initial)
                             .predicted;
            } catch (const TransportError& ex) {
              std::lock_guard lock(warn_mutex);
              outcome.warnings.push_back("scoring call failed, counted as "
                                         "abstention: " +
                                         std::string(ex.what()));
            }
          });
      std::array<double, 7> f1 = per_class_f1(confusion(golds, preds));
      if (settings.mode == ScoringPromptMode::ExpertRole)
        row[static_cast<std::size_t>(rank(role))] = f1[static_cast<std::size_t>(rank(role))];
      else
        row = f1;
    }
  }
  return outcome;
}

struct ExpertPanel {
  std::array<std::string, 7> assignment;       // class rank -> backend name
  std::map<int, std::vector<std::string>> ties;  // rank -> tied names, if any

  std::string digest() const {
    nlohmann::json j = nlohmann::json::object();
    for (ComplexityClass c : all_classes())
      j[std::string(canonical_token(c))] =
          assignment[static_cast<std::size_t>(rank(c))];
    return sha256_hex(j.dump());
  }
};

// Argmax per class; exact score ties break to the lexicographically smallest
// backend name and are recorded.
inline ExpertPanel assign_experts(const ClassScoreTable& table) {
  if (table.backends.empty())
    throw std::invalid_argument("score table has no backends");
  for (const std::string& b : table.backends)
    if (!table.scores.count(b))
      throw std::invalid_argument("score table misses a row for backend: " + b);
  ExpertPanel panel;
  for (std::size_t r = 0; r < 7; ++r) {
    double best = 0.0;
    std::vector<std::string> winners;
    for (const std::string& b : table.backends) {
      double s = table.scores.at(b)[r];
      if (winners.empty() || s > best) {
        best = s;
        winners.assign(1, b);
      } else if (s == best) {
        winners.push_back(b);
      }
    }
    std::sort(winners.begin(), winners.end());
    panel.assignment[r] = winners.front();
    if (winners.size() > 1) panel.ties[static_cast<int>(r)] = winners;
  }
  return panel;
}

inline nlohmann::json panel_manifest_json(const ExpertPanel& panel,
                                          const ClassScoreTable& table,
                                          const nlohmann::json& config) {
  nlohmann::json assignment = nlohmann::json::object();
  for (ComplexityClass c : all_classes()) {
    auto r = static_cast<std::size_t>(rank(c));
    const std::string& backend = panel.assignment[r];
    nlohmann::json cell;
    cell["backend"] = backend;
    cell["score"] = table.scores.at(backend)[r];
    nlohmann::json tied = nlohmann::json::array();
    auto it = panel.ties.find(static_cast<int>(r));
    if (it != panel.ties.end())
      for (const std::string& name : it->second)
        if (name != backend) tied.push_back(name);
    cell["tied_with"] = tied;
    assignment[std::string(canonical_token(c))] = cell;
  }
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [backend, row] : table.scores) {
    nlohmann::json per_class = nlohmann::json::object();
    for (ComplexityClass c : all_classes())
      per_class[std::string(canonical_token(c))] =
          row[static_cast<std::size_t>(rank(c))];
    scores[backend] = per_class;
  }
  nlohmann::json j;
  j["format"] = "quorum-panel-v1";
  j["assignment"] = assignment;
  j["backends"] = table.backends;
  j["scores"] = scores;
  j["panel_digest"] = panel.digest();
  j["config"] = config;
  return j;
}

inline void write_panel_manifest(const std::filesystem::path& file,
                                 const ExpertPanel& panel,
                                 const ClassScoreTable& table,
                                 const nlohmann::json& config) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write panel manifest: " + file.string());
  out << panel_manifest_json(panel, table, config).dump(2) << '\n';
}

struct PanelManifest {
  ExpertPanel panel;
  ClassScoreTable table;
  nlohmann::json config;
};

inline PanelManifest read_panel_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open panel manifest: " + file.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "quorum-panel-v1")
    throw DataError("not a panel manifest: " + file.string());
  PanelManifest m;
  try {
    for (ComplexityClass c : all_classes()) {
      const auto& cell = j.at("assignment").at(std::string(canonical_token(c)));
      m.panel.assignment[static_cast<std::size_t>(rank(c))] =
          cell.at("backend").get<std::string>();
      if (cell.contains("tied_with") && !cell["tied_with"].empty()) {
        std::vector<std::string> tied;
        tied.push_back(cell.at("backend").get<std::string>());
        for (const auto& name : cell["tied_with"])
          tied.push_back(name.get<std::string>());
        std::sort(tied.begin(), tied.end());
        m.panel.ties[rank(c)] = tied;
      }
    }
    for (const auto& name : j.at("backends"))
      m.table.backends.push_back(name.get<std::string>());
    for (const auto& [backend, row] : j.at("scores").items()) {
      std::array<double, 7>& slot = m.table.scores[backend];
      for (ComplexityClass c : all_classes())
        slot[static_cast<std::size_t>(rank(c))] =
            row.at(std::string(canonical_token(c))).get<double>();
    }
    if (j.contains("config")) m.config = j["config"];
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("malformed panel manifest " + file.string() + ": " + ex.what());
  }
  std::string recorded = j.value("panel_digest", "");
  if (!recorded.empty() && recorded != m.panel.digest())
    throw DataError("panel manifest digest mismatch (file was edited?): " +
                    file.string());
  return m;
}

}  // namespace quorum
