#pragma once

// The two-phase debate: independent initial verdicts, one exchange of
// opinions with the preserve policy, consensus, and resumable JSONL
// transcript persistence.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "quorum/backends.hpp"
#include "quorum/consensus.hpp"
#include "quorum/corpus.hpp"
#include "quorum/errors.hpp"
#include "quorum/expertise.hpp"
#include "quorum/parallel.hpp"
#include "quorum/prompts.hpp"

namespace quorum {

enum class PolicyEvent { PreservedByPolicy, Revised, KeptVoluntarily, Invalid };

inline const char* policy_event_name(PolicyEvent e) {
  switch (e) {
    case PolicyEvent::PreservedByPolicy:
      return "preserved-by-policy";
    case PolicyEvent::Revised:
      return "revised";
    case PolicyEvent::KeptVoluntarily:
      return "kept-voluntarily";
    case PolicyEvent::Invalid:
      return "invalid";
  }
  return "?";
}

inline PolicyEvent policy_event_from_name(std::string_view name) {
  if (name == "preserved-by-policy") return PolicyEvent::PreservedByPolicy;
  if (name == "revised") return PolicyEvent::Revised;
  if (name == "kept-voluntarily") return PolicyEvent::KeptVoluntarily;
  if (name == "invalid") return PolicyEvent::Invalid;
  throw DataError("unknown policy event: " + std::string(name));
}

struct DebateSettings {
  bool preserve_policy = true;
  int rounds = 1;
  std::size_t parallelism = 1;  // snippets in flight; the 7 panel calls of a
                                // snippet always run concurrently
  ConsensusWeights weights{};
  ConfSource conf_source = ConfSource::Logit;
  DecodingParams decoding{};
};

struct DebateTranscript {
  std::string snippet_id;
  std::string panel_digest;
  std::vector<Verdict> initial;  // one per class role, rank order
  std::vector<Verdict> updated;
  std::array<PolicyEvent, 7> events{};
  ConsensusResult consensus;
};

namespace detail {

inline Verdict failed_call_verdict(const std::string& backend, ComplexityClass role,
                                   Phase phase, const std::string& reason) {
  Verdict v;
  v.backend = backend;
  v.expert_class = role;
  v.phase = phase;
  v.notes.push_back("transport failed after retries: " + reason);
  return v;
}

}  // namespace detail

// Seven independent role-conditioned calls. A backend whose retries are
// exhausted yields an invalid verdict; the round always completes.
inline std::vector<Verdict> initial_round(BackendPool& pool, const ExpertPanel& panel,
                                          const PromptLibrary& prompts,
                                          const Snippet& snippet,
                                          const DebateSettings& settings) {
  std::vector<Verdict> out(7);
  detail::parallel_for(7, 7, [&](std::size_t r) {
    ComplexityClass role = *class_from_rank(static_cast<int>(r));
    const std::string& backend = panel.assignment[r];
    std::string prompt = prompts.render_initial(role, snippet);
    try {
      auto res = pool.complete(backend, prompt, settings.decoding, "initial");
      out[r] = parse_verdict(res.completion, backend, role, Phase::Initial);
    } catch (const TransportError& ex) {
      out[r] = detail::failed_call_verdict(backend, role, Phase::Initial, ex.what());
    }
  });
  return out;
}

struct DebateRoundResult {
  std::vector<Verdict> updated;
  std::array<PolicyEvent, 7> events{};
};

// One exchange. An expert whose incoming verdict already names its own class
// is preserved by policy: no call is made, the verdict is copied forward with
// its confidence intact. Everyone else sees all six peers and answers again.
inline DebateRoundResult debate_round(BackendPool& pool, const ExpertPanel& panel,
                                      const PromptLibrary& prompts,
                                      const Snippet& snippet,
                                      const std::vector<Verdict>& incoming,
                                      const DebateSettings& settings) {
  if (incoming.size() != 7)
    throw std::invalid_argument("debate round needs exactly seven incoming verdicts");
  DebateRoundResult result;
  result.updated.resize(7);
  detail::parallel_for(7, 7, [&](std::size_t r) {
    ComplexityClass role = *class_from_rank(static_cast<int>(r));
    const Verdict& own = incoming[r];
    if (settings.preserve_policy && own.predicted && *own.predicted == role) {
      Verdict copy = own;
      copy.phase = Phase::Updated;
      result.updated[r] = std::move(copy);
      result.events[r] = PolicyEvent::PreservedByPolicy;
      return;
    }
    std::vector<Verdict> peers;
    peers.reserve(6);
    for (std::size_t j = 0; j < 7; ++j)
      if (j != r) peers.push_back(incoming[j]);
    std::string prompt = prompts.render_debate(role, snippet, own, peers);
    const std::string& backend = panel.assignment[r];
    try {
      auto res = pool.complete(backend, prompt, settings.decoding, "debate");
      Verdict v = parse_verdict(res.completion, backend, role, Phase::Updated);
      if (!v.predicted)
        result.events[r] = PolicyEvent::Invalid;
      else if (own.predicted && *own.predicted == *v.predicted)
        result.events[r] = PolicyEvent::KeptVoluntarily;
      else
        result.events[r] = PolicyEvent::Revised;
      result.updated[r] = std::move(v);
    } catch (const TransportError& ex) {
      Verdict copy = own;
      copy.phase = Phase::Updated;
      copy.notes.push_back("debate call failed, kept incoming verdict: " +
                           std::string(ex.what()));
      result.updated[r] = std::move(copy);
      result.events[r] = PolicyEvent::KeptVoluntarily;
    }
  });
  return result;
}

inline DebateTranscript run_snippet(BackendPool& pool, const ExpertPanel& panel,
                                    const PromptLibrary& prompts,
                                    const Snippet& snippet,
                                    const DebateSettings& settings) {
  if (settings.rounds < 1)
    throw std::invalid_argument("debate needs at least one round");
  DebateTranscript t;
  t.snippet_id = snippet.id;
  t.panel_digest = panel.digest();
  t.initial = initial_round(pool, panel, prompts, snippet, settings);
  std::vector<Verdict> current = t.initial;
  DebateRoundResult round;
  for (int i = 0; i < settings.rounds; ++i) {
    round = debate_round(pool, panel, prompts, snippet, current, settings);
    current = round.updated;
  }
  t.updated = std::move(round.updated);
  t.events = round.events;
  t.consensus = weighted_decide(t.updated, settings.weights, settings.conf_source);
  return t;
}

inline nlohmann::json verdict_to_json(const Verdict& v) {
  nlohmann::json j;
  j["backend"] = v.backend;
  j["expert_class"] = std::string(canonical_token(v.expert_class));
  j["predicted"] =
      v.predicted ? nlohmann::json(std::string(canonical_token(*v.predicted)))
                  : nlohmann::json(nullptr);
  j["opinion"] = v.opinion;
  j["logit_conf"] = v.logit_conf ? nlohmann::json(*v.logit_conf) : nlohmann::json(nullptr);
  j["self_conf"] = v.self_conf ? nlohmann::json(*v.self_conf) : nlohmann::json(nullptr);
  j["phase"] = phase_name(v.phase);
  j["usage"] = {{"prompt_tokens", v.usage.prompt_tokens},
                {"completion_tokens", v.usage.completion_tokens}};
  j["raw"] = v.raw;
  j["logit_conf_fallback"] = v.logit_conf_fallback;
  j["notes"] = v.notes;
  return j;
}

inline Verdict verdict_from_json(const nlohmann::json& j) {
  Verdict v;
  v.backend = j.at("backend").get<std::string>();
  auto cls = class_from_token(j.at("expert_class").get<std::string>());
  if (!cls) throw DataError("verdict record carries unknown expert class");
  v.expert_class = *cls;
  if (!j.at("predicted").is_null()) {
    auto p = class_from_token(j["predicted"].get<std::string>());
    if (!p) throw DataError("verdict record carries unknown predicted class");
    v.predicted = p;
  }
  v.opinion = j.at("opinion").get<std::string>();
  if (!j.at("logit_conf").is_null()) v.logit_conf = j["logit_conf"].get<double>();
  if (!j.at("self_conf").is_null()) v.self_conf = j["self_conf"].get<double>();
  v.phase = phase_from_name(j.at("phase").get<std::string>());
  v.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
  v.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
  v.raw = j.at("raw").get<std::string>();
  v.logit_conf_fallback = j.value("logit_conf_fallback", false);
  if (j.contains("notes"))
    for (const auto& n : j["notes"]) v.notes.push_back(n.get<std::string>());
  return v;
}

inline nlohmann::json consensus_to_json(const ConsensusResult& c) {
  nlohmann::json j;
  j["method"] = c.method;
  j["final"] = c.final_class
                   ? nlohmann::json(std::string(canonical_token(*c.final_class)))
                   : nlohmann::json(nullptr);
  j["tie_path"] = c.tie_path;
  j["weights"] = {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}};
  j["conf_source"] = conf_source_name(c.conf_source);
  nlohmann::json scores = nlohmann::json::object();
  for (ComplexityClass cls : all_classes())
    scores[std::string(canonical_token(cls))] =
        c.table.score[static_cast<std::size_t>(rank(cls))];
  j["scores"] = scores;
  nlohmann::json contributions = nlohmann::json::array();
  for (const Contribution& k : c.table.contributions) {
    contributions.push_back({{"role", std::string(canonical_token(k.role))},
                             {"backend", k.backend},
                             {"predicted", std::string(canonical_token(k.predicted))},
                             {"expertise_weight", k.expertise_weight},
                             {"confidence_weight", k.confidence_weight},
                             {"weight", k.weight},
                             {"confidence_fallback", k.confidence_fallback}});
  }
  j["contributions"] = contributions;
  return j;
}

inline ConsensusResult consensus_from_json(const nlohmann::json& j) {
  ConsensusResult c;
  c.method = j.at("method").get<std::string>();
  if (!j.at("final").is_null()) {
    auto cls = class_from_token(j["final"].get<std::string>());
    if (!cls) throw DataError("consensus record carries unknown final class");
    c.final_class = cls;
  }
  c.tie_path = j.at("tie_path").get<std::string>();
  c.weights.alpha = j.at("weights").at("alpha").get<double>();
  c.weights.beta = j.at("weights").at("beta").get<double>();
  c.conf_source = conf_source_from_name(j.at("conf_source").get<std::string>());
  for (ComplexityClass cls : all_classes())
    c.table.score[static_cast<std::size_t>(rank(cls))] =
        j.at("scores").at(std::string(canonical_token(cls))).get<double>();
  if (j.contains("contributions")) {
    for (const auto& kj : j["contributions"]) {
      Contribution k;
      auto role = class_from_token(kj.at("role").get<std::string>());
      auto predicted = class_from_token(kj.at("predicted").get<std::string>());
      if (!role || !predicted)
        throw DataError("consensus contribution carries unknown class");
      k.role = *role;
      k.backend = kj.at("backend").get<std::string>();
      k.predicted = *predicted;
      k.expertise_weight = kj.at("expertise_weight").get<double>();
      k.confidence_weight = kj.at("confidence_weight").get<double>();
      k.weight = kj.at("weight").get<double>();
      k.confidence_fallback = kj.value("confidence_fallback", false);
      c.table.contributions.push_back(std::move(k));
    }
  }
  return c;
}

inline nlohmann::json transcript_to_json(const DebateTranscript& t) {
  nlohmann::json j;
  j["format"] = "quorum-transcript-v1";
  j["snippet"] = t.snippet_id;
  j["panel_digest"] = t.panel_digest;
  nlohmann::json initial = nlohmann::json::array();
  for (const Verdict& v : t.initial) initial.push_back(verdict_to_json(v));
  j["initial"] = initial;
  nlohmann::json updated = nlohmann::json::array();
  for (const Verdict& v : t.updated) updated.push_back(verdict_to_json(v));
  j["updated"] = updated;
  nlohmann::json events = nlohmann::json::array();
  for (PolicyEvent e : t.events) events.push_back(policy_event_name(e));
  j["events"] = events;
  j["consensus"] = consensus_to_json(t.consensus);
  return j;
}

inline DebateTranscript transcript_from_json(const nlohmann::json& j) {
  DebateTranscript t;
  t.snippet_id = j.at("snippet").get<std::string>();
  t.panel_digest = j.at("panel_digest").get<std::string>();
  for (const auto& vj : j.at("initial")) t.initial.push_back(verdict_from_json(vj));
  for (const auto& vj : j.at("updated")) t.updated.push_back(verdict_from_json(vj));
  const auto& events = j.at("events");
  if (t.initial.size() != 7 || t.updated.size() != 7 || events.size() != 7)
    throw DataError("transcript record does not carry seven verdicts per phase");
  for (std::size_t r = 0; r < 7; ++r)
    t.events[r] = policy_event_from_name(events[r].get<std::string>());
  t.consensus = consensus_from_json(j.at("consensus"));
  return t;
}

// Incremental writer for one run file: a header line pinning the panel digest
// and effective config, then one transcript record per snippet. Reopening
// the same file resumes: records already present are trusted and skipped, a
// torn final line is truncated away.
class TranscriptWriter {
 public:
  TranscriptWriter(std::filesystem::path file, std::string panel_digest,
                   nlohmann::json effective_config)
      : path_(std::move(file)),
        panel_digest_(std::move(panel_digest)),
        config_(std::move(effective_config)) {
    if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0)
      resume();
    else
      start();
  }

  bool done(const std::string& snippet_id) const { return done_.count(snippet_id) > 0; }
  const std::vector<DebateTranscript>& existing() const { return existing_; }

  void append(const DebateTranscript& t) {
    if (t.panel_digest != panel_digest_)
      throw DataError("transcript record panel digest does not match the run");
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to transcript: " + path_.string());
    out << transcript_to_json(t).dump() << '\n';
    out.flush();
    done_.insert(t.snippet_id);
  }

 private:
  void start() {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create transcript: " + path_.string());
    nlohmann::json header;
    header["format"] = "quorum-run-v1";
    header["panel_digest"] = panel_digest_;
    header["config"] = config_;
    out << header.dump() << '\n';
    out.flush();
  }

  void resume() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw DataError("cannot open transcript: " + path_.string());
    std::string line;
    std::size_t line_no = 0;
    std::uintmax_t good_end = 0;
    bool torn = false;
    bool have_header = false;
    while (std::getline(in, line)) {
      ++line_no;
      std::streampos pos = in.tellg();
      if (line.empty()) {
        if (pos != std::streampos(-1)) good_end = static_cast<std::uintmax_t>(pos);
        continue;
      }
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        std::string rest;
        if (std::getline(in, rest))
          throw DataError("transcript corrupt at line " + std::to_string(line_no) +
                          ": " + path_.string());
        torn = true;
        break;
      }
      if (!have_header) {
        if (j.value("format", "") != "quorum-run-v1")
          throw DataError("not a run transcript: " + path_.string());
        if (j.value("panel_digest", "") != panel_digest_)
          throw DataError("transcript belongs to a different panel; refusing to "
                          "mix runs: " + path_.string());
        if (j.value("config", nlohmann::json()) != config_)
          throw DataError("transcript was produced with a different config; "
                          "refusing to mix runs: " + path_.string());
        have_header = true;
      } else {
        try {
          DebateTranscript t = transcript_from_json(j);
          if (t.panel_digest != panel_digest_)
            throw DataError("transcript record panel digest mismatch: " +
                            path_.string());
          done_.insert(t.snippet_id);
          existing_.push_back(std::move(t));
        } catch (const nlohmann::json::exception&) {
          throw DataError("transcript corrupt at line " + std::to_string(line_no) +
                          ": " + path_.string());
        }
      }
      if (pos != std::streampos(-1)) good_end = static_cast<std::uintmax_t>(pos);
    }
    if (!have_header)
      throw DataError("transcript has no readable header: " + path_.string());
    if (torn) {
      std::error_code ec;
      std::filesystem::resize_file(path_, good_end, ec);
      if (ec) throw DataError("cannot truncate torn transcript tail: " + path_.string());
    }
  }

  std::filesystem::path path_;
  std::string panel_digest_;
  nlohmann::json config_;
  std::set<std::string> done_;
  std::vector<DebateTranscript> existing_;
};

struct PipelineError {
  std::string snippet_id;
  std::string message;
};

struct PipelineResult {
  std::vector<DebateTranscript> transcripts;  // resumed first, then new, input order
  std::vector<PipelineError> errors;
  std::size_t resumed = 0;
};

// Debates every snippet not already in the transcript file. Snippets are
// processed in blocks of `parallelism` and committed in input order, so a
// completed run's bytes do not depend on scheduling. A snippet that throws
// is reported and left out of the file; a rerun picks it up again.
inline PipelineResult run_pipeline(BackendPool& pool, const ExpertPanel& panel,
                                   const PromptLibrary& prompts,
                                   const std::vector<Snippet>& snippets,
                                   const DebateSettings& settings,
                                   const std::filesystem::path& transcript_file,
                                   const nlohmann::json& effective_config) {
  TranscriptWriter writer(transcript_file, panel.digest(), effective_config);
  PipelineResult result;
  result.transcripts = writer.existing();
  result.resumed = result.transcripts.size();

  std::vector<const Snippet*> pending;
  for (const Snippet& s : snippets)
    if (!writer.done(s.id)) pending.push_back(&s);

  std::size_t block = settings.parallelism > 0 ? settings.parallelism : 1;
  for (std::size_t base = 0; base < pending.size(); base += block) {
    std::size_t n = std::min(block, pending.size() - base);
    std::vector<std::optional<DebateTranscript>> slots(n);
    std::vector<std::string> failures(n);
    detail::parallel_for(n, n, [&](std::size_t i) {
      try {
        slots[i] = run_snippet(pool, panel, prompts, *pending[base + i], settings);
      } catch (const std::exception& ex) {
        failures[i] = ex.what();
      }
    });
    for (std::size_t i = 0; i < n; ++i) {
      if (slots[i]) {
        writer.append(*slots[i]);
        result.transcripts.push_back(std::move(*slots[i]));
      } else {
        result.errors.push_back({pending[base + i]->id, failures[i]});
      }
    }
  }
  return result;
}

// Reads a finished (or partial) run file back: header config plus records.
struct TranscriptFile {
  nlohmann::json config;
  std::string panel_digest;
  std::vector<DebateTranscript> records;
};

inline TranscriptFile read_transcript_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open transcript: " + file.string());
  TranscriptFile out;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw DataError("transcript corrupt at line " + std::to_string(line_no) + ": " +
                      file.string());
    if (!have_header) {
      if (j.value("format", "") != "quorum-run-v1")
        throw DataError("not a run transcript: " + file.string());
      out.config = j.value("config", nlohmann::json());
      out.panel_digest = j.value("panel_digest", "");
      have_header = true;
      continue;
    }
    try {
      out.records.push_back(transcript_from_json(j));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("transcript corrupt at line " + std::to_string(line_no) + ": " +
                      file.string() + ": " + ex.what());
    }
  }
  if (!have_header)
    throw DataError("transcript has no readable header: " + file.string());
  return out;
}

}  // namespace quorum
