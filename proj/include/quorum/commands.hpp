#pragma once

// The four operator commands behind the CLI: split, assign, debate, report.
// Each is a throwing function over paths so tests can call them in-process.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "quorum/config.hpp"
#include "quorum/consensus.hpp"
#include "quorum/corpus.hpp"
#include "quorum/debate.hpp"
#include "quorum/errors.hpp"
#include "quorum/expertise.hpp"
#include "quorum/metrics.hpp"

namespace quorum {

// One process per output directory. Created on construction, removed on
// destruction; a leftover lock means another run is active (or died hard,
// in which case the operator removes it).
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir / ".quorum-lock";
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw DataError("output directory is locked by another run: " +
                        path_.string());
      throw DataError("cannot create lock file: " + path_.string());
    }
    std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.c_str(), pid.size()) < 0) {
      // lock exists either way; pid content is advisory
    }
    ::close(fd);
    held_ = true;
  }

  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

  ~RunLock() {
    if (held_) {
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  bool held_ = false;
};

inline void validate_split_plan(const SplitPlan& plan) {
  for (const std::string& id : plan.expertise_ids)
    if (plan.test_ids.count(id))
      throw DataError("split plan is not disjoint: snippet '" + id +
                      "' appears in both the expertise and test sets");
  if (plan.expertise_ids.empty())
    throw DataError("split plan has no expertise snippets");
}

inline nlohmann::json split_plan_json(const SplitPlan& plan, double fraction,
                                      const nlohmann::json& config) {
  nlohmann::json j;
  j["format"] = "quorum-split-v1";
  j["fraction"] = fraction;
  j["seed"] = plan.seed;
  j["per_class_expertise_count"] = plan.per_class_expertise_count;
  j["expertise_ids"] = plan.expertise_ids;  // sets serialize sorted
  j["test_ids"] = plan.test_ids;
  j["config"] = config;
  return j;
}

struct SplitFile {
  SplitPlan plan;
  nlohmann::json config;
};

inline SplitFile read_split_plan(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open split plan: " + file.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "quorum-split-v1")
    throw DataError("not a split plan: " + file.string());
  SplitFile out;
  try {
    for (const auto& id : j.at("expertise_ids"))
      out.plan.expertise_ids.insert(id.get<std::string>());
    for (const auto& id : j.at("test_ids"))
      out.plan.test_ids.insert(id.get<std::string>());
    out.plan.per_class_expertise_count =
        j.at("per_class_expertise_count").get<std::size_t>();
    out.plan.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("config")) out.config = j["config"];
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("malformed split plan " + file.string() + ": " + ex.what());
  }
  validate_split_plan(out.plan);
  return out;
}

struct SplitArgs {
  std::filesystem::path config_file;
  std::filesystem::path corpus_file;
  std::filesystem::path test_id_file;
  std::optional<std::filesystem::path> out;
};

struct SplitOutput {
  SplitPlan plan;
  std::filesystem::path file;
};

inline SplitOutput run_split(const SplitArgs& a) {
  RunConfig cfg = load_config(a.config_file);
  AliasTable aliases = build_aliases(cfg);
  std::vector<Snippet> corpus = load_corpus(a.corpus_file, aliases);
  std::vector<std::string> ids = load_id_file(a.test_id_file);
  std::set<std::string> test_ids(ids.begin(), ids.end());
  RunLock lock(cfg.output_dir);
  SplitPlan plan = make_split(corpus, cfg.expertise_fraction, test_ids, cfg.seed,
                              {cfg.stratify_by_language});
  validate_split_plan(plan);
  std::filesystem::path file =
      a.out.value_or(std::filesystem::path(cfg.output_dir) / "plan.json");
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write split plan: " + file.string());
  out << split_plan_json(plan, cfg.expertise_fraction, config_to_json(cfg)).dump(2)
      << '\n';
  return {std::move(plan), file};
}

struct AssignArgs {
  std::filesystem::path config_file;
  std::filesystem::path corpus_file;
  std::filesystem::path split_file;
  std::optional<std::filesystem::path> out;
};

struct AssignOutput {
  ExpertPanel panel;
  ClassScoreTable table;
  std::vector<std::string> warnings;
  std::filesystem::path manifest;
  std::filesystem::path ledger_file;
};

inline AssignOutput run_assign(const AssignArgs& a) {
  RunConfig cfg = load_config(a.config_file);
  AliasTable aliases = build_aliases(cfg);
  std::vector<Snippet> corpus = load_corpus(a.corpus_file, aliases);
  SplitFile split = read_split_plan(a.split_file);

  std::vector<Snippet> expertise;
  std::set<std::string> wanted = split.plan.expertise_ids;
  for (const Snippet& s : corpus)
    if (wanted.erase(s.id)) expertise.push_back(s);
  if (!wanted.empty())
    throw DataError("split plan names " + std::to_string(wanted.size()) +
                    " expertise snippets missing from the corpus, first: '" +
                    *wanted.begin() + "'");

  RunLock lock(cfg.output_dir);
  auto ledger = std::make_shared<TokenLedger>();
  std::filesystem::path config_dir = a.config_file.parent_path();
  BackendPool pool = build_pool(cfg, config_dir, ledger);
  PromptLibrary prompts = build_prompts(cfg, config_dir);

  ScoringSettings settings;
  settings.mode = cfg.scoring_prompt == "neutral" ? ScoringPromptMode::Neutral
                                                  : ScoringPromptMode::ExpertRole;
  settings.decoding = decoding_params(cfg);
  settings.parallelism = static_cast<std::size_t>(cfg.parallelism);

  std::vector<std::string> names;
  for (const BackendConfig& b : cfg.backends) names.push_back(b.name);
  ScoringOutcome outcome = score_backends(pool, names, expertise, prompts, settings);
  if (ledger->completions_served() == 0 && ledger->transport_calls_total() > 0)
    throw TransportError("", "every backend call failed during scoring");

  ExpertPanel panel = assign_experts(outcome.table);
  std::filesystem::path manifest =
      a.out.value_or(std::filesystem::path(cfg.output_dir) / "panel.json");
  if (manifest.has_parent_path())
    std::filesystem::create_directories(manifest.parent_path());
  write_panel_manifest(manifest, panel, outcome.table, config_to_json(cfg));

  std::filesystem::path ledger_file =
      std::filesystem::path(cfg.output_dir) / "scoring_ledger.json";
  {
    std::ofstream out(ledger_file, std::ios::binary);
    if (!out) throw DataError("cannot write scoring ledger: " + ledger_file.string());
    out << ledger->to_json().dump(2) << '\n';
  }
  return {std::move(panel), std::move(outcome.table), std::move(outcome.warnings),
          manifest, ledger_file};
}

struct DebateArgs {
  std::filesystem::path config_file;
  std::filesystem::path corpus_file;
  std::filesystem::path test_id_file;
  std::filesystem::path panel_file;
  std::optional<std::filesystem::path> transcript_out;
  std::optional<std::filesystem::path> ledger_out;
  std::optional<bool> preserve_override;
};

struct DebateOutput {
  PipelineResult pipeline;
  std::filesystem::path transcript;
  std::filesystem::path ledger_file;
};

inline DebateOutput run_debate(const DebateArgs& a) {
  RunConfig cfg = load_config(a.config_file);
  if (a.preserve_override) cfg.preserve_policy = *a.preserve_override;
  AliasTable aliases = build_aliases(cfg);
  std::vector<Snippet> corpus = load_corpus(a.corpus_file, aliases);
  std::vector<std::string> ids = load_id_file(a.test_id_file);
  std::set<std::string> test_ids(ids.begin(), ids.end());

  std::set<std::string> known;
  for (const Snippet& s : corpus) known.insert(s.id);
  std::string missing;
  std::size_t missing_count = 0;
  for (const std::string& id : test_ids)
    if (!known.count(id)) {
      ++missing_count;
      if (missing_count <= 5) missing += (missing.empty() ? "" : ", ") + id;
    }
  if (missing_count)
    throw DataError("test ids not present in corpus (" +
                    std::to_string(missing_count) + "): " + missing);

  std::vector<Snippet> snippets;
  for (const Snippet& s : corpus)
    if (test_ids.count(s.id)) snippets.push_back(s);

  PanelManifest manifest = read_panel_manifest(a.panel_file);
  std::set<std::string> configured;
  for (const BackendConfig& b : cfg.backends) configured.insert(b.name);
  for (const std::string& backend : manifest.panel.assignment)
    if (!configured.count(backend))
      throw DataError("panel names backend '" + backend +
                      "' but the config does not define it");

  RunLock lock(cfg.output_dir);
  auto ledger = std::make_shared<TokenLedger>();
  std::filesystem::path config_dir = a.config_file.parent_path();
  BackendPool pool = build_pool(cfg, config_dir, ledger);
  PromptLibrary prompts = build_prompts(cfg, config_dir);

  DebateSettings settings;
  settings.preserve_policy = cfg.preserve_policy;
  settings.rounds = cfg.debate_rounds;
  settings.parallelism = static_cast<std::size_t>(cfg.parallelism);
  settings.weights = {cfg.alpha, cfg.beta};
  settings.conf_source = conf_source_from_name(cfg.conf_source);
  settings.decoding = decoding_params(cfg);

  std::filesystem::path transcript =
      a.transcript_out.value_or(std::filesystem::path(cfg.output_dir) /
                                "transcript.jsonl");
  if (transcript.has_parent_path())
    std::filesystem::create_directories(transcript.parent_path());
  PipelineResult pipeline = run_pipeline(pool, manifest.panel, prompts, snippets,
                                         settings, transcript, config_to_json(cfg));
  if (ledger->completions_served() == 0 && ledger->transport_calls_total() > 0)
    throw TransportError("", "every backend call failed during the debate");

  std::filesystem::path ledger_file = a.ledger_out.value_or(
      std::filesystem::path(cfg.output_dir) / "ledger.json");
  if (ledger_file.has_parent_path())
    std::filesystem::create_directories(ledger_file.parent_path());
  {
    std::ofstream out(ledger_file, std::ios::binary);
    if (!out) throw DataError("cannot write ledger: " + ledger_file.string());
    out << ledger->to_json().dump(2) << '\n';
  }
  return {std::move(pipeline), transcript, ledger_file};
}

struct ReportArgs {
  std::filesystem::path transcript;
  std::filesystem::path corpus_file;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> ledger;
};

struct ReportOutput {
  nlohmann::json report;
  std::string text;
  std::filesystem::path file;
};

namespace detail {

inline nlohmann::json metrics_json(const ConfusionMatrix& m) {
  MetricsReport r = summarize(m);
  nlohmann::json per_class = nlohmann::json::object();
  for (ComplexityClass c : all_classes())
    per_class[std::string(canonical_token(c))] =
        r.f1[static_cast<std::size_t>(rank(c))];
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : m.counts) {
    nlohmann::json cells = nlohmann::json::array();
    for (std::uint64_t v : row) cells.push_back(v);
    rows.push_back(cells);
  }
  nlohmann::json j;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["weighted_f1"] = r.weighted_f1;
  j["per_class_f1"] = per_class;
  j["abstains"] = r.abstains;
  j["confusion"] = rows;
  return j;
}

}  // namespace detail

// Purely offline: replays the recorded verdicts through every consensus
// variant and scores them against the gold labels. Never contacts a backend.
inline ReportOutput run_report(const ReportArgs& a) {
  TranscriptFile tf = read_transcript_file(a.transcript);
  if (tf.records.empty())
    throw DataError("transcript has no records: " + a.transcript.string());
  RunConfig run_cfg = parse_config(tf.config);
  std::vector<Snippet> corpus = load_corpus(a.corpus_file, build_aliases(run_cfg));
  std::map<std::string, ComplexityClass> gold;
  for (const Snippet& s : corpus) gold[s.id] = s.gold;

  std::string missing;
  std::size_t missing_count = 0;
  for (const DebateTranscript& t : tf.records)
    if (!gold.count(t.snippet_id)) {
      ++missing_count;
      if (missing_count <= 10)
        missing += (missing.empty() ? "" : ", ") + t.snippet_id;
    }
  if (missing_count)
    throw DataError("transcript snippets missing from corpus (" +
                    std::to_string(missing_count) + "): " + missing);

  ConsensusWeights weights{run_cfg.alpha, run_cfg.beta};
  ConfusionMatrix recorded, majority, weighted_self, weighted_logit;
  for (const DebateTranscript& t : tf.records) {
    ComplexityClass g = gold.at(t.snippet_id);
    recorded.add(g, t.consensus.final_class);
    majority.add(g, majority_vote(t.updated).final_class);
    weighted_self.add(
        g, weighted_decide(t.updated, weights, ConfSource::SelfReport).final_class);
    weighted_logit.add(
        g, weighted_decide(t.updated, weights, ConfSource::Logit).final_class);
  }

  nlohmann::json variants;
  variants["recorded"] = detail::metrics_json(recorded);
  variants["majority"] = detail::metrics_json(majority);
  variants["weighted-self"] = detail::metrics_json(weighted_self);
  variants["weighted-logit"] = detail::metrics_json(weighted_logit);

  nlohmann::json report;
  report["format"] = "quorum-report-v1";
  report["snippets"] = tf.records.size();
  report["preserve_policy"] = run_cfg.preserve_policy;
  report["conf_source"] = run_cfg.conf_source;
  report["weights"] = {{"alpha", run_cfg.alpha}, {"beta", run_cfg.beta}};
  report["variants"] = variants;

  std::filesystem::path ledger_file = a.ledger.value_or(
      a.transcript.parent_path() / "ledger.json");
  if (std::filesystem::exists(ledger_file)) {
    std::ifstream in(ledger_file, std::ios::binary);
    nlohmann::json lj = nlohmann::json::parse(in, nullptr, false);
    if (lj.is_discarded())
      throw DataError("ledger is not valid JSON: " + ledger_file.string());
    report["tokens"] = lj;
  } else {
    report["tokens"] = nullptr;
  }

  std::string text;
  {
    char line[160];
    std::snprintf(line, sizeof line, "%-15s %9s %9s %12s %9s\n", "variant",
                  "accuracy", "macro-F1", "weighted-F1", "abstains");
    text += line;
    for (const char* name : {"recorded", "majority", "weighted-self",
                             "weighted-logit"}) {
      const auto& v = variants[name];
      std::snprintf(line, sizeof line, "%-15s %9.4f %9.4f %12.4f %9llu\n", name,
                    v["accuracy"].get<double>(), v["macro_f1"].get<double>(),
                    v["weighted_f1"].get<double>(),
                    static_cast<unsigned long long>(v["abstains"].get<std::uint64_t>()));
      text += line;
    }
    std::snprintf(line, sizeof line,
                  "preserve_policy: %s, conf_source: %s, alpha: %g, beta: %g, "
                  "snippets: %zu\n",
                  run_cfg.preserve_policy ? "on" : "off",
                  run_cfg.conf_source.c_str(), run_cfg.alpha, run_cfg.beta,
                  tf.records.size());
    text += line;
    text += "confusion (recorded), rows gold, columns predicted + abstain:\n";
    for (std::size_t r = 0; r < 7; ++r) {
      std::string row = "  " + std::string(canonical_token(*class_from_rank(
                                   static_cast<int>(r))));
      row.resize(14, ' ');
      for (std::uint64_t v : recorded.counts[r]) {
        std::snprintf(line, sizeof line, " %6llu",
                      static_cast<unsigned long long>(v));
        row += line;
      }
      text += row + "\n";
    }
    if (!report["tokens"].is_null()) {
      const auto& total = report["tokens"]["total"];
      std::snprintf(line, sizeof line,
                    "tokens: %lld prompt, %lld completion\n",
                    static_cast<long long>(total["prompt_tokens"].get<std::int64_t>()),
                    static_cast<long long>(
                        total["completion_tokens"].get<std::int64_t>()));
      text += line;
    }
  }

  std::filesystem::path file =
      a.out.value_or(a.transcript.parent_path() / "report.json");
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write report: " + file.string());
  out << report.dump(2) << '\n';
  return {std::move(report), std::move(text), file};
}

}  // namespace quorum
