#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "quorum/commands.hpp"
#include "support/e2e.hpp"
#include "support/tmpdir.hpp"

using namespace quorum;
using testsupport::E2EFixture;
using testsupport::TempDir;
using testsupport::write_e2e_fixture;

namespace {

ComplexityClass gold_of(const std::string& snippet_id) {
  auto cut = snippet_id.rfind('-');
  auto cls = class_from_token(snippet_id.substr(0, cut));
  REQUIRE(cls.has_value());
  return *cls;
}

const std::map<ComplexityClass, ComplexityClass> kExpectedFinal{
    {ComplexityClass::Constant, ComplexityClass::Constant},
    {ComplexityClass::LogN, ComplexityClass::LogN},
    {ComplexityClass::Linear, ComplexityClass::Linear},
    {ComplexityClass::NLogN, ComplexityClass::NLogN},
    {ComplexityClass::Quadratic, ComplexityClass::Linear},
    {ComplexityClass::Cubic, ComplexityClass::Linear},
    {ComplexityClass::Exponential, ComplexityClass::Linear},
};

nlohmann::json read_json(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("split draws one snippet per class and freezes the plan") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  SplitOutput out = run_split({fx.config, fx.corpus, fx.test_ids, std::nullopt});

  REQUIRE(out.file == fx.out_dir / "plan.json");
  REQUIRE(out.plan.per_class_expertise_count == 1);
  REQUIRE(out.plan.expertise_ids.size() == 7);
  REQUIRE(out.plan.test_ids.size() == 14);
  for (const std::string& id : out.plan.expertise_ids)
    REQUIRE(out.plan.test_ids.count(id) == 0);

  nlohmann::json plan = read_json(out.file);
  REQUIRE(plan["format"] == "quorum-split-v1");
  REQUIRE(plan["fraction"] == 0.25);
  REQUIRE(plan["seed"] == 123);
  REQUIRE_FALSE(plan["config"].contains("output_dir"));

  SplitFile reread = read_split_plan(out.file);
  REQUIRE(reread.plan.expertise_ids == out.plan.expertise_ids);
  REQUIRE(reread.plan.test_ids == out.plan.test_ids);

  std::string bytes = testsupport::read_file(out.file);
  SplitOutput second = run_split({fx.config, fx.corpus, fx.test_ids, std::nullopt});
  REQUIRE(testsupport::read_file(second.file) == bytes);
}

TEST_CASE("assign reproduces the hand-computed panel and charges the ledger") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  SplitOutput split = run_split({fx.config, fx.corpus, fx.test_ids, std::nullopt});
  AssignOutput out = run_assign({fx.config, fx.corpus, split.file, std::nullopt});

  REQUIRE(out.warnings.empty());
  for (std::size_t r = 0; r < 7; ++r)
    REQUIRE(out.panel.assignment[r] == fx.expected_panel[r]);
  REQUIRE(out.panel.ties.empty());

  const auto& alpha = out.table.scores.at("b-alpha");
  const auto& beta = out.table.scores.at("b-beta");
  const auto& gamma = out.table.scores.at("b-gamma");
  REQUIRE(alpha[0] == 1.0);
  REQUIRE(alpha[1] == 1.0);
  REQUIRE(alpha[2] == Catch::Approx(1.0 / 3).margin(1e-12));
  for (std::size_t r = 3; r < 7; ++r) REQUIRE(alpha[r] == 0.0);
  REQUIRE(beta[0] == Catch::Approx(0.4).margin(1e-12));
  REQUIRE(beta[3] == 1.0);
  REQUIRE(beta[4] == 1.0);
  REQUIRE(beta[5] == 1.0);
  REQUIRE(beta[6] == 0.0);
  REQUIRE(gamma[3] == Catch::Approx(2.0 / 7).margin(1e-12));
  REQUIRE(gamma[6] == 1.0);

  REQUIRE(out.manifest == fx.out_dir / "panel.json");
  PanelManifest manifest = read_panel_manifest(out.manifest);
  REQUIRE(manifest.panel.assignment == out.panel.assignment);

  // 3 backends x 7 role passes x 7 snippets, 7 prompt + 6 completion tokens each
  nlohmann::json ledger = read_json(out.ledger_file);
  REQUIRE(ledger["total"]["prompt_tokens"] == 147 * 7);
  REQUIRE(ledger["total"]["completion_tokens"] == 147 * 6);
  REQUIRE(ledger["completions_served"] == 147);
  REQUIRE(ledger["transport_calls"]["b-alpha"] == 49);
  REQUIRE(ledger["transport_calls"]["b-beta"] == 49);
  REQUIRE(ledger["transport_calls"]["b-gamma"] == 49);
  REQUIRE(ledger["per_phase"]["scoring"]["prompt_tokens"] == 147 * 7);
}

TEST_CASE("debate runs the panel, preserves in-class experts, and adds up") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  SplitOutput split = run_split({fx.config, fx.corpus, fx.test_ids, std::nullopt});
  AssignOutput assign = run_assign({fx.config, fx.corpus, split.file, std::nullopt});

  DebateArgs args{fx.config,    fx.corpus,    fx.test_ids, assign.manifest,
                  std::nullopt, std::nullopt, std::nullopt};
  DebateOutput out = run_debate(args);
  REQUIRE(out.pipeline.transcripts.size() == 14);
  REQUIRE(out.pipeline.resumed == 0);
  REQUIRE(out.pipeline.errors.empty());
  REQUIRE(out.transcript == fx.out_dir / "transcript.jsonl");

  TranscriptFile tf = read_transcript_file(out.transcript);
  REQUIRE(tf.records.size() == 14);
  REQUIRE(tf.records[0].snippet_id == "constant-4");
  for (const DebateTranscript& t : tf.records) {
    ComplexityClass gold = gold_of(t.snippet_id);
    INFO(t.snippet_id);
    REQUIRE(t.consensus.final_class == kExpectedFinal.at(gold));
    for (const Verdict& v : t.updated) {
      REQUIRE(v.predicted.has_value());
      REQUIRE(v.logit_conf == 1.0);
      REQUIRE(v.self_conf == 1.0);
      REQUIRE_FALSE(v.logit_conf_fallback);
      REQUIRE(v.usage.prompt_tokens == 7);
      REQUIRE(v.usage.completion_tokens == 6);
    }
    if (gold == ComplexityClass::Quadratic || gold == ComplexityClass::Cubic) {
      REQUIRE(t.consensus.tie_path == "tie-self-predicted-lowest-rank");
      REQUIRE(t.consensus.table.score[2] == 4.0);
      REQUIRE(t.consensus.table.score[rank(gold)] == 4.0);
    } else {
      REQUIRE(t.consensus.tie_path == "unique-max");
    }
  }

  // constant snippet: only the constant expert is preserved
  const DebateTranscript& constant = tf.records[0];
  REQUIRE(constant.events[0] == PolicyEvent::PreservedByPolicy);
  for (std::size_t r = 1; r < 7; ++r)
    REQUIRE(constant.events[r] == PolicyEvent::KeptVoluntarily);
  REQUIRE(constant.consensus.table.score[0] == 7.0);
  REQUIRE(constant.consensus.table.score[3] == 1.0);

  // nlogn snippet: the linear expert's fallback answer is its own class too
  const DebateTranscript& nlogn = tf.records[6];
  REQUIRE(nlogn.snippet_id == "nlogn-4");
  REQUIRE(nlogn.events[2] == PolicyEvent::PreservedByPolicy);
  REQUIRE(nlogn.events[3] == PolicyEvent::PreservedByPolicy);
  REQUIRE(nlogn.events[0] == PolicyEvent::KeptVoluntarily);

  // 98 initial calls plus 2x(6+6+6+5+5+5+5) debate calls
  nlohmann::json ledger = read_json(out.ledger_file);
  REQUIRE(ledger["per_phase"]["initial"]["prompt_tokens"] == 98 * 7);
  REQUIRE(ledger["per_phase"]["initial"]["completion_tokens"] == 98 * 6);
  REQUIRE(ledger["per_phase"]["debate"]["prompt_tokens"] == 76 * 7);
  REQUIRE(ledger["per_phase"]["debate"]["completion_tokens"] == 76 * 6);
  REQUIRE(ledger["total"]["prompt_tokens"] == 174 * 7);
  REQUIRE(ledger["completions_served"] == 174);

  SECTION("a second invocation resumes everything") {
    std::string bytes = testsupport::read_file(out.transcript);
    DebateOutput again = run_debate(args);
    REQUIRE(again.pipeline.resumed == 14);
    REQUIRE(again.pipeline.transcripts.size() == 14);
    REQUIRE(again.pipeline.errors.empty());
    REQUIRE(testsupport::read_file(out.transcript) == bytes);
    nlohmann::json idle = read_json(again.ledger_file);
    REQUIRE(idle["completions_served"] == 0);
    REQUIRE(idle["total"]["prompt_tokens"] == 0);
  }

  SECTION("switching the policy off revisits every expert via the cache") {
    DebateArgs open = args;
    open.preserve_override = false;
    open.transcript_out = fx.out_dir / "transcript-open.jsonl";
    open.ledger_out = fx.out_dir / "ledger-open.json";
    DebateOutput out2 = run_debate(open);
    REQUIRE(out2.pipeline.transcripts.size() == 14);
    REQUIRE(out2.pipeline.errors.empty());

    TranscriptFile open_tf = read_transcript_file(out2.transcript);
    for (const DebateTranscript& t : open_tf.records) {
      for (PolicyEvent e : t.events) REQUIRE(e == PolicyEvent::KeptVoluntarily);
      REQUIRE(t.consensus.final_class == kExpectedFinal.at(gold_of(t.snippet_id)));
    }

    // initial round and 76 of the debate prompts replay from the cache;
    // only the 22 newly-liberated expert calls reach a transport
    nlohmann::json ledger2 = read_json(out2.ledger_file);
    REQUIRE(ledger2["completions_served"] == 98 + 98);
    REQUIRE(ledger2["total"]["prompt_tokens"] == 22 * 7);
    REQUIRE(ledger2["total"]["completion_tokens"] == 22 * 6);
    REQUIRE_FALSE(ledger2["per_phase"].contains("initial"));
  }

  SECTION("a policy flip cannot be written into the same transcript") {
    DebateArgs open = args;
    open.preserve_override = false;
    REQUIRE_THROWS_WITH(run_debate(open),
                        Catch::Matchers::ContainsSubstring(
                            "different config; refusing to mix runs"));
  }
}

TEST_CASE("tampering with the split plan is caught on read") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  SplitOutput split = run_split({fx.config, fx.corpus, fx.test_ids, std::nullopt});

  nlohmann::json doc = read_json(split.file);
  std::string moved = doc["test_ids"][0].get<std::string>();
  doc["expertise_ids"].push_back(moved);
  std::ofstream(split.file, std::ios::trunc | std::ios::binary) << doc.dump(2) << '\n';

  try {
    run_assign({fx.config, fx.corpus, split.file, std::nullopt});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    REQUIRE(std::string(e.what()).find("split plan is not disjoint") !=
            std::string::npos);
    REQUIRE(std::string(e.what()).find(moved) != std::string::npos);
  }
}

TEST_CASE("the binary maps failure classes to distinct exit codes") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  std::string output;

  REQUIRE(testsupport::run_cli("", &output) == 1);
  REQUIRE(testsupport::run_cli("--help", &output) == 0);
  REQUIRE(output.find("split") != std::string::npos);

  REQUIRE(testsupport::run_cli("split --config " +
                                   (tmp.path() / "absent.json").string() +
                                   " --corpus " + fx.corpus.string() +
                                   " --test-ids " + fx.test_ids.string(),
                               &output) == 2);
  REQUIRE(output.find("cannot open config file") != std::string::npos);

  REQUIRE(testsupport::run_cli(
              "debate --config /dev/null --corpus /dev/null --test-ids /dev/null "
              "--panel /dev/null --preserve-policy --no-preserve-policy",
              &output) == 1);
  REQUIRE(output.find("mutually exclusive") != std::string::npos);

  SECTION("a leftover lock refuses a second run") {
    std::filesystem::create_directories(fx.out_dir);
    std::ofstream(fx.out_dir / ".quorum-lock") << "12345\n";
    REQUIRE(testsupport::run_cli("split --config " + fx.config.string() +
                                     " --corpus " + fx.corpus.string() +
                                     " --test-ids " + fx.test_ids.string(),
                                 &output) == 2);
    REQUIRE(output.find("locked by another run") != std::string::npos);
  }

  SECTION("an unreachable endpoint is a transport failure") {
    auto dir = tmp.path() / "unreachable";
    std::filesystem::create_directories(dir);
    nlohmann::json cfg;
    cfg["backends"] = nlohmann::json::array(
        {nlohmann::json{{"name", "remote"},
                        {"kind", "openai"},
                        {"endpoint", "http://127.0.0.1:9"},
                        {"model", "m"}}});
    cfg["expertise_fraction"] = 0.25;
    cfg["max_attempts"] = 1;
    cfg["backoff_ms"] = 0;
    cfg["output_dir"] = (dir / "out").string();
    auto config2 = dir / "config.json";
    std::ofstream(config2) << cfg.dump(2) << '\n';
    SplitOutput split = run_split({config2, fx.corpus, fx.test_ids, std::nullopt});
    REQUIRE(testsupport::run_cli("assign --config " + config2.string() +
                                     " --corpus " + fx.corpus.string() +
                                     " --split " + split.file.string(),
                                 &output) == 3);
    REQUIRE(output.find("every backend call failed during scoring") !=
            std::string::npos);
  }
}

TEST_CASE("the full pipeline runs through the CLI binary") {
  TempDir tmp;
  E2EFixture fx = write_e2e_fixture(tmp.path() / "work");
  std::string output;

  REQUIRE(testsupport::run_cli("split --config " + fx.config.string() +
                                   " --corpus " + fx.corpus.string() +
                                   " --test-ids " + fx.test_ids.string(),
                               &output) == 0);
  REQUIRE(output.find("(7 expertise, 14 test, 1 per class)") != std::string::npos);

  REQUIRE(testsupport::run_cli(
              "assign --config " + fx.config.string() + " --corpus " +
                  fx.corpus.string() + " --split " +
                  (fx.out_dir / "plan.json").string(),
              &output) == 0);
  REQUIRE(output.find("exponential  b-gamma") != std::string::npos);
  REQUIRE(output.find("b-alpha") != std::string::npos);

  REQUIRE(testsupport::run_cli("debate --config " + fx.config.string() +
                                   " --corpus " + fx.corpus.string() +
                                   " --test-ids " + fx.test_ids.string() +
                                   " --panel " + (fx.out_dir / "panel.json").string(),
                               &output) == 0);
  REQUIRE(output.find("(14 snippets, 0 resumed, 0 failed)") != std::string::npos);

  REQUIRE(testsupport::run_cli(
              "report --transcript " + (fx.out_dir / "transcript.jsonl").string() +
                  " --corpus " + fx.corpus.string(),
              &output) == 0);
  REQUIRE(output.find("weighted-logit") != std::string::npos);
  REQUIRE(output.find("0.5714") != std::string::npos);
  REQUIRE(output.find("report: ") != std::string::npos);

  nlohmann::json report = read_json(fx.out_dir / "report.json");
  REQUIRE(report["snippets"] == 14);
  REQUIRE(report["variants"]["recorded"]["accuracy"] ==
          Catch::Approx(8.0 / 14).margin(1e-12));
  REQUIRE(report["tokens"]["total"]["prompt_tokens"] == 174 * 7);
}
