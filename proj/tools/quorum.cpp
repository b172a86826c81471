// Command line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 transport.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "quorum/commands.hpp"

namespace {

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expert-panel time complexity classification"};
  app.require_subcommand(1);

  std::string config_file, corpus_file, test_id_file, split_file, panel_file;
  std::string transcript_file, ledger_file, out_file, output_dir;
  bool preserve = false, no_preserve = false;

  CLI::App* split = app.add_subcommand(
      "split", "draw the expertise sample and write the split plan");
  split->add_option("--config", config_file, "run config JSON")->required();
  split->add_option("--corpus", corpus_file, "corpus JSONL")->required();
  split->add_option("--test-ids", test_id_file, "file of held-out snippet ids")
      ->required();
  split->add_option("--out", out_file, "plan path (default <output_dir>/plan.json)");

  CLI::App* assign = app.add_subcommand(
      "assign", "score every backend per class and write the expert panel");
  assign->add_option("--config", config_file, "run config JSON")->required();
  assign->add_option("--corpus", corpus_file, "corpus JSONL")->required();
  assign->add_option("--split", split_file, "split plan from the split command")
      ->required();
  assign->add_option("--out", out_file, "panel path (default <output_dir>/panel.json)");

  CLI::App* debate = app.add_subcommand(
      "debate", "run the two phase debate over the held-out snippets");
  debate->add_option("--config", config_file, "run config JSON")->required();
  debate->add_option("--corpus", corpus_file, "corpus JSONL")->required();
  debate->add_option("--test-ids", test_id_file, "file of held-out snippet ids")
      ->required();
  debate->add_option("--panel", panel_file, "panel manifest from the assign command")
      ->required();
  debate->add_option("--transcript", transcript_file,
                     "transcript path (default <output_dir>/transcript.jsonl)");
  debate->add_option("--ledger", ledger_file,
                     "token ledger path (default <output_dir>/ledger.json)");
  debate->add_flag("--preserve-policy", preserve,
                   "keep self-class verdicts without a second call");
  debate->add_flag("--no-preserve-policy", no_preserve,
                   "always make the second call");

  CLI::App* report = app.add_subcommand(
      "report", "score a finished transcript against the corpus labels");
  report->add_option("--transcript", transcript_file, "debate transcript")
      ->required();
  report->add_option("--corpus", corpus_file, "corpus JSONL")->required();
  report->add_option("--ledger", ledger_file,
                     "token ledger (default sibling ledger.json)");
  report->add_option("--out", out_file, "report path (default sibling report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (split->parsed()) {
      quorum::SplitArgs args{config_file, corpus_file, test_id_file,
                             opt_path(out_file)};
      quorum::SplitOutput out = quorum::run_split(args);
      std::printf("plan: %s (%zu expertise, %zu test, %zu per class)\n",
                  out.file.string().c_str(), out.plan.expertise_ids.size(),
                  out.plan.test_ids.size(), out.plan.per_class_expertise_count);
    } else if (assign->parsed()) {
      quorum::AssignArgs args{config_file, corpus_file, split_file,
                              opt_path(out_file)};
      quorum::AssignOutput out = quorum::run_assign(args);
      for (const std::string& w : out.warnings)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
      for (quorum::ComplexityClass c : quorum::all_classes()) {
        auto i = static_cast<std::size_t>(quorum::rank(c));
        std::printf("%-12s %s\n", std::string(quorum::canonical_token(c)).c_str(),
                    out.panel.assignment[i].c_str());
      }
      std::printf("panel: %s\n", out.manifest.string().c_str());
    } else if (debate->parsed()) {
      if (preserve && no_preserve)
        throw quorum::UsageError(
            "--preserve-policy and --no-preserve-policy are mutually exclusive");
      std::optional<bool> preserve_override;
      if (preserve) preserve_override = true;
      if (no_preserve) preserve_override = false;
      quorum::DebateArgs args{config_file,
                              corpus_file,
                              test_id_file,
                              panel_file,
                              opt_path(transcript_file),
                              opt_path(ledger_file),
                              preserve_override};
      quorum::DebateOutput out = quorum::run_debate(args);
      for (const quorum::PipelineError& e : out.pipeline.errors)
        std::fprintf(stderr, "error: snippet %s: %s\n", e.snippet_id.c_str(),
                     e.message.c_str());
      std::printf("transcript: %s (%zu snippets, %zu resumed, %zu failed)\n",
                  out.transcript.string().c_str(), out.pipeline.transcripts.size(),
                  out.pipeline.resumed, out.pipeline.errors.size());
      std::printf("ledger: %s\n", out.ledger_file.string().c_str());
    } else if (report->parsed()) {
      quorum::ReportArgs args{transcript_file, corpus_file, opt_path(out_file),
                              opt_path(ledger_file)};
      quorum::ReportOutput out = quorum::run_report(args);
      std::fputs(out.text.c_str(), stdout);
      std::printf("report: %s\n", out.file.string().c_str());
    }
  } catch (const quorum::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const quorum::TransportError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const quorum::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
