#pragma once

// Shared end-to-end fixture: a 42-snippet corpus (six per class, marker
// comments in the source), three scripted backends with complementary
// strengths, and a run config wiring them together. Every reply carries
// aligned zero logprobs so logit confidences come out exactly 1.0 and the
// consensus arithmetic stays in small integers.
//
// Hand-derived expectations, frozen here:
//   expertise split: fraction 0.25 of 28 non-test snippets -> 1 per class
//   scoring F1 rows over that split (one snippet per class):
//     b-alpha  [1, 1, 1/3, 0, 0, 0, 0]   (right on ranks 0-2, else "linear")
//     b-beta   [2/5, 0, 0, 1, 1, 1, 0]   (right on ranks 3-5, else "constant")
//     b-gamma  [0, 0, 0, 2/7, 0, 0, 1]   (right on rank 6, else "nlogn")
//   panel: alpha alpha alpha beta beta beta gamma, tie-free everywhere
//   debate calls with the preservation policy on, per snippet by gold class:
//     constant/logn/linear 6, nlogn/quadratic/cubic/exponential 5
//   consensus finals by gold class:
//     constant->constant, logn->logn, linear->linear, nlogn->nlogn,
//     quadratic->linear and cubic->linear (exact score tie, both classes
//     self-predicted, lower rank wins), exponential->linear

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "json.hpp"
#include "quorum/taxonomy.hpp"

namespace testsupport {

struct E2EFixture {
  std::filesystem::path dir;
  std::filesystem::path config;
  std::filesystem::path corpus;
  std::filesystem::path test_ids;
  std::filesystem::path out_dir;
  std::array<std::string, 7> expected_panel;
};

inline nlohmann::json e2e_reply(const std::string& label) {
  nlohmann::json reply;
  reply["text"] = "COMPLEXITY: " + label + "\nCONFIDENCE: 1\nREASONING: ok";
  reply["logprobs"] = nlohmann::json::array(
      {nlohmann::json::array({"COMPLEXITY:", 0.0}),
       nlohmann::json::array({" " + label, 0.0}),
       nlohmann::json::array({"\nCONFIDENCE:", 0.0}),
       nlohmann::json::array({" 1", 0.0}),
       nlohmann::json::array({"\nREASONING:", 0.0}),
       nlohmann::json::array({" ok", 0.0})});
  reply["prompt_tokens"] = 7;
  return reply;
}

// One rule per class marker; correct within `correct_ranks`, otherwise the
// fallback label.
inline nlohmann::json e2e_script(const std::set<int>& correct_ranks,
                                 const std::string& fallback_label) {
  nlohmann::json rules = nlohmann::json::array();
  for (quorum::ComplexityClass c : quorum::all_classes()) {
    std::string token(quorum::canonical_token(c));
    bool right = correct_ranks.count(quorum::rank(c)) > 0;
    nlohmann::json rule = e2e_reply(right ? token : fallback_label);
    rule["contains"] = nlohmann::json::array({"# CLASS:" + token + "\n"});
    rules.push_back(std::move(rule));
  }
  return nlohmann::json{{"rules", std::move(rules)}};
}

inline E2EFixture write_e2e_fixture(const std::filesystem::path& dir,
                                    std::uint64_t seed = 123) {
  std::filesystem::create_directories(dir);
  E2EFixture fx;
  fx.dir = dir;
  fx.out_dir = dir / "out";
  fx.corpus = dir / "corpus.jsonl";
  fx.test_ids = dir / "test_ids.txt";
  fx.config = dir / "config.json";
  fx.expected_panel = {"b-alpha", "b-alpha", "b-alpha", "b-beta",
                       "b-beta",  "b-beta",  "b-gamma"};

  {
    std::ofstream corpus(fx.corpus, std::ios::binary);
    std::ofstream ids(fx.test_ids, std::ios::binary);
    for (quorum::ComplexityClass c : quorum::all_classes()) {
      std::string token(quorum::canonical_token(c));
      for (int i = 0; i < 6; ++i) {
        nlohmann::json rec;
        rec["id"] = token + "-" + std::to_string(i);
        rec["language"] = "python";
        rec["src"] =
            "# CLASS:" + token + "\n# snippet " + std::to_string(i) + "\npass";
        rec["complexity"] = token;
        corpus << rec.dump() << '\n';
        if (i >= 4) ids << rec["id"].get<std::string>() << '\n';
      }
    }
  }

  auto write_json = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream out(dir / name, std::ios::binary);
    out << j.dump(2) << '\n';
  };
  write_json("b-alpha.json", e2e_script({0, 1, 2}, "linear"));
  write_json("b-beta.json", e2e_script({3, 4, 5}, "constant"));
  write_json("b-gamma.json", e2e_script({6}, "nlogn"));

  nlohmann::json cfg;
  cfg["backends"] = nlohmann::json::array(
      {nlohmann::json{{"name", "b-alpha"}, {"kind", "scripted"}, {"script", "b-alpha.json"}},
       nlohmann::json{{"name", "b-beta"}, {"kind", "scripted"}, {"script", "b-beta.json"}},
       nlohmann::json{{"name", "b-gamma"}, {"kind", "scripted"}, {"script", "b-gamma.json"}}});
  cfg["expertise_fraction"] = 0.25;
  cfg["seed"] = seed;
  cfg["parallelism"] = 2;
  cfg["max_attempts"] = 1;
  cfg["backoff_ms"] = 0;
  cfg["output_dir"] = fx.out_dir.string();
  write_json("config.json", cfg);
  return fx;
}

// Runs a CLI binary with sh-style arguments, returns the exit code and
// optionally captures combined stdout+stderr.
inline int run_cli_at(const std::string& binary, const std::string& args,
                      std::string* output = nullptr) {
  std::string cmd = binary + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string captured;
  char buf[4096];
  std::size_t n;
  while ((n = ::fread(buf, 1, sizeof buf, pipe)) > 0) captured.append(buf, n);
  int status = ::pclose(pipe);
  if (output) *output = std::move(captured);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
}

#ifdef QUORUM_CLI_PATH
inline int run_cli(const std::string& args, std::string* output = nullptr) {
  return run_cli_at(QUORUM_CLI_PATH, args, output);
}
#endif

}  // namespace testsupport
