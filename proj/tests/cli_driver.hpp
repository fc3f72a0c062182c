#pragma once

// Runs the command-line entry point in-process and captures its streams.

#include <sstream>
#include <string>
#include <vector>

#include "clot/cli.hpp"

namespace clot::fixture {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "clot");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// ingest, screen, nouns, formulate, refine and eval over one crawl file,
/// all against the seeded mock. Returns the failing stage, or empty.
inline std::string run_pipeline(const std::string& crawl, const std::string& out, bool oracle = false,
                                std::string* eval_stdout = nullptr) {
  const std::vector<std::string> common{"--out", out, "--seed", "7", "--max-inflight", "4"};
  auto stage = [&](std::vector<std::string> args) {
    args.insert(args.end(), common.begin(), common.end());
    return run_cli(std::move(args));
  };
  auto r = stage({"ingest", "--input", crawl, "--task", "I2T"});
  if (r.code) return "ingest: " + r.err;
  r = stage({"screen", "--samples", out + "/samples.jsonl"});
  if (r.code) return "screen: " + r.err;
  r = stage({"nouns", "--samples", out + "/screened.jsonl"});
  if (r.code) return "nouns: " + r.err;
  r = stage({"formulate", "--samples", out + "/screened.jsonl", "--nouns", out + "/nouns", "--variants",
             "2T1,3T1,4T1,5T2"});
  if (r.code) return "formulate: " + r.err;
  r = stage({"refine", "--samples", out + "/screened.jsonl", "--nouns", out + "/nouns", "--base",
             out + "/instructions.jsonl"});
  if (r.code) return "refine: " + r.err;
  std::vector<std::string> ev{"eval", "--questions", out, "--variants", "2T1,3T1,4T1,5T2"};
  if (oracle) ev.push_back("--oracle");
  r = stage(ev);
  if (r.code) return "eval: " + r.err;
  if (eval_stdout) *eval_stdout = r.out;
  return {};
}

}  // namespace clot::fixture
