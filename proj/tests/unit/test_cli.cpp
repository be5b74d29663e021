// Copyright 2026 The vapbc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "vapbc/config.hpp"
#include "vapbc/synth.hpp"

using namespace vapbc;
using vapbc::test::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Runs the installed binary through the shell; returns exit status and stdout+stderr.
Run shell(const std::string& command) {
  Run r;
  FILE* p = ::popen((command + " 2>&1").c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

const std::vector<std::string> kTiny = {"--d-channel", "16",  "--n-heads",        "4",  "--n-cross-layers", "1",
                                        "--ffn-mult",  "2",   "--frame-rate",     "10", "--max-context",    "100",
                                        "--n-mels",    "8",   "--crop-seconds",   "5",  "--batch-size",     "2",
                                        "--max-steps", "4",   "--val-interval",   "2"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("--help works for the tool and every subcommand") {
  const Run top = cli({"--help"});
  CHECK(top.code == 0);
  CHECK(top.out.find("synth") != std::string::npos);
  for (const std::string sub : {"synth", "pretrain", "finetune", "eval", "zeroshot", "rtf", "stream"}) {
    const Run r = cli({sub, "--help"});
    INFO(sub);
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage") != std::string::npos);
    CHECK(r.out.find("--") != std::string::npos);
  }
  const Run bin = shell(std::string(VAPBC_CLI_PATH) + " eval --help");
  CHECK(bin.code == 0);
  CHECK(bin.out.find("--ckpt") != std::string::npos);
}

TEST_CASE("unknown subcommands and bad flags exit 1") {
  const Run r = cli({"train"});
  CHECK(r.code == 1);
  CHECK(r.err.find("UnknownSubcommand") != std::string::npos);
  CHECK(cli({}).code == 1);
  CHECK(cli({"eval", "--no-such-flag"}).code == 1);
  CHECK(cli({"synth"}).code == 1);  // --out is required
}

TEST_CASE("eval with a missing checkpoint exits 1 and names the path") {
  TempDir dir("cli_missing");
  const std::string ckpt = (dir / "missing.bin").string();
  const Run r = cli({"eval", "--ckpt", ckpt, "--corpus", dir.path().string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find(ckpt) != std::string::npos);
  const Run bin = shell(std::string(VAPBC_CLI_PATH) + " eval --ckpt " + ckpt + " --corpus " + dir.path().string() +
                        " --out " + (dir / "o").string());
  CHECK(bin.code == 1);
  CHECK(bin.out.find(ckpt) != std::string::npos);
}

TEST_CASE("config precedence: flag over file over default") {
  ConfigResolver r(nlohmann::json{{"learning_rate", 1e-4}, {"d_channel", 256}, {"interior", "mask"}});
  TempDir dir("cli_cfg");
  std::ofstream(dir / "c.json") << R"({"learning_rate": 0.002, "d_channel": 64})";
  r.load_file(dir / "c.json");
  r.set_flag("learning_rate", 0.01);
  CHECK(r.get<double>("learning_rate") == 0.01);
  CHECK(r.source("learning_rate") == "flag");
  CHECK(r.get<int>("d_channel") == 64);
  CHECK(r.source("d_channel") == "file");
  CHECK(r.get<std::string>("interior") == "mask");
  CHECK(r.source("interior") == "default");
  CHECK(test::error_code_of([&] { r.set_flag("nonsense", 1); }) == Errc::ConfigError);
  CHECK(test::error_code_of([&] { r.get<int>("interior"); }) == Errc::ConfigError);
  std::ofstream(dir / "bad.json") << R"({"d_channel": {"x": 1}})";
  CHECK(test::error_code_of([&] { r.load_file(dir / "bad.json"); }) == Errc::ConfigError);
  std::ofstream(dir / "unknown.json") << R"({"colour": 1})";
  CHECK(test::error_code_of([&] { r.load_file(dir / "unknown.json"); }) == Errc::ConfigError);
}

TEST_CASE("synth resolves flags over the config file") {
  TempDir dir("cli_synth");
  std::ofstream(dir / "c.json")
      << R"({"session_seconds": 30, "train_sessions": 2, "val_sessions": 1, "test_sessions": 1, "seed": 5})";
  const Run r = cli({"synth", "--config", (dir / "c.json").string(), "--seed", "9", "--out", (dir / "corpus").string()});
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["sessions"] == 4);
  const auto manifest = read_json(dir / "corpus" / "run_manifest.json");
  CHECK(manifest["config"]["seed"] == 9);
  CHECK(manifest["config"]["session_seconds"] == 30.0);
  CHECK(manifest["config"]["f0_min"] == SynthConfig{}.f0_min);
  CHECK(manifest["inputs"].size() == 1);
  CHECK(cli({"synth", "--session-seconds", "2", "--out", (dir / "x").string()}).code == 1);
}

TEST_CASE("tiny pipeline: synth, pretrain, finetune, eval, zeroshot, rtf, stream") {
  TempDir dir("cli_pipe");
  const std::string corpus = (dir / "corpus").string();
  REQUIRE(cli({"synth", "--session-seconds", "40", "--train-sessions", "2", "--val-sessions", "1",
               "--test-sessions", "1", "--out", corpus})
              .code == 0);
  const std::string digest = corpus_digest(corpus);

  const Run pre = cli(with({"pretrain", "--corpus", corpus, "--out", (dir / "pre").string(), "--learning-rate",
                            "0.001"},
                           kTiny));
  INFO(pre.err);
  REQUIRE(pre.code == 0);
  const auto pm = read_json(dir / "pre" / "run_manifest.json");
  CHECK(pm["config"]["learning_rate"] == 0.001);
  CHECK(pm["config"]["train"]["stage"] == "pretrain");
  CHECK(std::filesystem::exists(dir / "pre" / "train_log.jsonl"));

  const std::string pre_ckpt = (dir / "pre" / "model.ckpt").string();
  for (const std::string task : {"timing", "type"}) {
    const std::string out = (dir / ("ft_" + task)).string();
    const Run ft = cli(with({"finetune", "--corpus", corpus, "--out", out, "--method", "mt_pt", "--task", task,
                             "--pretrained", pre_ckpt},
                            kTiny));
    INFO(ft.err);
    REQUIRE(ft.code == 0);
    const Run ev = cli({"eval", "--ckpt", out + "/model.ckpt", "--corpus", corpus, "--out", out + "/eval", "--task",
                        task, "--manipulation", "none", "--manipulation", "intensity-flat"});
    INFO(ev.err);
    REQUIRE(ev.code == 0);
    CHECK(std::filesystem::exists(out + "/eval/eval_table.txt"));
    std::ifstream jl(out + "/eval/eval.jsonl");
    std::string line;
    int rows = 0;
    while (std::getline(jl, line)) rows += !line.empty();
    CHECK(rows >= 3);  // always-positive reference plus two manipulations
  }
  // A type-task checkpoint cannot be scored on the timing task.
  CHECK(cli({"eval", "--ckpt", (dir / "ft_type" / "model.ckpt").string(), "--corpus", corpus, "--out",
             (dir / "bad").string(), "--task", "timing"})
            .code == 1);
  CHECK(cli(with({"finetune", "--corpus", corpus, "--out", (dir / "nopt").string(), "--method", "mt_pt"}, kTiny))
            .code == 1);

  const Run zs = cli({"zeroshot", "--ckpt", pre_ckpt, "--corpus", corpus, "--out", (dir / "zs").string()});
  INFO(zs.err);
  CHECK(zs.code == 0);
  CHECK(std::filesystem::exists(dir / "zs" / "zeroshot.jsonl"));

  const Run rtf = cli({"rtf", "--ckpt", (dir / "ft_timing" / "model.ckpt").string(), "--out", (dir / "rtf").string(),
                       "--context", "1", "--context", "5", "--runs", "1", "--seconds", "60"});
  INFO(rtf.err);
  CHECK(rtf.code == 0);

  const Run stream = shell("printf '%s\\n' '{\"type\":\"reset\"}' '{\"type\":\"audio\",\"pcm0\":[0],\"pcm1\":[0,1],"
                           "\"sample_rate\":16000}' | " +
                           std::string(VAPBC_CLI_PATH) + " stream --stdio --ckpt " +
                           (dir / "ft_timing" / "model.ckpt").string());
  CHECK(stream.code == 0);
  CHECK(stream.out.find(R"({"type":"ok"})") != std::string::npos);
  CHECK(stream.out.find("length_mismatch") != std::string::npos);

  // Nothing above wrote into the corpus.
  CHECK(corpus_digest(corpus) == digest);
}
