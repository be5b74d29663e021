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

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "vapbc/config.hpp"
#include "vapbc/error.hpp"
#include "vapbc/evaluation.hpp"
#include "vapbc/protocol.hpp"
#include "vapbc/streaming.hpp"
#include "vapbc/synth.hpp"
#include "vapbc/training.hpp"

namespace vapbc {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Config keys exposed as --flags, with a one-line help each.
struct KeySpec {
  std::string key;
  std::string help;
};

const std::vector<KeySpec> kModelKeys = {
    {"encoder", "reference | external"},
    {"d_channel", "per-channel model width"},
    {"n_channel_layers", "channel-wise Transformer layers"},
    {"n_cross_layers", "cross-attention layers"},
    {"n_heads", "attention heads"},
    {"ffn_mult", "feed-forward expansion"},
    {"dropout", "residual dropout"},
    {"frame_rate", "frames per second (10 or 50)"},
    {"max_context", "longest Transformer input in frames"},
    {"n_mels", "log-mel bands"},
};

const std::vector<KeySpec> kTrainKeys = {
    {"alpha", "VAP loss weight"},
    {"beta", "VAD loss weight"},
    {"gamma", "backchannel loss weight"},
    {"positive_weight", "weight of backchannel frames in the BC loss"},
    {"learning_rate", "Adam learning rate"},
    {"crop_seconds", "training window length"},
    {"batch_size", "windows per step"},
    {"max_steps", "optimiser steps"},
    {"val_interval", "steps between validations"},
    {"patience", "validations without improvement before stopping"},
    {"grad_clip", "global gradient norm clip (0 = off)"},
    {"seed", "random seed"},
    {"lead_s", "labelled lead before a backchannel onset"},
    {"interior", "mask | negative: frames inside backchannels"},
};

json model_defaults() {
  json m = ModelConfig{};
  json out;
  for (const auto& k : kModelKeys) out[k.key] = m.at(k.key);
  return out;
}

json train_defaults() {
  json t = TrainConfig{};
  json out;
  for (const auto& k : kTrainKeys) {
    if (t.contains(k.key)) out[k.key] = t.at(k.key);
  }
  out["lead_s"] = 0.5;
  out["interior"] = "mask";
  return out;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

// Registers one string-valued flag per key; values are parsed as JSON
// scalars, falling back to plain strings.
struct ConfigFlags {
  std::map<std::string, std::string> raw;
  std::string file;

  void add(CLI::App* app, const std::vector<KeySpec>& keys) {
    for (const auto& k : keys) app->add_option(flag_name(k.key), raw[k.key], k.help);
  }
  void add_file(CLI::App* app) { app->add_option("--config", file, "flat JSON configuration file"); }

  void apply(CLI::App* app, ConfigResolver& r) const {
    if (!file.empty()) r.load_file(file);
    for (const auto& [key, value] : raw) {
      if (app->count(flag_name(key)) == 0) continue;
      json v;
      try {
        v = json::parse(value);
        if (v.is_object() || v.is_array()) v = value;
      } catch (const json::exception&) {
        v = value;
      }
      r.set_flag(key, v);
    }
  }
};

ModelConfig model_config_from(const ConfigResolver& r) {
  json j = json(ModelConfig{});
  for (const auto& k : kModelKeys) j[k.key] = r.get<json>(k.key);
  j["d_concat"] = 2 * r.get<int>("d_channel");
  j["seed"] = r.get<std::uint64_t>("seed");
  ModelConfig c = j.get<ModelConfig>();
  c.validate();
  return c;
}

TrainConfig train_config_from(const ConfigResolver& r, Stage stage, Method method) {
  TrainConfig c;
  c.stage = stage;
  c.method = method;
  c.apply_method_defaults();
  json j = c;
  for (const auto& k : kTrainKeys) {
    if (!j.contains(k.key)) continue;
    // Method-implied loss weights unless set explicitly.
    if ((k.key == "alpha" || k.key == "beta") && r.source(k.key) == "default") continue;
    j[k.key] = r.get<json>(k.key);
  }
  try {
    c = j.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("bad training configuration: ") + e.what());
  }
  c.validate();
  return c;
}

InteriorPolicy parse_interior(const std::string& s) {
  if (s == "mask") return InteriorPolicy::Mask;
  if (s == "negative") return InteriorPolicy::Negative;
  throw Error(Errc::ConfigError, "interior must be mask or negative, got '" + s + "'");
}

DatasetOptions dataset_options(const ModelConfig& mc, Task task, double lead_s, InteriorPolicy interior) {
  DatasetOptions o;
  o.frame_rate = mc.frame_rate;
  o.n_mels = mc.n_mels;
  o.encoder = mc.encoder;
  o.labels.task = task;
  o.labels.lead_s = lead_s;
  o.labels.interior = interior;
  return o;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir.string() + ": " + ec.message());
}

RuntimeModel open_checkpoint(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) throw Error(Errc::CheckpointMissing, "checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

std::string dataset_line(const char* name, const Dataset& d) {
  std::ostringstream s;
  s << name << ": " << d.stats.sessions << " sessions, " << d.stats.frames << " frames, positive rate "
    << std::fixed << std::setprecision(4) << d.stats.positive_rate;
  return s.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  ConfigFlags flags;
  std::string out;
};

int cmd_synth(CLI::App* app, SynthArgs& a, std::ostream& out, std::ostream& err) {
  ConfigResolver r(json(SynthConfig{}));
  a.flags.apply(app, r);
  SynthConfig cfg;
  try {
    cfg = r.resolved().get<SynthConfig>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("bad synth configuration: ") + e.what());
  }
  cfg.validate();
  const fs::path dir(a.out);
  ensure_dir(dir);
  const CorpusSummary s = generate_corpus(cfg, dir);
  RunManifest m;
  m.command = "synth";
  m.config = json(cfg);
  m.seeds = {{"seed", cfg.seed}};
  if (!a.flags.file.empty()) record_input(m, a.flags.file);
  m.outputs = {(dir / "manifest.json").string(), (dir / "summary.json").string()};
  write_run_manifest(dir / "run_manifest.json", m);
  out << to_json(s).dump(2) << '\n';
  err << "wrote " << s.sessions << " sessions to " << dir.string() << '\n';
  return 0;
}

struct TrainArgs {
  ConfigFlags flags;
  std::string corpus, out, method = "mt_pt", task = "timing", pretrained;
};

void write_training_outputs(const fs::path& dir, const std::string& command, const TrainResult& result,
                            const json& config, const TrainConfig& tc, const fs::path& corpus,
                            const fs::path& pretrained, std::ostream& err) {
  store_checkpoint(result.model, dir / "model.ckpt");
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seeds = {{"seed", tc.seed}};
  record_input(m, corpus);
  if (!pretrained.empty()) record_input(m, pretrained);
  m.outputs = {(dir / "model.ckpt").string(), (dir / "train_log.jsonl").string()};
  write_run_manifest(dir / "run_manifest.json", m);
  err << command << ": best validation metric " << result.best_metric << " at step " << result.best_step << " ("
      << result.steps_run << " steps run)\n";
}

int cmd_pretrain(CLI::App* app, TrainArgs& a, std::ostream&, std::ostream& err) {
  json defaults = model_defaults();
  defaults.update(train_defaults());
  ConfigResolver r(defaults);
  a.flags.apply(app, r);
  const ModelConfig mc = model_config_from(r);
  const TrainConfig tc = train_config_from(r, Stage::Pretrain, Method::MtPt);
  const auto options = dataset_options(mc, Task::Timing, r.get<double>("lead_s"),
                                       parse_interior(r.get<std::string>("interior")));
  const Dataset train = assemble_dataset(a.corpus, Split::Train, options);
  const Dataset val = assemble_dataset(a.corpus, Split::Val, options);
  err << dataset_line("train", train) << '\n' << dataset_line("val", val) << '\n';
  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream log(dir / "train_log.jsonl");
  const TrainResult result = pretrain(RuntimeModel::init(mc, tc.seed), train, val, tc,
                                      [&](const TrainLogRecord& rec) { log << to_json(rec).dump() << '\n'; });
  json config = r.resolved();
  config["train"] = json(tc);
  write_training_outputs(dir, "pretrain", result, config, tc, a.corpus, {}, err);
  return 0;
}

int cmd_finetune(CLI::App* app, TrainArgs& a, std::ostream&, std::ostream& err) {
  json defaults = model_defaults();
  defaults.update(train_defaults());
  ConfigResolver r(defaults);
  a.flags.apply(app, r);
  const Method method = parse_method(a.method);
  const Task task = parse_task(a.task);
  const TrainConfig tc = train_config_from(r, Stage::Finetune, method);
  if (method == Method::StPt || method == Method::MtPt) {
    // The checkpoint defines the architecture unless a flag says otherwise.
    const json pre = json(open_checkpoint(a.pretrained).config());
    for (const auto& k : kModelKeys) {
      if (r.source(k.key) == "default") r.set_file_value(k.key, pre.at(k.key));
    }
  }
  const ModelConfig requested = model_config_from(r);
  RuntimeModel model = prepare_finetune_model(method, requested, task, a.pretrained, tc.seed);
  const auto options = dataset_options(model.config(), task, r.get<double>("lead_s"),
                                       parse_interior(r.get<std::string>("interior")));
  const Dataset train = assemble_dataset(a.corpus, Split::Train, options);
  const Dataset val = assemble_dataset(a.corpus, Split::Val, options);
  err << dataset_line("train", train) << '\n' << dataset_line("val", val) << '\n';
  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream log(dir / "train_log.jsonl");
  const TrainResult result = finetune(std::move(model), train, val, tc, task,
                                      [&](const TrainLogRecord& rec) { log << to_json(rec).dump() << '\n'; });
  json config = r.resolved();
  config["train"] = json(tc);
  config["task"] = a.task;
  config["model"] = json(result.model.config());
  write_training_outputs(dir, "finetune", result, config, tc, a.corpus, a.pretrained, err);
  return 0;
}

struct EvalArgs {
  std::string ckpt, corpus, out, task = "timing", pitch_flat_dir, decision = "argmax", interior = "mask";
  std::vector<std::string> manipulations{"none"};
  std::vector<double> contexts;
  double lead_s = 0.5;
  int rtf_runs = 1;
};

RunManifest eval_manifest(const std::string& command, const EvalArgs& a, const json& config) {
  RunManifest m;
  m.command = command;
  m.config = config;
  record_input(m, a.ckpt);
  record_input(m, a.corpus);
  return m;
}

int cmd_eval(EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RuntimeModel model = open_checkpoint(a.ckpt);
  const Task task = parse_task(a.task);
  std::vector<Manipulation> manips;
  for (const auto& m : a.manipulations) manips.push_back(parse_manipulation(m));
  if (std::find(manips.begin(), manips.end(), Manipulation::None) == manips.end()) {
    manips.insert(manips.begin(), Manipulation::None);
  }
  const DecisionMode mode = a.decision == "argmax"      ? DecisionMode::Argmax
                            : a.decision == "per-class" ? DecisionMode::PerClassThreshold
                                                        : throw Error(Errc::ConfigError, "decision must be argmax or per-class");
  const auto options = dataset_options(model.config(), task, a.lead_s, parse_interior(a.interior));
  const Dataset val = assemble_dataset(a.corpus, Split::Val, options);
  const Dataset test = assemble_dataset(a.corpus, Split::Test, options);
  err << dataset_line("val", val) << '\n' << dataset_line("test", test) << '\n';

  std::vector<std::optional<double>> contexts;
  for (double c : a.contexts) contexts.emplace_back(c);
  if (contexts.empty()) contexts.emplace_back(std::nullopt);

  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream jsonl(dir / "eval.jsonl");
  std::ostringstream table;
  std::vector<EvalReport> all;
  EvalReport chance = always_positive_report(test, task);
  table << format_table({chance});
  jsonl << to_json(chance).dump() << '\n';
  json rtf_rows = json::array();
  auto shared = std::make_shared<const RuntimeModel>(model);
  for (const auto& ctx : contexts) {
    PredictionOptions po;
    po.context_s = ctx;
    const DecisionRule rule = tune_rule(predict_dataset(model, val, po), val, task, mode);
    std::vector<EvalReport> rows;
    for (Manipulation m : manips) {
      po.manipulation = m;
      po.pitch_flat_dir = a.pitch_flat_dir;
      EvalReport rep = evaluate_run(model, test, rule, po);
      rep.method = fs::path(a.ckpt).stem().string();
      rows.push_back(rep);
      jsonl << to_json(rep).dump() << '\n';
    }
    table << format_table(rows, &rows.front());
    all.insert(all.end(), rows.begin(), rows.end());
    if (ctx && contexts.size() > 1 && !test.sessions.empty()) {
      const StereoAudio audio = read_wav_stereo(test.sessions.front().dir / "audio.wav");
      if (audio.duration() >= 60.0) {
        std::vector<RtfReport> runs;
        for (int i = 0; i < std::max(1, a.rtf_runs); ++i) runs.push_back(measure_rtf(shared, audio, *ctx));
        std::sort(runs.begin(), runs.end(), [](const auto& x, const auto& y) { return x.rtf < y.rtf; });
        json row = to_json(runs[runs.size() / 2]);
        row["f1"] = json::object();
        for (const auto& [c, prf] : rows.front().per_class) row["f1"][class_name(task, c)] = prf.f1;
        rtf_rows.push_back(row);
      }
    }
  }
  if (!rtf_rows.empty()) {
    std::ofstream(dir / "context_ablation.jsonl") << [&] {
      std::string s;
      for (const auto& row : rtf_rows) s += row.dump() + '\n';
      return s;
    }();
    table << "\ncontext  RTF     p95 ms\n";
    for (const auto& row : rtf_rows) {
      table << std::fixed << std::setprecision(0) << std::setw(6) << row["context_s"].get<double>() << "s  "
            << std::setprecision(3) << row["rtf"].get<double>() << "   " << std::setprecision(1)
            << row["p95_ms"].get<double>() << '\n';
    }
  }
  std::ofstream(dir / "eval_table.txt") << table.str();
  out << table.str();

  json config{{"task", a.task},         {"manipulations", a.manipulations}, {"contexts", a.contexts},
              {"decision", a.decision}, {"lead_s", a.lead_s},               {"interior", a.interior},
              {"pitch_flat_dir", a.pitch_flat_dir}};
  RunManifest m = eval_manifest("eval", a, config);
  m.outputs = {(dir / "eval.jsonl").string(), (dir / "eval_table.txt").string()};
  if (!rtf_rows.empty()) m.outputs.push_back((dir / "context_ablation.jsonl").string());
  write_run_manifest(dir / "run_manifest.json", m);
  return 0;
}

int cmd_zeroshot(EvalArgs& a, std::ostream& out, std::ostream& err) {
  const RuntimeModel model = open_checkpoint(a.ckpt);
  const auto options = dataset_options(model.config(), Task::Timing, a.lead_s, parse_interior(a.interior));
  const Dataset val = assemble_dataset(a.corpus, Split::Val, options);
  const Dataset test = assemble_dataset(a.corpus, Split::Test, options);
  err << dataset_line("val", val) << '\n' << dataset_line("test", test) << '\n';
  PredictionOptions po;
  if (!a.contexts.empty()) po.context_s = a.contexts.front();
  const double threshold = tune_zero_shot(predict_dataset(model, val, po), val);
  EvalReport rep = score_zero_shot(predict_dataset(model, test, po), test, threshold);
  rep.context_s = po.context_s;
  const EvalReport chance = always_positive_report(test, Task::Timing);

  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream(dir / "zeroshot.jsonl") << to_json(chance).dump() << '\n' << to_json(rep).dump() << '\n';
  const std::string table = format_table({chance, rep}, &chance);
  std::ofstream(dir / "zeroshot_table.txt") << table;
  out << table;
  RunManifest m = eval_manifest("zeroshot", a, json{{"context_s", a.contexts}, {"lead_s", a.lead_s}});
  m.outputs = {(dir / "zeroshot.jsonl").string(), (dir / "zeroshot_table.txt").string()};
  write_run_manifest(dir / "run_manifest.json", m);
  return 0;
}

struct RtfArgs {
  ConfigFlags flags;
  std::string ckpt, audio, out;
  std::vector<double> contexts{20, 10, 5, 3, 1};
  int runs = 5;
  double seconds = 60.0;
};

int cmd_rtf(CLI::App* app, RtfArgs& a, std::ostream& out, std::ostream& err) {
  std::shared_ptr<const RuntimeModel> model;
  json config;
  if (!a.ckpt.empty()) {
    model = std::make_shared<const RuntimeModel>(open_checkpoint(a.ckpt));
  } else {
    json defaults = model_defaults();
    defaults["seed"] = 0;
    ConfigResolver r(defaults);
    a.flags.apply(app, r);
    ModelConfig mc = model_config_from(r);
    model = std::make_shared<const RuntimeModel>(RuntimeModel::init(mc, mc.seed));
    config = r.resolved();
  }
  StereoAudio audio;
  if (!a.audio.empty()) {
    audio = read_wav_stereo(a.audio);
  } else {
    SynthConfig sc;
    sc.session_seconds = a.seconds;
    audio = generate_dialogue(sc, 7).audio;
  }
  const fs::path dir(a.out);
  ensure_dir(dir);
  std::ofstream jsonl(dir / "rtf.jsonl");
  std::ostringstream table;
  table << "context  RTF     p50 ms  p95 ms  max ms\n";
  for (double ctx : a.contexts) {
    std::vector<RtfReport> runs;
    for (int i = 0; i < std::max(1, a.runs); ++i) runs.push_back(measure_rtf(model, audio, ctx));
    std::sort(runs.begin(), runs.end(), [](const auto& x, const auto& y) { return x.rtf < y.rtf; });
    const RtfReport& med = runs[runs.size() / 2];
    jsonl << to_json(med).dump() << '\n';
    table << std::fixed << std::setprecision(0) << std::setw(6) << ctx << "s  " << std::setprecision(3) << med.rtf
          << "   " << std::setprecision(1) << std::setw(6) << med.p50_ms << "  " << std::setw(6) << med.p95_ms
          << "  " << std::setw(6) << med.max_ms << '\n';
  }
  std::ofstream(dir / "rtf_table.txt") << table.str();
  out << table.str();
  RunManifest m;
  m.command = "rtf";
  m.config = json{{"model", config.is_null() ? json(model->config()) : config},
                  {"contexts", a.contexts},
                  {"runs", a.runs}};
  if (!a.ckpt.empty()) record_input(m, a.ckpt);
  if (!a.audio.empty()) record_input(m, a.audio);
  m.outputs = {(dir / "rtf.jsonl").string(), (dir / "rtf_table.txt").string()};
  write_run_manifest(dir / "run_manifest.json", m);
  err << "audio " << audio.duration() << " s, " << a.runs << " runs per context\n";
  return 0;
}

struct StreamArgs {
  std::string ckpt, task = "timing";
  double context = 5.0;
  double frame_rate = 0.0;
  int port = -1;
  bool stdio = false;
};

TcpServer* g_server = nullptr;

int cmd_stream(StreamArgs& a, std::ostream& out, std::ostream& err) {
  auto model = std::make_shared<const RuntimeModel>(open_checkpoint(a.ckpt));
  if (a.frame_rate > 0.0 && a.frame_rate != model->config().frame_rate) {
    throw Error(Errc::ConfigMismatch, "checkpoint runs at " + std::to_string(model->config().frame_rate) +
                                          " Hz, not " + std::to_string(a.frame_rate));
  }
  if (a.stdio == (a.port >= 0)) throw Error(Errc::ConfigError, "choose exactly one of --port and --stdio");
  StreamOptions options;
  options.context_s = a.context;
  options.task = parse_task(a.task);
  if (a.stdio) {
    serve_stdio(model, options, std::cin, out);
    return 0;
  }
  TcpServer server(model, options, static_cast<unsigned short>(a.port));
  err << "listening on 127.0.0.1:" << server.port() << '\n';
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.run();
  g_server = nullptr;
  return 0;
}

const std::vector<std::string> kSubcommands = {"synth", "pretrain", "finetune", "eval", "zeroshot", "rtf", "stream"};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Backchannel prediction with voice activity projection", "vapbc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dialogue corpus");
  synth.flags.add_file(s);
  const json synth_defaults = SynthConfig{};
  const std::map<std::string, std::string> synth_help = {
      {"seed", "corpus seed"},
      {"session_seconds", "length of each session"},
      {"train_sessions", "sessions in the train split"},
      {"val_sessions", "sessions in the validation split"},
      {"test_sessions", "sessions in the test split"},
      {"f0_min", "lowest speaker F0 in Hz"},
      {"f0_max", "highest speaker F0 in Hz"},
      {"utterance_min", "shortest speaker utterance in seconds"},
      {"utterance_max", "longest speaker utterance in seconds"},
      {"pause_min", "shortest pause between utterances"},
      {"pause_max", "longest pause between utterances"},
      {"continuer_rate", "share of utterances ending with the falling-F0 cue"},
      {"assessment_rate", "share of utterances carrying an intensity peak"},
      {"delay_min", "shortest cue-to-backchannel delay"},
      {"delay_max", "longest cue-to-backchannel delay"},
      {"bc_min", "shortest backchannel token"},
      {"bc_max", "longest backchannel token"},
      {"final_fall", "F0 ratio at the end of a continuer cue"},
      {"final_rise", "F0 ratio at the end of other utterances"},
      {"cue_span", "seconds of utterance-final F0 movement"},
      {"peak_gain", "amplitude gain of the intensity peak"},
      {"peak_min", "shortest intensity peak"},
      {"peak_max", "longest intensity peak"},
      {"amplitude", "base speech amplitude"},
      {"flat_pitch", "constant F0 per utterance (true | false)"},
  };
  for (const auto& [key, v] : synth_defaults.items()) {
    const auto h = synth_help.find(key);
    s->add_option(flag_name(key), synth.flags.raw[key], h == synth_help.end() ? std::string() : h->second);
  }
  s->add_option("--out", synth.out, "output corpus directory")->required();

  TrainArgs pre, fine;
  auto* p = app.add_subcommand("pretrain", "pre-train VAP and VAD heads");
  pre.flags.add_file(p);
  pre.flags.add(p, kModelKeys);
  pre.flags.add(p, kTrainKeys);
  p->add_option("--corpus", pre.corpus, "corpus directory")->required();
  p->add_option("--out", pre.out, "output directory")->required();

  auto* f = app.add_subcommand("finetune", "fine-tune with the backchannel head");
  fine.flags.add_file(f);
  fine.flags.add(f, kModelKeys);
  fine.flags.add(f, kTrainKeys);
  f->add_option("--corpus", fine.corpus, "corpus directory")->required();
  f->add_option("--out", fine.out, "output directory")->required();
  f->add_option("--method", fine.method, "baseline | st_no_pt | st_pt | mt_pt");
  f->add_option("--task", fine.task, "timing | type");
  f->add_option("--pretrained", fine.pretrained, "pre-trained checkpoint (st_pt, mt_pt)");

  EvalArgs ev, zs;
  auto* e = app.add_subcommand("eval", "frame-wise evaluation on the test split");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--corpus", ev.corpus, "corpus directory")->required();
  e->add_option("--out", ev.out, "output directory")->required();
  e->add_option("--task", ev.task, "timing | type");
  e->add_option("--manipulation", ev.manipulations, "none | pitch-flat | intensity-flat (repeatable)");
  e->add_option("--pitch-flat-dir", ev.pitch_flat_dir, "corpus with pitch-flattened audio");
  e->add_option("--context", ev.contexts, "Transformer context in seconds (repeatable)");
  e->add_option("--decision", ev.decision, "type task: argmax | per-class");
  e->add_option("--lead-s", ev.lead_s, "labelled lead before onsets");
  e->add_option("--interior", ev.interior, "mask | negative");
  e->add_option("--rtf-runs", ev.rtf_runs, "RTF repetitions per context in ablations");

  auto* z = app.add_subcommand("zeroshot", "backchannel timing from the VAP distribution alone");
  z->add_option("--ckpt", zs.ckpt, "checkpoint")->required();
  z->add_option("--corpus", zs.corpus, "corpus directory")->required();
  z->add_option("--out", zs.out, "output directory")->required();
  z->add_option("--context", zs.contexts, "Transformer context in seconds");
  z->add_option("--lead-s", zs.lead_s, "labelled lead before onsets");
  z->add_option("--interior", zs.interior, "mask | negative");

  RtfArgs rtf;
  auto* r = app.add_subcommand("rtf", "real-time factor benchmark");
  r->add_option("--ckpt", rtf.ckpt, "checkpoint (default: freshly initialised model)");
  r->add_option("--audio", rtf.audio, "stereo 16 kHz wav (default: synthetic dialogue)");
  r->add_option("--out", rtf.out, "output directory")->required();
  r->add_option("--context", rtf.contexts, "context seconds (repeatable)");
  r->add_option("--runs", rtf.runs, "repetitions per context (median reported)");
  r->add_option("--seconds", rtf.seconds, "length of the synthetic audio");
  rtf.flags.add(r, kModelKeys);
  r->add_option("--seed", rtf.flags.raw["seed"], "initialisation seed");

  StreamArgs st;
  auto* w = app.add_subcommand("stream", "serve live predictions");
  w->add_option("--ckpt", st.ckpt, "checkpoint")->required();
  w->add_option("--context", st.context, "Transformer context in seconds");
  w->add_option("--frame-rate", st.frame_rate, "expected frame rate of the checkpoint");
  w->add_option("--port", st.port, "TCP port");
  w->add_flag("--stdio", st.stdio, "serve on stdin/stdout");
  w->add_option("--task", st.task, "timing | type");

  if (!args.empty() && args.front().rfind("-", 0) != 0 &&
      std::find(kSubcommands.begin(), kSubcommands.end(), args.front()) == kSubcommands.end()) {
    err << "UnknownSubcommand: '" << args.front() << "' (expected one of synth, pretrain, finetune, eval, zeroshot, "
        << "rtf, stream)\n";
    return 1;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) return cmd_synth(s, synth, out, err);
    if (p->parsed()) return cmd_pretrain(p, pre, out, err);
    if (f->parsed()) return cmd_finetune(f, fine, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (z->parsed()) return cmd_zeroshot(zs, out, err);
    if (r->parsed()) return cmd_rtf(r, rtf, out, err);
    if (w->parsed()) return cmd_stream(st, out, err);
  } catch (const Error& ex) {
    err << ex.what() << '\n';
    return ex.is_validation() ? 1 : 2;
  } catch (const std::exception& ex) {
    err << "runtime failure: " << ex.what() << '\n';
    return 2;
  }
  err << "UnknownSubcommand\n";
  return 1;
}

}  // namespace vapbc
