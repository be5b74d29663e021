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

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "vapbc/synth.hpp"
#include "vapbc/training.hpp"

using namespace vapbc;
using vapbc::test::TempDir;

namespace {

Session session_from(const StereoAudio& audio, const std::vector<BcEvent>& events, const VadSegments& vad,
                     const ModelConfig& config, Task task = Task::Timing) {
  Session s;
  s.name = "s";
  s.events = events;
  for (int c = 0; c < 2; ++c) s.inputs[c] = model_inputs(audio.channels[c], config, c).frames;
  LabelOptions o;
  o.task = task;
  s.labels = make_frame_labels(events, vad, static_cast<std::size_t>(s.inputs[0].rows()), config.frame_rate, o);
  s.duration = audio.duration();
  return s;
}

Dataset dialogue_dataset(const ModelConfig& config, std::uint64_t seed, double seconds, Task task = Task::Timing) {
  SynthConfig sc;
  sc.session_seconds = seconds;
  const Dialogue d = generate_dialogue(sc, seed);
  Dataset ds;
  ds.sessions.push_back(session_from(d.audio, d.events, d.vad, config, task));
  ds.stats = compute_stats(ds.sessions);
  return ds;
}

FrameLabels constant_labels(std::size_t frames, int vap, int bc, bool vad) {
  FrameLabels l;
  l.vad.active[0].assign(frames, vad);
  l.vad.active[1].assign(frames, vad);
  l.vap_state.assign(frames, vap);
  l.bc_class.assign(frames, bc);
  l.bc_mask.assign(frames, 1);
  return l;
}

ModelOutput<double> constant_outputs(Eigen::Index frames, int classes) {
  return {Matrix<double>::Zero(frames, kNumStates), Matrix<double>::Zero(frames, 2),
          Matrix<double>::Zero(frames, classes)};
}

TrainConfig finetune_config() {
  TrainConfig c;
  c.stage = Stage::Finetune;
  c.method = Method::MtPt;
  return c;
}

}  // namespace

TEST_CASE("compute_loss: unit losses combine to 7 with weights 1, 1, 5") {
  const Eigen::Index T = 6;
  auto out = constant_outputs(T, 2);
  FrameLabels l = constant_labels(T, 17, 0, true);
  l.bc_class[2] = 1;
  // Target logit z with CE = 1 against 255 zero logits: e^z (e - 1) = 255.
  const double z_vap = std::log(255.0 / (std::numbers::e - 1.0));
  const double z_bin = -std::log(std::numbers::e - 1.0);  // CE = 1 for two classes or one sigmoid
  for (Eigen::Index t = 0; t < T; ++t) {
    out.vap_logits(t, 17) = z_vap;
    out.vad_logits.row(t).setConstant(z_bin);
    out.bc_logits(t, l.bc_class[static_cast<std::size_t>(t)]) = z_bin;
  }
  const LossBreakdown b = compute_loss(out, l, finetune_config());
  CHECK(b.l_vap == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.l_vad == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.l_bc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.total == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(b.total == 1.0 * b.l_vap + 1.0 * b.l_vad + 5.0 * b.l_bc);
}

TEST_CASE("compute_loss: confident correct predictions give zero loss") {
  const Eigen::Index T = 5;
  auto out = constant_outputs(T, 3);
  FrameLabels l = constant_labels(T, 200, 2, false);
  out.vad_logits.setConstant(-800.0);
  for (Eigen::Index t = 0; t < T; ++t) {
    out.vap_logits(t, 200) = 800.0;
    out.bc_logits(t, 2) = 800.0;
  }
  const LossBreakdown b = compute_loss(out, l, finetune_config());
  CHECK(b.total == 0.0);
}

TEST_CASE("compute_loss: uniform binary logits give ln 2 whatever the class weights") {
  std::mt19937_64 g(1);
  for (double pw : {1.0, 5.0, 40.0}) {
    auto out = constant_outputs(50, 2);
    FrameLabels l = constant_labels(50, 0, 0, false);
    for (auto& c : l.bc_class) c = static_cast<int>(g() % 2);
    for (std::size_t t = 0; t < 50; t += 7) l.bc_mask[t] = 0;
    TrainConfig cfg = finetune_config();
    cfg.positive_weight = pw;
    CHECK(compute_loss(out, l, cfg).l_bc == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("compute_loss: positive frames get positive_weight times the gradient share") {
  // Two frames with identical uniform logits, one positive and one negative.
  auto out = constant_outputs(2, 2);
  FrameLabels l = constant_labels(2, 0, 0, false);
  l.bc_class[0] = 1;
  auto ratio = [&](double pw) {
    TrainConfig cfg = finetune_config();
    cfg.positive_weight = pw;
    OutputGrads<double> d;
    compute_loss(out, l, cfg, &d);
    return d.bc_logits.row(0).norm() / d.bc_logits.row(1).norm();
  };
  CHECK(ratio(1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ratio(5.0) == doctest::Approx(5.0).epsilon(1e-12));

  // Single positive frame: d l_bc / d logits is p - y, scaled by gamma.
  auto one = constant_outputs(1, 2);
  FrameLabels pos = constant_labels(1, 0, 1, false);
  OutputGrads<double> d;
  compute_loss(one, pos, finetune_config(), &d);
  CHECK(d.bc_logits(0, 0) == doctest::Approx(5.0 * 0.5));
  CHECK(d.bc_logits(0, 1) == doctest::Approx(5.0 * -0.5));
}

TEST_CASE("compute_loss: masking, decomposition and guards") {
  std::mt19937_64 g(3);
  std::normal_distribution<double> n(0.0, 2.0);
  auto out = constant_outputs(30, 3);
  for (auto* m : {&out.vap_logits, &out.vad_logits, &out.bc_logits}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(g);
  }
  FrameLabels l = constant_labels(30, 0, 0, false);
  for (std::size_t t = 0; t < 30; ++t) {
    l.vap_state[t] = static_cast<int>(g() % 256);
    l.bc_class[t] = static_cast<int>(g() % 3);
    l.vad.active[0][t] = static_cast<std::uint8_t>(g() % 2);
  }
  TrainConfig cfg = finetune_config();
  cfg.alpha = 0.7;
  cfg.beta = 1.3;
  cfg.gamma = 2.5;
  const LossBreakdown b = compute_loss(out, l, cfg);
  CHECK(b.total == cfg.alpha * b.l_vap + cfg.beta * b.l_vad + cfg.gamma * b.l_bc);
  CHECK(b.vap_frames == 30);
  CHECK(b.vad_frames == 60);

  // Masked frames leave l_bc untouched whatever their logits.
  l.bc_mask[4] = 0;
  const double before = compute_loss(out, l, cfg).l_bc;
  out.bc_logits.row(4).setConstant(50.0);
  out.bc_logits(4, 0) = -50.0;
  CHECK(compute_loss(out, l, cfg).l_bc == before);

  std::fill(l.bc_mask.begin(), l.bc_mask.end(), 0);
  const LossBreakdown masked = compute_loss(out, l, cfg);
  CHECK(masked.all_masked);
  CHECK(masked.l_bc == 0.0);

  FrameLabels shorter = constant_labels(29, 0, 0, false);
  CHECK(test::error_code_of([&] { compute_loss(out, shorter, cfg); }) == Errc::LengthMismatch);
  FrameLabels three = constant_labels(30, 0, 2, false);
  CHECK(test::error_code_of([&] { compute_loss(constant_outputs(30, 2), three, cfg); }) == Errc::ConfigMismatch);

  TrainConfig pre;
  pre.stage = Stage::Pretrain;
  CHECK(compute_loss(out, l, pre).total == pre.alpha * compute_loss(out, l, pre).l_vap + pre.beta * compute_loss(out, l, pre).l_vad);
}

TEST_CASE("TrainConfig validation and method defaults") {
  TrainConfig c = finetune_config();
  c.gamma = 0.0;
  CHECK(test::error_code_of([&] { c.validate(); }) == Errc::InvalidConfig);

  TrainConfig st = finetune_config();
  st.method = Method::StNoPt;
  CHECK(test::error_code_of([&] { st.validate(); }) == Errc::InvalidConfig);  // alpha = beta = 1
  st.apply_method_defaults();
  CHECK(st.alpha == 0.0);
  CHECK(st.beta == 0.0);
  CHECK_NOTHROW(st.validate());

  TrainConfig mt = finetune_config();
  mt.apply_method_defaults();
  CHECK(mt.alpha == 1.0);
  CHECK(mt.beta == 1.0);

  TrainConfig pw = finetune_config();
  pw.positive_weight = 0.5;
  CHECK(test::error_code_of([&] { pw.validate(); }) == Errc::InvalidConfig);
  TrainConfig pre;
  pre.stage = Stage::Pretrain;
  pre.alpha = pre.beta = 0.0;
  CHECK(test::error_code_of([&] { pre.validate(); }) == Errc::InvalidConfig);

  CHECK(parse_method("mt_pt") == Method::MtPt);
  CHECK(test::error_code_of([] { parse_method("mt_asr"); }) == Errc::ConfigError);
  const nlohmann::json j = mt;
  CHECK(j.get<TrainConfig>().gamma == mt.gamma);
}

TEST_CASE("one batch is memorised: l_vap falls below 10% of its start within 200 steps") {
  ModelConfig mc = test::tiny_config(32, 64);
  const Dataset ds = dialogue_dataset(mc, 7, 30.0);
  RuntimeModel model = RuntimeModel::init(mc, 1);
  TrainConfig cfg;
  cfg.stage = Stage::Pretrain;
  cfg.learning_rate = 3e-3;
  Trainer trainer(model, cfg);
  const std::vector<Crop> batch{{&ds.sessions[0], 40, 64}};
  const double initial = trainer.step(batch).l_vap;
  double last = initial;
  for (int i = 1; i < 200; ++i) last = trainer.step(batch).l_vap;
  INFO("initial " << initial << " final " << last);
  CHECK(last < 0.1 * initial);
}

TEST_CASE("a silent corpus drives the VAP distribution onto state 0") {
  ModelConfig mc = test::tiny_config(16, 50);
  const StereoAudio silence = test::stereo(std::vector<float>(16000 * 20, 0.0f), std::vector<float>(16000 * 20, 0.0f));
  Dataset ds;
  ds.sessions.push_back(session_from(silence, {}, {}, mc));
  ds.stats = compute_stats(ds.sessions);
  TrainConfig cfg;
  cfg.stage = Stage::Pretrain;
  cfg.learning_rate = 1e-2;
  cfg.max_steps = 60;
  cfg.val_interval = 20;
  cfg.crop_seconds = 5.0;
  const TrainResult r = pretrain(RuntimeModel::init(mc, 2), ds, ds, cfg);
  const double ce = validation_vap_loss(r.model, ds, 50);
  INFO("cross-entropy " << ce);
  CHECK(ce < 0.05);
}

TEST_CASE("training is deterministic for a fixed seed") {
  ModelConfig mc = test::tiny_config(16, 40);
  mc.dropout = 0.1;
  const Dataset ds = dialogue_dataset(mc, 9, 40.0);
  TrainConfig cfg;
  cfg.stage = Stage::Pretrain;
  cfg.learning_rate = 1e-3;
  cfg.max_steps = 6;
  cfg.val_interval = 3;
  cfg.batch_size = 2;
  cfg.crop_seconds = 3.0;
  cfg.seed = 4;
  const TrainResult a = pretrain(RuntimeModel::init(mc, 3), ds, ds, cfg);
  const TrainResult b = pretrain(RuntimeModel::init(mc, 3), ds, ds, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss.total == b.log[i].loss.total);
  TempDir dir("det");
  store_checkpoint(a.model, dir / "a.ckpt");
  store_checkpoint(b.model, dir / "b.ckpt");
  CHECK(file_digest(dir / "a.ckpt") == file_digest(dir / "b.ckpt"));
}

TEST_CASE("external features: the frozen front end gets no gradients") {
  ModelConfig mc = test::tiny_config(16, 40);
  mc.encoder = EncoderKind::External;
  std::mt19937_64 g(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Session s;
  for (int c = 0; c < 2; ++c) {
    s.inputs[c].resize(40, 16);
    for (Eigen::Index i = 0; i < s.inputs[c].size(); ++i) s.inputs[c].data()[i] = n(g);
  }
  s.labels = constant_labels(40, 3, 0, true);
  s.labels.bc_class[10] = 1;
  const FeatureMatrix frozen = s.inputs[0];
  RuntimeModel model = RuntimeModel::init(mc, 1);
  TrainConfig cfg = finetune_config();
  Trainer trainer(model, cfg);
  ModelParams<float> grads;
  const std::vector<Crop> batch{{&s, 0, 40}};
  trainer.gradients(batch, grads, false);
  CHECK(grads.encoder_convs.empty());
  CHECK(grads.encoder_proj.weight.size() == 0);
  CHECK_FALSE(grads.positions.isZero(0.0f));
  trainer.step(batch);
  CHECK(s.inputs[0] == frozen);
}

TEST_CASE("sample_batch draws in-range crops and rejects an empty corpus") {
  ModelConfig mc = test::tiny_config(16, 40);
  const Dataset ds = dialogue_dataset(mc, 1, 30.0);
  nn::Rng rng(1);
  for (const Crop& c : sample_batch(ds, 16, 40, rng)) {
    CHECK(c.begin >= 0);
    CHECK(c.length == 40);
    CHECK(c.begin + c.length <= ds.sessions[0].inputs[0].rows());
  }
  CHECK(test::error_code_of([&] { sample_batch(Dataset{}, 2, 40, rng); }) == Errc::EmptyCorpus);
}

TEST_CASE("prepare_finetune_model: initialisation per method") {
  TempDir dir("prep");
  ModelConfig mc = test::tiny_config(16, 40);
  CHECK(test::error_code_of([&] { prepare_finetune_model(Method::MtPt, mc, Task::Type, dir / "none.ckpt", 1); }) ==
        Errc::CheckpointMissing);

  const RuntimeModel pre = RuntimeModel::init(mc, 5);
  store_checkpoint(pre, dir / "pre.ckpt");
  const RuntimeModel ft = prepare_finetune_model(Method::StPt, mc, Task::Type, dir / "pre.ckpt", 1);
  CHECK(ft.config().bc_classes == 3);
  CHECK(ft.params().vap_head.weight == pre.params().vap_head.weight);
  CHECK(ft.params().cross_blocks[0][0].attention.query.weight == pre.params().cross_blocks[0][0].attention.query.weight);

  ModelConfig other = mc;
  other.frame_rate = 50.0;
  CHECK(test::error_code_of([&] { prepare_finetune_model(Method::MtPt, other, Task::Timing, dir / "pre.ckpt", 1); }) ==
        Errc::ConfigMismatch);

  const RuntimeModel fresh = prepare_finetune_model(Method::StNoPt, mc, Task::Timing, {}, 1);
  CHECK(fresh.params().vap_head.weight != pre.params().vap_head.weight);
  const RuntimeModel base = prepare_finetune_model(Method::Baseline, mc, Task::Timing, {}, 1);
  CHECK(base.config().arch == Architecture::Baseline);
  CHECK(base.params().cross_blocks.empty());
}

TEST_CASE("finetune improves on the always-positive rate on a tiny corpus") {
  ModelConfig mc = test::tiny_config(32, 100);
  mc.bc_classes = 2;
  Dataset train, val;
  SynthConfig sc;
  sc.session_seconds = 120.0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Dialogue d = generate_dialogue(sc, 100 + s);
    train.sessions.push_back(session_from(d.audio, d.events, d.vad, mc));
  }
  const Dialogue dv = generate_dialogue(sc, 200);
  val.sessions.push_back(session_from(dv.audio, dv.events, dv.vad, mc));
  train.stats = compute_stats(train.sessions);
  val.stats = compute_stats(val.sessions);

  TrainConfig cfg = finetune_config();
  cfg.method = Method::StNoPt;
  cfg.apply_method_defaults();
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 4;
  cfg.crop_seconds = 10.0;
  cfg.max_steps = 120;
  cfg.val_interval = 40;
  std::vector<TrainLogRecord> seen;
  const TrainResult r = finetune(RuntimeModel::init(mc, 1), train, val, cfg, Task::Timing,
                                 [&](const TrainLogRecord& rec) { seen.push_back(rec); });
  CHECK(seen.size() == r.log.size());
  CHECK(r.model.config().bc_head_trained);
  const double reference = 2 * val.stats.positive_rate / (1 + val.stats.positive_rate);
  INFO("val F1 " << r.best_metric << " always-positive " << reference);
  CHECK(r.best_metric > reference);
  CHECK(to_json(r.log.back()).contains("val_metric"));
}
