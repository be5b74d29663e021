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

#include <fstream>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "vapbc/model.hpp"

using namespace vapbc;
using vapbc::test::TempDir;

namespace {

Matrix<float> random_inputs(Eigen::Index frames, Eigen::Index dim, std::uint64_t seed, double scale = 3.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<float> u(static_cast<float>(-scale), static_cast<float>(scale));
  Matrix<float> m(frames, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(g) - 8.0f;
  return m;
}

template <typename S>
bool same_outputs(const ModelOutput<S>& a, const ModelOutput<S>& b) {
  return a.vap_logits == b.vap_logits && a.vad_logits == b.vad_logits && a.bc_logits == b.bc_logits;
}

template <typename S>
bool rows_equal(const ModelOutput<S>& a, const ModelOutput<S>& b, Eigen::Index first, Eigen::Index count) {
  return a.vap_logits.middleRows(first, count) == b.vap_logits.middleRows(first, count) &&
         a.vad_logits.middleRows(first, count) == b.vad_logits.middleRows(first, count) &&
         a.bc_logits.middleRows(first, count) == b.bc_logits.middleRows(first, count);
}

std::size_t counted_parameters(RuntimeModel& m) {
  std::size_t n = 0;
  visit_parameters(m.params(), [&](const std::string&, Matrix<float>& p) { n += static_cast<std::size_t>(p.size()); });
  return n;
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  const ModelConfig c = test::tiny_config();
  RuntimeModel a = RuntimeModel::init(c, 5), b = RuntimeModel::init(c, 5), other = RuntimeModel::init(c, 6);
  const auto pa = flatten(a.params()), pb = flatten(b.params()), po = flatten(other.params());
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(*pa[i] == *pb[i]);
    differs = differs || (*pa[i] != *po[i]);
  }
  CHECK(differs);
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK(c.head_dim() == 64);
  CHECK_NOTHROW(c.validate());
  c.n_heads = 5;
  CHECK(test::error_code_of([&] { c.validate(); }) == Errc::InvalidConfig);
  CHECK(test::error_code_of([&] { RuntimeModel::init(c, 0); }) == Errc::InvalidConfig);
  ModelConfig d;
  d.d_concat = 256;
  CHECK(test::error_code_of([&] { d.validate(); }) == Errc::InvalidConfig);
  ModelConfig e;
  e.bc_classes = 4;
  CHECK(test::error_code_of([&] { e.validate(); }) == Errc::InvalidConfig);
  ModelConfig f;
  f.frame_rate = 25.0;
  CHECK(test::error_code_of([&] { f.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("parameter count matches the closed form over the configured shapes") {
  for (int layers : {1, 3}) {
    ModelConfig c = test::tiny_config(32);
    c.n_cross_layers = layers;
    c.bc_classes = 3;
    RuntimeModel m = RuntimeModel::init(c, 1);
    CHECK(m.parameter_count() == c.expected_parameter_count());
    CHECK(counted_parameters(m) == c.expected_parameter_count());
  }
  ModelConfig c;
  RuntimeModel m = RuntimeModel::init(c, 1);
  CHECK(m.parameter_count() == c.expected_parameter_count());
}

TEST_CASE("forward: shapes, empty input and normalised outputs") {
  const ModelConfig c = test::tiny_config();
  const RuntimeModel m = RuntimeModel::init(c, 2);
  const auto empty = m.forward(Matrix<float>(0, 8), Matrix<float>(0, 8));
  CHECK(empty.num_frames() == 0);
  CHECK(empty.bc_logits.cols() == 2);

  const auto in0 = random_inputs(40, 8, 1, 10.0), in1 = random_inputs(40, 8, 2, 10.0);
  const auto out = m.forward(in0, in1);
  CHECK(out.vap_logits.rows() == 40);
  CHECK(out.vap_logits.cols() == 256);
  CHECK(out.vad_logits.cols() == 2);
  const auto vap = out.vap_probs(), bc = out.bc_probs(), vad = out.vad_probs();
  CHECK(vap.allFinite());
  CHECK(bc.allFinite());
  for (Eigen::Index t = 0; t < 40; ++t) {
    CHECK(std::abs(vap.row(t).template cast<double>().sum() - 1.0) <= 1e-6);
    CHECK(std::abs(bc.row(t).template cast<double>().sum() - 1.0) <= 1e-6);
  }
  CHECK((vad.array() > 0.0f).all());
  CHECK((vad.array() < 1.0f).all());
  CHECK(test::error_code_of([&] { m.forward(in0, random_inputs(39, 8, 3)); }) == Errc::LengthMismatch);
  CHECK(test::error_code_of([&] { m.forward(in0, random_inputs(40, 7, 3)); }) == Errc::ConfigMismatch);
}

TEST_CASE("forward: future input frames never influence earlier outputs") {
  for (EncoderKind enc : {EncoderKind::Reference, EncoderKind::External}) {
    ModelConfig c = test::tiny_config();
    c.encoder = enc;
    const RuntimeModel m = RuntimeModel::init(c, 3);
    const Eigen::Index dim = c.input_dim();
    const auto in0 = random_inputs(30, dim, 4), in1 = random_inputs(30, dim, 5);
    const auto base = m.forward(in0, in1);
    for (Eigen::Index t : {0, 7, 28}) {
      auto p0 = in0, p1 = in1;
      p0.row(t + 1).array() += 2.5f;
      p1.row(t + 1).array() -= 1.5f;
      const auto out = m.forward(p0, p1);
      CHECK(rows_equal(base, out, 0, t + 1));
      CHECK_FALSE(rows_equal(base, out, t + 1, 1));
    }
  }
}

TEST_CASE("forward: an unlimited window equals a window as long as the input") {
  const RuntimeModel m = RuntimeModel::init(test::tiny_config(), 4);
  const auto in0 = random_inputs(25, 8, 6), in1 = random_inputs(25, 8, 7);
  CHECK(same_outputs(m.forward(in0, in1), m.forward(in0, in1, 25)));
  CHECK(same_outputs(m.forward(in0, in1), m.forward(in0, in1, 1000)));
}

TEST_CASE("forward: with window W, frame t ignores encoder frames at or before t - W") {
  ModelConfig c = test::tiny_config();
  c.encoder = EncoderKind::External;
  const RuntimeModel ext = RuntimeModel::init(c, 8);
  const Eigen::Index W = 6, t = 20;
  const auto in0 = random_inputs(30, 16, 8), in1 = random_inputs(30, 16, 9);
  const auto base = ext.forward(in0, in1, W);
  auto p0 = in0, p1 = in1;
  p0.topRows(t - W + 1).array() += 4.0f;
  p1.topRows(t - W + 1).array() *= -1.0f;
  const auto out = ext.forward(p0, p1, W);
  CHECK(rows_equal(base, out, t, 10));
  CHECK_FALSE(rows_equal(base, out, t - 1, 1));

  // The reference encoder adds its receptive field to the horizon.
  const RuntimeModel ref = RuntimeModel::init(test::tiny_config(), 8);
  const int rf = ref.config().encoder_receptive_field();
  const auto r0 = random_inputs(30, 8, 10), r1 = random_inputs(30, 8, 11);
  const auto rbase = ref.forward(r0, r1, W);
  auto q0 = r0;
  q0.topRows(t - W - rf + 1).array() += 4.0f;
  CHECK(rows_equal(rbase, ref.forward(q0, r1, W), t, 10));
}

TEST_CASE("reference encoder: shape, causality and settled silence") {
  const RuntimeModel m = RuntimeModel::init(test::tiny_config(), 9);
  const FeatureSequence f = encode_reference(test::noise(16000, 0.2, 1), m);
  CHECK(f.num_frames() == 10);
  CHECK(f.dim() == 16);
  ModelConfig big;
  big.frame_rate = 10.0;
  const RuntimeModel full = RuntimeModel::init(big, 1);
  CHECK(encode_reference(test::noise(16000, 0.2, 1), full).frames.cols() == 256);

  auto x = test::noise(32000, 0.2, 2);
  const FeatureSequence base = encode_reference(x, m);
  for (std::size_t i = 16000; i < x.size(); ++i) x[i] = 0.0f;
  const FeatureSequence cut = encode_reference(x, m);
  CHECK(cut.frames.topRows(10) == base.frames.topRows(10));

  const FeatureSequence silent = encode_reference(std::vector<float>(32000, 0.0f), m);
  REQUIRE(m.config().encoder_receptive_field() == 4);
  for (Eigen::Index t = 4; t < silent.num_frames(); ++t) CHECK(silent.frames.row(t) == silent.frames.row(4));
  CHECK(silent.frames.row(3) != silent.frames.row(4));
  CHECK(test::error_code_of([&] { encode_reference(std::vector<float>{}, m); }) == Errc::EmptyAudio);
}

TEST_CASE("backward: analytic gradients match central differences in 64-bit mode") {
  auto p = test::make_grad_problem(8, 16, 21);
  const auto r = test::check_gradients(p);
  INFO("worst parameter: " << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric);
  CHECK(r.checked == p.model.parameter_count());
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("backward: zero loss weights give zero gradients; repeated passes agree") {
  auto p = test::make_grad_problem(8, 16, 22);
  p.cfg.alpha = p.cfg.beta = p.cfg.gamma = 0.0;
  ModelParams<double> g = test::analytic_gradients(p);
  for (auto* m : flatten(g)) CHECK(m->isZero(0.0));

  auto q = test::make_grad_problem(8, 16, 23);
  ModelParams<double> a = test::analytic_gradients(q), b = test::analytic_gradients(q);
  const auto fa = flatten(a), fb = flatten(b);
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(*fa[i] == *fb[i]);
}

TEST_CASE("backward without a recorded forward pass fails") {
  const RuntimeModel m = RuntimeModel::init(test::tiny_config(), 1);
  Tape<float> tape;
  OutputGrads<float> d;
  ModelParams<float> g = zeros_like(m.params());
  CHECK(test::error_code_of([&] { m.backward(tape, d, g); }) == Errc::NoForwardPass);
}

TEST_CASE("external features receive no encoder parameters or gradients") {
  ModelConfig c = test::tiny_config();
  c.encoder = EncoderKind::External;
  RuntimeModel m = RuntimeModel::init(c, 1);
  visit_parameters(m.params(), [](const std::string& name, Matrix<float>&) {
    CHECK(name.rfind("encoder.", 0) == std::string::npos);
  });
}

TEST_CASE("checkpoint: round trip is bit-identical") {
  TempDir dir("ckpt");
  ModelConfig c = test::tiny_config();
  c.bc_classes = 3;
  const RuntimeModel m = RuntimeModel::init(c, 12);
  store_checkpoint(m, dir / "m.ckpt");
  const RuntimeModel back = load_checkpoint(dir / "m.ckpt");
  CHECK(nlohmann::json(back.config()) == nlohmann::json(m.config()));
  const auto in0 = random_inputs(30, 8, 1), in1 = random_inputs(30, 8, 2);
  CHECK(same_outputs(m.forward(in0, in1, 10), back.forward(in0, in1, 10)));
}

TEST_CASE("checkpoint: corrupted files are rejected with named errors") {
  TempDir dir("ckptbad");
  const RuntimeModel m = RuntimeModel::init(test::tiny_config(), 13);
  store_checkpoint(m, dir / "m.ckpt");
  std::string bytes;
  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream out(dir / name, std::ios::binary);
    out << data;
    return dir / name;
  };
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    const Errc code = test::error_code_of([&] { load_checkpoint(write("cut.ckpt", bytes.substr(0, cut))); });
    CHECK((code == Errc::BadMagic || code == Errc::MissingTensor));
  }
  std::string wrong = bytes;
  wrong[0] = 'X';
  CHECK(test::error_code_of([&] { load_checkpoint(write("magic.ckpt", wrong)); }) == Errc::BadMagic);
  std::string version = bytes;
  version[4] = 9;
  CHECK(test::error_code_of([&] { load_checkpoint(write("ver.ckpt", version)); }) == Errc::VersionMismatch);
  CHECK(test::error_code_of([&] { load_checkpoint(dir / "absent.ckpt"); }) == Errc::NotFound);
}

TEST_CASE("feature files round trip") {
  TempDir dir("feat");
  FeatureSequence f;
  f.frames = random_inputs(7, 5, 3);
  f.frame_rate = 50.0;
  write_feature_file(dir / "f.bin", f);
  const FeatureSequence g = read_feature_file(dir / "f.bin");
  CHECK(g.frames == f.frames);
  CHECK(g.frame_rate == 50.0);
}
