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

#include "vapbc/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "vapbc/error.hpp"
#include "vapbc/state_codec.hpp"

namespace vapbc {

Eigen::Index context_frames(double context_s, const ModelConfig& config) {
  if (!(context_s > 0.0)) throw Error(Errc::InvalidConfig, "context must be positive");
  const auto w = static_cast<Eigen::Index>(std::lround(context_s * config.frame_rate));
  return std::clamp<Eigen::Index>(w, 1, config.max_context);
}

PredictionFrame make_prediction(const ModelOutput<float>& out, Eigen::Index row, std::size_t index,
                                double frame_rate, Task task, int listener) {
  PredictionFrame f;
  f.index = index;
  f.t = static_cast<double>(index) / frame_rate;

  Eigen::ArrayXd bc = out.bc_logits.row(row).transpose().cast<double>().array();
  bc = (bc - bc.maxCoeff()).exp();
  bc /= bc.sum();
  if (task == Task::Timing) {
    f.p_bc = bc(1);
  } else {
    f.p_continuer = bc(kContinuer);
    f.p_assessment = bc(kAssessment);
    f.p_bc = bc(kContinuer) + bc(kAssessment);
  }
  for (int c = 0; c < 2; ++c) f.p_vad[c] = 1.0 / (1.0 + std::exp(-static_cast<double>(out.vad_logits(row, c))));

  Eigen::ArrayXd vap = out.vap_logits.row(row).transpose().cast<double>().array();
  int top = 0;
  for (int s = 1; s < kNumStates; ++s) {
    if (vap(s) > vap(top)) top = s;
  }
  f.vap_top_state = top;
  vap = (vap - vap.maxCoeff()).exp();
  vap /= vap.sum();
  f.zero_shot = zero_shot_bc_score(std::span<const double>(vap.data(), kNumStates), listener);
  return f;
}

namespace {

LogMelOptions mel_options(const ModelConfig& c) {
  LogMelOptions o;
  o.frame_rate = c.frame_rate;
  o.n_bands = c.n_mels;
  return o;
}

void check_stream_model(const RuntimeModel& model, const StreamOptions& options) {
  if (model.config().encoder != EncoderKind::Reference) {
    throw Error(Errc::ConfigMismatch, "streaming needs the reference encoder");
  }
  if (model.config().bc_classes != num_classes(options.task)) {
    throw Error(Errc::ConfigMismatch, "checkpoint has " + std::to_string(model.config().bc_classes) +
                                          " BC classes but the task needs " +
                                          std::to_string(num_classes(options.task)));
  }
  if (options.listener != 0 && options.listener != 1) throw Error(Errc::InvalidConfig, "listener must be 0 or 1");
}

Matrix<float> rows_of(const std::deque<Eigen::RowVectorXf>& rows) {
  Matrix<float> m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i];
  return m;
}

}  // namespace

StreamSession::StreamSession(std::shared_ptr<const RuntimeModel> model, StreamOptions options)
    : model_(std::move(model)),
      options_(std::move(options)),
      mel_{LogMelStream(mel_options(model_->config())), LogMelStream(mel_options(model_->config()))} {
  check_stream_model(*model_, options_);
  window_ = context_frames(options_.context_s, model_->config());
  receptive_field_ = model_->config().encoder_receptive_field();
}

void StreamSession::reset() {
  for (auto& m : mel_) m.reset();
  for (auto& q : inputs_) q.clear();
  for (auto& q : encoded_) q.clear();
  emitted_ = 0;
  closed_ = false;
}

std::size_t StreamSession::buffered_frames() const { return inputs_[0].size() + encoded_[0].size(); }

std::vector<PredictionFrame> StreamSession::push_audio(std::span<const float> channel0,
                                                       std::span<const float> channel1) {
  if (closed_) throw Error(Errc::SessionClosed, "session " + options_.session_id + " is closed");
  if (channel0.size() != channel1.size()) throw Error(Errc::LengthMismatch, "channels differ in length");
  const std::array<FeatureMatrix, 2> mel{mel_[0].push(channel0), mel_[1].push(channel1)};
  std::vector<PredictionFrame> out;
  for (Eigen::Index r = 0; r < mel[0].rows(); ++r) {
    for (int c = 0; c < 2; ++c) {
      inputs_[c].push_back(mel[c].row(r));
      // The encoder output for the newest row depends on at most
      // receptive_field_ earlier rows.
      const Matrix<float> enc = model_->encode(rows_of(inputs_[c]));
      encoded_[c].push_back(enc.bottomRows(1));
      while (static_cast<int>(inputs_[c].size()) > receptive_field_) inputs_[c].pop_front();
      while (static_cast<Eigen::Index>(encoded_[c].size()) > window_) encoded_[c].pop_front();
    }
    const ModelOutput<float> o = model_->predict_last(rows_of(encoded_[0]), rows_of(encoded_[1]));
    out.push_back(make_prediction(o, 0, emitted_++, model_->config().frame_rate, options_.task, options_.listener));
  }
  return out;
}

std::vector<PredictionFrame> offline_predictions(const RuntimeModel& model, const StereoAudio& audio,
                                                 const StreamOptions& options) {
  check_stream_model(model, options);
  const auto in0 = model_inputs(audio.channels[0], model.config(), 0).frames;
  const auto in1 = model_inputs(audio.channels[1], model.config(), 1).frames;
  const ModelOutput<float> o = model.forward(in0, in1, context_frames(options.context_s, model.config()));
  std::vector<PredictionFrame> out;
  for (Eigen::Index t = 0; t < o.num_frames(); ++t) {
    out.push_back(make_prediction(o, t, static_cast<std::size_t>(t), model.config().frame_rate, options.task,
                                  options.listener));
  }
  return out;
}

nlohmann::json to_json(const RtfReport& r) {
  return nlohmann::json{{"rtf", r.rtf},           {"audio_seconds", r.audio_seconds}, {"wall_seconds", r.wall_seconds},
                        {"p50_ms", r.p50_ms},     {"p95_ms", r.p95_ms},               {"max_ms", r.max_ms},
                        {"frames", r.frames},     {"context_s", r.context_s},         {"frame_rate", r.frame_rate}};
}

RtfReport measure_rtf(std::shared_ptr<const RuntimeModel> model, const StereoAudio& audio, double context_s,
                      double min_seconds) {
  const double seconds = audio.channels[0].size() / static_cast<double>(audio.sample_rate);
  if (audio.channels[0].empty() || seconds + 1e-9 < min_seconds) {
    throw Error(Errc::AudioTooShort, "RTF needs at least " + std::to_string(min_seconds) + " s of audio, got " +
                                         std::to_string(seconds) + " s");
  }
  if (audio.sample_rate != kSampleRate) throw Error(Errc::UnsupportedFormat, "RTF needs 16 kHz audio");
  StreamOptions options;
  options.context_s = context_s;
  options.task = model->config().bc_classes == 3 ? Task::Type : Task::Timing;
  StreamSession session(model, options);
  const std::size_t hop = static_cast<std::size_t>(kSampleRate / model->config().frame_rate);
  const std::size_t n = audio.channels[0].size();
  const std::span<const float> c0(audio.channels[0]), c1(audio.channels[1]);

  // Warm-up: long enough to fill the Transformer window, then start over.
  const std::size_t warm = std::min(n, hop * static_cast<std::size_t>(session.window_frames() + 5));
  for (std::size_t i = 0; i < warm; i += hop) {
    const std::size_t len = std::min(hop, warm - i);
    session.push_audio(c0.subspan(i, len), c1.subspan(i, len));
  }
  session.reset();

  using Clock = std::chrono::steady_clock;
  std::vector<double> latencies;
  latencies.reserve(n / hop + 1);
  const auto start = Clock::now();
  for (std::size_t i = 0; i < n; i += hop) {
    const std::size_t len = std::min(hop, n - i);
    const auto t0 = Clock::now();
    const auto frames = session.push_audio(c0.subspan(i, len), c1.subspan(i, len));
    const auto t1 = Clock::now();
    if (!frames.empty()) latencies.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();

  RtfReport r;
  r.audio_seconds = seconds;
  r.wall_seconds = wall;
  r.rtf = wall / seconds;
  r.frames = latencies.size();
  r.context_s = context_s;
  r.frame_rate = model->config().frame_rate;
  if (!latencies.empty()) {
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
      const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
      return sorted[std::min(idx, sorted.size() - 1)];
    };
    r.p50_ms = pct(0.50);
    r.p95_ms = pct(0.95);
    r.max_ms = sorted.back();
  }
  return r;
}

}  // namespace vapbc
