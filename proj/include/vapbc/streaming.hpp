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

#pragma once

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vapbc/audio.hpp"
#include "vapbc/labeling.hpp"
#include "vapbc/model.hpp"

namespace vapbc {

struct StreamOptions {
  double context_s = 5.0;  // Transformer window
  Task task = Task::Timing;
  int listener = kListenerChannel;
  std::string session_id;
};

struct PredictionFrame {
  std::size_t index = 0;
  double t = 0.0;  // seconds
  double p_bc = 0.0;
  std::optional<double> p_continuer;  // type task only
  std::optional<double> p_assessment;
  std::array<double, 2> p_vad{};
  int vap_top_state = 0;
  double zero_shot = 0.0;
};

/// Converts head outputs of one frame to a PredictionFrame.
PredictionFrame make_prediction(const ModelOutput<float>& out, Eigen::Index row, std::size_t index,
                                double frame_rate, Task task, int listener);

/// Incremental inference for one live dialogue. The encoder keeps its full
/// causal state; the Transformer sees the last `context_s` seconds of encoder
/// frames, recomputed for every new frame.
class StreamSession {
 public:
  StreamSession(std::shared_ptr<const RuntimeModel> model, StreamOptions options);

  /// Accepts any number of samples per channel (equal counts) and returns
  /// the newly completed frames.
  std::vector<PredictionFrame> push_audio(std::span<const float> channel0, std::span<const float> channel1);

  void reset();
  void close() { closed_ = true; }
  bool closed() const { return closed_; }

  std::size_t emitted() const { return emitted_; }
  Eigen::Index window_frames() const { return window_; }
  /// Feature rows currently held (encoder history plus Transformer window).
  std::size_t buffered_frames() const;
  const StreamOptions& options() const { return options_; }
  const RuntimeModel& model() const { return *model_; }

 private:
  std::shared_ptr<const RuntimeModel> model_;
  StreamOptions options_;
  Eigen::Index window_ = 0;
  int receptive_field_ = 0;
  std::array<LogMelStream, 2> mel_;
  std::array<std::deque<Eigen::RowVectorXf>, 2> inputs_;   // last receptive_field_ input rows
  std::array<std::deque<Eigen::RowVectorXf>, 2> encoded_;  // last window_ encoder rows
  std::size_t emitted_ = 0;
  bool closed_ = false;
};

/// Offline reference for a stream: one windowed forward over the whole file.
std::vector<PredictionFrame> offline_predictions(const RuntimeModel& model, const StereoAudio& audio,
                                                 const StreamOptions& options);

/// Transformer window in frames for `context_s` at the model's frame rate.
Eigen::Index context_frames(double context_s, const ModelConfig& config);

struct RtfReport {
  double rtf = 0.0;
  double audio_seconds = 0.0;
  double wall_seconds = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
  std::size_t frames = 0;
  double context_s = 0.0;
  double frame_rate = 0.0;
};

nlohmann::json to_json(const RtfReport& r);

/// Streams `audio` one frame hop at a time through a fresh session and times
/// it. A warm-up pass over the first seconds is excluded.
RtfReport measure_rtf(std::shared_ptr<const RuntimeModel> model, const StereoAudio& audio, double context_s,
                      double min_seconds = 60.0);

}  // namespace vapbc
