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
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace vapbc {

inline constexpr int kSampleRate = 16000;
inline constexpr int kSpeakerChannel = 0;
inline constexpr int kListenerChannel = 1;

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two-channel PCM. Channel 0 carries the speaker (user), channel 1 the
/// listener whose backchannels are predicted.
struct StereoAudio {
  std::array<std::vector<float>, 2> channels;
  int sample_rate = kSampleRate;

  std::size_t num_samples() const { return channels[0].size(); }
  double duration() const { return static_cast<double>(num_samples()) / sample_rate; }

  /// Throws UnsupportedFormat / LengthMismatch / OutOfRange on violated invariants.
  void validate() const;
};

struct FeatureSequence {
  FeatureMatrix frames;  // T x D
  double frame_rate = 10.0;
  int channel_id = 0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

StereoAudio read_wav_stereo(const std::filesystem::path& path);

enum class WavEncoding { Pcm16, Float32 };

void write_wav_stereo(const std::filesystem::path& path, const StereoAudio& audio,
                      WavEncoding encoding = WavEncoding::Pcm16);

/// Rounds every sample to the 16-bit grid used by the PCM16 writer, so a
/// write/read cycle reproduces the samples bit for bit.
void quantize_pcm16(StereoAudio& audio);

struct LogMelOptions {
  int sample_rate = kSampleRate;
  double frame_rate = 10.0;
  int n_bands = 40;
  double window_s = 0.025;
};

inline constexpr float kLogFloor = 1e-10f;

/// Causal log-mel filterbank. Frame t analyses the 25 ms of audio ending at
/// sample (t + 1) * hop; samples before the stream start are zeros.
FeatureSequence log_mel(std::span<const float> samples, const LogMelOptions& options,
                        int channel_id = 0);

namespace detail {
class MelAnalyzer;
}

/// Incremental counterpart of log_mel producing identical frames.
class LogMelStream {
 public:
  explicit LogMelStream(const LogMelOptions& options);
  ~LogMelStream();
  LogMelStream(LogMelStream&&) noexcept;
  LogMelStream& operator=(LogMelStream&&) noexcept;

  /// Appends samples and returns every newly completed frame (rows).
  FeatureMatrix push(std::span<const float> samples);
  void reset();

  int hop() const { return hop_; }
  const LogMelOptions& options() const { return options_; }

 private:
  LogMelOptions options_;
  std::unique_ptr<detail::MelAnalyzer> analyzer_;
  int hop_;
  int window_;
  std::vector<float> history_;  // last `window_` samples ending at the frame boundary
  std::vector<float> pending_;  // samples of the frame in progress
};

/// Per-window RMS for consecutive windows of `hop_s` seconds. The tail window
/// may be partial.
std::vector<double> rms_contour(std::span<const float> samples, int sample_rate, double hop_s);

/// Equalises the windowed RMS of one channel to the RMS of its non-silent
/// windows. Windows quieter than 1e-4 RMS pass through unchanged.
StereoAudio flatten_intensity(const StereoAudio& audio, int channel, double window_ms = 50.0);

}  // namespace vapbc
