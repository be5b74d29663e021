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

#include "vapbc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <unsupported/Eigen/FFT>

#include "vapbc/error.hpp"

namespace vapbc {

void StereoAudio::validate() const {
  if (sample_rate <= 0) {
    throw Error(Errc::UnsupportedFormat, "sample rate must be positive");
  }
  if (channels[0].size() != channels[1].size()) {
    throw Error(Errc::LengthMismatch, "channel lengths differ");
  }
  for (const auto& channel : channels) {
    for (float s : channel) {
      if (!std::isfinite(s)) {
        throw Error(Errc::OutOfRange, "non-finite sample");
      }
    }
  }
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int checked_hop(const LogMelOptions& options) {
  if (options.frame_rate != 10.0 && options.frame_rate != 50.0) {
    throw Error(Errc::InvalidConfig, "frame rate must be 10 or 50 Hz");
  }
  if (options.n_bands < 8) {
    throw Error(Errc::InvalidConfig, "at least 8 mel bands required");
  }
  return static_cast<int>(std::lround(options.sample_rate / options.frame_rate));
}

}  // namespace

namespace detail {

// Hann-windowed power spectrum followed by a triangular mel filterbank.
class MelAnalyzer {
 public:
  explicit MelAnalyzer(const LogMelOptions& options)
      : window_len_(static_cast<int>(std::lround(options.window_s * options.sample_rate))) {
    fft_size_ = 1;
    while (fft_size_ < window_len_) fft_size_ *= 2;
    window_.resize(window_len_);
    for (int n = 0; n < window_len_; ++n) {
      window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (window_len_ - 1));
    }
    const int n_bins = fft_size_ / 2 + 1;
    const double mel_max = hz_to_mel(options.sample_rate / 2.0);
    std::vector<double> edges(options.n_bands + 2);
    for (int i = 0; i < options.n_bands + 2; ++i) {
      edges[i] = mel_to_hz(mel_max * i / (options.n_bands + 1));
    }
    filters_ = Eigen::MatrixXd::Zero(options.n_bands, n_bins);
    for (int b = 0; b < options.n_bands; ++b) {
      for (int k = 0; k < n_bins; ++k) {
        const double hz = static_cast<double>(k) * options.sample_rate / fft_size_;
        double w = 0.0;
        if (hz > edges[b] && hz <= edges[b + 1]) {
          w = (hz - edges[b]) / (edges[b + 1] - edges[b]);
        } else if (hz > edges[b + 1] && hz < edges[b + 2]) {
          w = (edges[b + 2] - hz) / (edges[b + 2] - edges[b + 1]);
        }
        filters_(b, k) = w;
      }
    }
    frame_.assign(fft_size_, 0.0);
  }

  int window_len() const { return window_len_; }

  // `samples` holds exactly window_len() values.
  template <typename Row>
  void analyze(std::span<const float> samples, Row&& out) {
    std::fill(frame_.begin(), frame_.end(), 0.0);
    for (int n = 0; n < window_len_; ++n) frame_[n] = window_[n] * samples[n];
    fft_.fwd(spectrum_, frame_);
    Eigen::VectorXd power(fft_size_ / 2 + 1);
    for (int k = 0; k <= fft_size_ / 2; ++k) power[k] = std::norm(spectrum_[k]) / window_len_;
    const Eigen::VectorXd bands = filters_ * power;
    for (Eigen::Index b = 0; b < bands.size(); ++b) {
      out(b) = static_cast<float>(std::log(std::max(bands[b], static_cast<double>(kLogFloor))));
    }
  }

 private:
  int window_len_;
  int fft_size_;
  std::vector<double> window_;
  Eigen::MatrixXd filters_;
  std::vector<double> frame_;
  std::vector<std::complex<double>> spectrum_;
  Eigen::FFT<double> fft_;
};

}  // namespace detail

FeatureSequence log_mel(std::span<const float> samples, const LogMelOptions& options,
                        int channel_id) {
  const int hop = checked_hop(options);
  if (samples.empty()) {
    throw Error(Errc::EmptyAudio, "log_mel on empty audio");
  }
  detail::MelAnalyzer analyzer(options);
  const auto win = static_cast<std::ptrdiff_t>(analyzer.window_len());
  const auto frames = static_cast<Eigen::Index>(samples.size() / hop);

  FeatureSequence out;
  out.frame_rate = options.frame_rate;
  out.channel_id = channel_id;
  out.frames.resize(frames, options.n_bands);
  std::vector<float> window(win);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const std::ptrdiff_t end = (t + 1) * hop;
    for (std::ptrdiff_t n = 0; n < win; ++n) {
      const std::ptrdiff_t idx = end - win + n;
      window[n] = idx < 0 ? 0.0f : samples[idx];
    }
    analyzer.analyze(window, out.frames.row(t));
  }
  return out;
}

LogMelStream::LogMelStream(const LogMelOptions& options)
    : options_(options),
      analyzer_(std::make_unique<detail::MelAnalyzer>(options)),
      hop_(checked_hop(options)),
      window_(static_cast<int>(std::lround(options.window_s * options.sample_rate))) {
  reset();
}

LogMelStream::~LogMelStream() = default;
LogMelStream::LogMelStream(LogMelStream&&) noexcept = default;
LogMelStream& LogMelStream::operator=(LogMelStream&&) noexcept = default;

void LogMelStream::reset() {
  history_.assign(window_, 0.0f);
  pending_.clear();
  pending_.reserve(hop_);
}

FeatureMatrix LogMelStream::push(std::span<const float> samples) {
  const std::size_t completed = (pending_.size() + samples.size()) / hop_;
  FeatureMatrix out(static_cast<Eigen::Index>(completed), options_.n_bands);
  std::vector<float> window(window_);
  Eigen::Index row = 0;
  for (float s : samples) {
    pending_.push_back(s);
    if (static_cast<int>(pending_.size()) < hop_) continue;
    // Window = tail of (history_ ++ pending_).
    const int from_pending = std::min(hop_, window_);
    const int from_history = window_ - from_pending;
    std::copy(history_.end() - from_history, history_.end(), window.begin());
    std::copy(pending_.end() - from_pending, pending_.end(), window.begin() + from_history);
    analyzer_->analyze(window, out.row(row++));
    history_ = window;
    pending_.clear();
  }
  return out;
}

std::vector<double> rms_contour(std::span<const float> samples, int sample_rate, double hop_s) {
  if (hop_s <= 0.0) {
    throw Error(Errc::InvalidConfig, "hop must be positive");
  }
  if (samples.empty()) {
    throw Error(Errc::EmptyAudio, "rms_contour on empty audio");
  }
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(hop_s * sample_rate)));
  std::vector<double> out;
  out.reserve(samples.size() / hop + 1);
  for (std::size_t begin = 0; begin < samples.size(); begin += hop) {
    const std::size_t end = std::min(samples.size(), begin + hop);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += static_cast<double>(samples[i]) * samples[i];
    out.push_back(std::sqrt(acc / static_cast<double>(end - begin)));
  }
  return out;
}

StereoAudio flatten_intensity(const StereoAudio& audio, int channel, double window_ms) {
  if (channel != 0 && channel != 1) {
    throw Error(Errc::OutOfRange, "channel must be 0 or 1");
  }
  constexpr double kSilenceRms = 1e-4;
  constexpr double kRampMs = 2.5;

  StereoAudio out = audio;
  const auto& in = audio.channels[channel];
  if (in.empty()) return out;

  const auto win = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(window_ms * audio.sample_rate / 1000.0)));
  const std::vector<double> rms = rms_contour(in, audio.sample_rate, win / static_cast<double>(audio.sample_rate));

  double active_energy = 0.0;
  std::size_t active_samples = 0;
  for (std::size_t w = 0; w < rms.size(); ++w) {
    if (rms[w] < kSilenceRms) continue;
    const std::size_t len = std::min(win, in.size() - w * win);
    active_energy += rms[w] * rms[w] * static_cast<double>(len);
    active_samples += len;
  }
  if (active_samples == 0) return out;
  const double target = std::sqrt(active_energy / static_cast<double>(active_samples));

  std::vector<double> gain(rms.size(), 1.0);
  for (std::size_t w = 0; w < rms.size(); ++w) {
    if (rms[w] >= kSilenceRms) gain[w] = target / rms[w];
  }

  // Piecewise-constant gain with short linear crossfades around window edges.
  const auto ramp = std::min<std::size_t>(
      win / 2, static_cast<std::size_t>(std::lround(kRampMs * audio.sample_rate / 1000.0)));
  auto& dst = out.channels[channel];
  auto render = [&] {
    for (std::size_t n = 0; n < in.size(); ++n) {
      const std::size_t w = n / win;
      const std::size_t offset = n - w * win;
      double g = gain[w];
      if (ramp > 0) {
        if (offset < ramp && w > 0) {
          const double x = (static_cast<double>(offset + ramp) + 0.5) / (2.0 * ramp);
          g = gain[w - 1] + (gain[w] - gain[w - 1]) * x;
        } else if (offset + ramp >= win && w + 1 < gain.size()) {
          const double x = (static_cast<double>(offset + ramp - win) + 0.5) / (2.0 * ramp);
          g = gain[w] + (gain[w + 1] - gain[w]) * x;
        }
      }
      dst[n] = static_cast<float>(in[n] * g);
    }
  };
  // The crossfades leak neighbouring gains into each window; a few
  // corrective passes bring every active window back onto the target.
  for (int pass = 0; pass < 8; ++pass) {
    render();
    const std::vector<double> got = rms_contour(dst, audio.sample_rate, win / static_cast<double>(audio.sample_rate));
    double worst = 0.0;
    for (std::size_t w = 0; w < rms.size(); ++w) {
      if (rms[w] < kSilenceRms || got[w] <= 0.0) continue;
      worst = std::max(worst, std::abs(got[w] / target - 1.0));
      gain[w] *= target / got[w];
    }
    if (worst < 1e-4) break;
  }
  return out;
}

}  // namespace vapbc
