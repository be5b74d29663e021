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

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "vapbc/audio.hpp"
#include "vapbc/error.hpp"
#include "vapbc/model.hpp"

namespace vapbc::test {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vapbc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> sine(double freq, double amplitude, double seconds, int rate = kSampleRate) {
  std::vector<float> out(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate));
  }
  return out;
}

inline std::vector<float> noise(std::size_t n, double amplitude, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  std::vector<float> out(n);
  for (auto& x : out) x = static_cast<float>(u(g));
  return out;
}

inline StereoAudio stereo(std::vector<float> a, std::vector<float> b) {
  StereoAudio s;
  s.channels[0] = std::move(a);
  s.channels[1] = std::move(b);
  return s;
}

// Small reference-encoder model that keeps unit tests fast.
inline ModelConfig tiny_config(int d = 16, int max_context = 64) {
  ModelConfig c;
  c.d_channel = d;
  c.d_concat = 2 * d;
  c.n_heads = 4;
  c.n_channel_layers = 1;
  c.n_cross_layers = 1;
  c.ffn_mult = 2;
  c.frame_rate = 10.0;
  c.max_context = max_context;
  c.n_mels = 8;
  c.dropout = 0.0;
  return c;
}

template <typename F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected a vapbc::Error");
}

}  // namespace vapbc::test
