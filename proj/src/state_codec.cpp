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

#include "vapbc/state_codec.hpp"

#include <cmath>
#include <string>

#include "vapbc/error.hpp"

namespace vapbc {

int encode_state(const BinPattern& bins) {
  int index = 0;
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < kNumBins; ++k) {
      if (bins[c][k]) index |= 1 << state_bit(c, k);
    }
  }
  return index;
}

BinPattern decode_state(int index) {
  if (index < 0 || index >= kNumStates) {
    throw Error(Errc::OutOfRange, "state index " + std::to_string(index) + " outside [0,256)");
  }
  BinPattern bins{};
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < kNumBins; ++k) bins[c][k] = (index >> state_bit(c, k)) & 1;
  }
  return bins;
}

void BinGrid::validate() const {
  for (int k = 0; k < kNumBins; ++k) {
    if (!(boundaries_ms[k + 1] > boundaries_ms[k])) {
      throw Error(Errc::InvalidConfig, "bin boundaries must be strictly increasing");
    }
  }
  if (boundaries_ms[0] < 0.0) throw Error(Errc::InvalidConfig, "bins must start at or after 0");
  if (activity_threshold <= 0.0 || activity_threshold > 1.0) {
    throw Error(Errc::InvalidConfig, "activity threshold must be in (0, 1]");
  }
}

BinPattern project_future_activity(const VadTracks& vad, std::size_t t, double frame_rate,
                                   const BinGrid& grid) {
  BinPattern bins{};
  const std::size_t n = vad.num_frames();
  for (int k = 0; k < kNumBins; ++k) {
    const auto first = t + static_cast<std::size_t>(std::lround(grid.boundaries_ms[k] * frame_rate / 1000.0));
    const auto last = t + static_cast<std::size_t>(std::lround(grid.boundaries_ms[k + 1] * frame_rate / 1000.0));
    const std::size_t width = last - first;
    if (width == 0) continue;
    for (int c = 0; c < 2; ++c) {
      std::size_t count = 0;
      for (std::size_t f = first; f < last && f < n; ++f) count += vad.active[c][f] ? 1 : 0;
      bins[c][k] = static_cast<double>(count) >= grid.activity_threshold * static_cast<double>(width);
    }
  }
  return bins;
}

void validate_distribution(std::span<const double> dist, double tolerance) {
  if (dist.size() != kNumStates) {
    throw Error(Errc::OutOfRange, "state distribution must have 256 entries");
  }
  double sum = 0.0;
  for (double p : dist) {
    if (!(p >= 0.0)) throw Error(Errc::OutOfRange, "negative or NaN probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tolerance) {
    throw Error(Errc::OutOfRange, "distribution sums to " + std::to_string(sum));
  }
}

double bin_marginal(std::span<const double> dist, int channel, int bin) {
  if (dist.size() != kNumStates || channel < 0 || channel > 1 || bin < 0 || bin >= kNumBins) {
    throw Error(Errc::OutOfRange, "bad marginal query");
  }
  const int mask = 1 << state_bit(channel, bin);
  double p = 0.0;
  for (int s = 0; s < kNumStates; ++s) {
    if (s & mask) p += dist[s];
  }
  return p;
}

double zero_shot_bc_score(std::span<const double> dist, int listener) {
  if (listener != 0 && listener != 1) {
    throw Error(Errc::OutOfRange, "listener must be 0 or 1");
  }
  const int speaker = 1 - listener;
  const double listener_near =
      (bin_marginal(dist, listener, 0) + bin_marginal(dist, listener, 1) +
       bin_marginal(dist, listener, 2)) / 3.0;
  const double speaker_late = bin_marginal(dist, speaker, 3);
  return 0.5 * (listener_near + speaker_late);
}

}  // namespace vapbc
