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
#include <cstdint>
#include <span>
#include <vector>

namespace vapbc {

inline constexpr int kNumStates = 256;
inline constexpr int kNumBins = 4;

/// Future voice activity of both participants: bins[channel][k] with k = 0
/// the nearest interval.
using BinPattern = std::array<std::array<bool, kNumBins>, 2>;

/// Index layout: channel 0 is the high nibble, nearest bin most significant,
/// i.e. bit (7 - (4 * channel + bin)).
constexpr int state_bit(int channel, int bin) { return 7 - (4 * channel + bin); }

int encode_state(const BinPattern& bins);
BinPattern decode_state(int index);

struct BinGrid {
  std::array<double, kNumBins + 1> boundaries_ms{0.0, 200.0, 600.0, 1200.0, 2000.0};
  double activity_threshold = 0.5;

  double horizon_ms() const { return boundaries_ms.back(); }
  void validate() const;
};

/// Per-channel voice activity tracks, one entry per frame.
struct VadTracks {
  std::array<std::vector<std::uint8_t>, 2> active;
  std::size_t num_frames() const { return active[0].size(); }
};

/// Discretises the activity in the frames starting at `t` into the 8-bin
/// pattern. Frames past the end of the track count as inactive.
BinPattern project_future_activity(const VadTracks& vad, std::size_t t, double frame_rate,
                                   const BinGrid& grid = {});

/// Probability of the states whose (channel, bin) flag is set.
double bin_marginal(std::span<const double> dist, int channel, int bin);

/// Zero-shot backchannel score: the mean of (mean listener marginal over bins
/// 0..2) and (speaker marginal of bin 3).
double zero_shot_bc_score(std::span<const double> dist, int listener);

/// Throws OutOfRange unless `dist` has 256 non-negative entries summing to 1.
void validate_distribution(std::span<const double> dist, double tolerance = 1e-6);

}  // namespace vapbc
