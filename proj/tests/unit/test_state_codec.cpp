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

#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "vapbc/state_codec.hpp"

using namespace vapbc;

namespace {

std::vector<double> point_mass(int s) {
  std::vector<double> d(kNumStates, 0.0);
  d[static_cast<std::size_t>(s)] = 1.0;
  return d;
}

std::vector<double> random_distribution(std::mt19937_64& g) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> d(kNumStates);
  double sum = 0.0;
  for (auto& x : d) sum += (x = e(g));
  for (auto& x : d) x /= sum;
  return d;
}

// Brute force: test the bit of every state through decode_state.
double marginal_oracle(const std::vector<double>& d, int c, int k) {
  double p = 0.0;
  for (int s = 0; s < kNumStates; ++s) {
    if (decode_state(s)[c][k]) p += d[static_cast<std::size_t>(s)];
  }
  return p;
}

VadTracks track(std::size_t n) {
  VadTracks v;
  v.active[0].assign(n, 0);
  v.active[1].assign(n, 0);
  return v;
}

}  // namespace

TEST_CASE("encode_state examples") {
  BinPattern b{};
  CHECK(encode_state(b) == 0);
  b[0] = {true, true, true, true};
  CHECK(encode_state(b) == 240);
  b[1] = {true, true, true, true};
  CHECK(encode_state(b) == 255);
  BinPattern near{};
  near[0][0] = true;
  CHECK(encode_state(near) == 128);
  BinPattern far1{};
  far1[1][3] = true;
  CHECK(encode_state(far1) == 1);
}

TEST_CASE("decode_state examples and range") {
  CHECK(decode_state(0) == BinPattern{});
  BinPattern all{};
  all[0] = all[1] = {true, true, true, true};
  CHECK(decode_state(255) == all);
  BinPattern c0{};
  c0[0] = {true, true, true, true};
  CHECK(decode_state(240) == c0);
  CHECK(test::error_code_of([] { decode_state(256); }) == Errc::OutOfRange);
  CHECK(test::error_code_of([] { decode_state(-1); }) == Errc::OutOfRange);
}

TEST_CASE("exhaustive round trip") {
  for (int s = 0; s < kNumStates; ++s) CHECK(encode_state(decode_state(s)) == s);
}

TEST_CASE("project_future_activity examples at 50 Hz") {
  VadTracks v = track(200);
  CHECK(encode_state(project_future_activity(v, 10, 50.0)) == 0);
  for (std::size_t t = 0; t < 200; ++t) v.active[0][t] = 1;
  CHECK(encode_state(project_future_activity(v, 10, 50.0)) == 240);

  // Active for the first 100 ms only: half of bin 0 at threshold 0.5.
  VadTracks h = track(200);
  for (std::size_t t = 20; t < 25; ++t) h.active[0][t] = 1;
  const BinPattern b = project_future_activity(h, 20, 50.0);
  CHECK(b[0] == std::array<bool, 4>{true, false, false, false});
  CHECK(encode_state(b) == 128);
  // One frame fewer drops below the threshold.
  h.active[0][24] = 0;
  CHECK(encode_state(project_future_activity(h, 20, 50.0)) == 0);
}

TEST_CASE("project_future_activity: frames past the end count as inactive") {
  VadTracks v = track(50);
  for (std::size_t t = 0; t < 50; ++t) v.active[1][t] = 1;
  // At t = 40 only 200 ms of the future remain: bin 0 full, rest empty.
  CHECK(encode_state(project_future_activity(v, 40, 50.0)) == 0b00001000);
  CHECK(encode_state(project_future_activity(v, 49, 50.0)) == 0);
}

TEST_CASE("project_future_activity agrees between 50 Hz and 10 Hz on bin-aligned input") {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 50; ++trial) {
    // 200 ms segments, aligned with every bin boundary.
    const std::size_t segs = 40;
    std::vector<std::array<int, 2>> on(segs);
    for (auto& s : on) s = {static_cast<int>(g() % 2), static_cast<int>(g() % 2)};
    VadTracks fast = track(segs * 10), slow = track(segs * 2);
    for (std::size_t s = 0; s < segs; ++s) {
      for (int c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < 10; ++i) fast.active[c][s * 10 + i] = static_cast<std::uint8_t>(on[s][c]);
        for (std::size_t i = 0; i < 2; ++i) slow.active[c][s * 2 + i] = static_cast<std::uint8_t>(on[s][c]);
      }
    }
    for (std::size_t s = 0; s < segs; ++s) {
      CHECK(project_future_activity(fast, s * 10, 50.0) == project_future_activity(slow, s * 2, 10.0));
    }
  }
}

TEST_CASE("bin_marginal examples and brute-force agreement") {
  const std::vector<double> uniform(kNumStates, 1.0 / kNumStates);
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < 4; ++k) {
      CHECK(bin_marginal(point_mass(255), c, k) == 1.0);
      CHECK(bin_marginal(point_mass(0), c, k) == 0.0);
      CHECK(bin_marginal(uniform, c, k) == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  std::mt19937_64 g(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = random_distribution(g);
    for (int c = 0; c < 2; ++c) {
      for (int k = 0; k < 4; ++k) CHECK(std::abs(bin_marginal(d, c, k) - marginal_oracle(d, c, k)) <= 1e-12);
    }
  }
}

TEST_CASE("bin_marginal is linear in the distribution") {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_distribution(g), b = random_distribution(g);
    const double w = u(g);
    std::vector<double> mix(kNumStates);
    for (int s = 0; s < kNumStates; ++s) mix[s] = w * a[s] + (1 - w) * b[s];
    const int c = trial % 2, k = trial % 4;
    CHECK(bin_marginal(mix, c, k) == doctest::Approx(w * bin_marginal(a, c, k) + (1 - w) * bin_marginal(b, c, k)));
  }
}

TEST_CASE("zero_shot_bc_score examples") {
  BinPattern best{};
  best[kListenerChannel] = {true, true, true, false};
  best[kSpeakerChannel][3] = true;
  CHECK(zero_shot_bc_score(point_mass(encode_state(best)), kListenerChannel) == 1.0);
  CHECK(zero_shot_bc_score(point_mass(0), kListenerChannel) == 0.0);
  const std::vector<double> uniform(kNumStates, 1.0 / kNumStates);
  CHECK(std::abs(zero_shot_bc_score(uniform, kListenerChannel) - 0.5) <= 1e-9);
  // Listener bin 3 and speaker bins 0..2 do not contribute.
  BinPattern other{};
  other[kListenerChannel][3] = true;
  other[kSpeakerChannel] = {true, true, true, false};
  CHECK(zero_shot_bc_score(point_mass(encode_state(other)), kListenerChannel) == 0.0);
  CHECK(test::error_code_of([&] { zero_shot_bc_score(uniform, 2); }) == Errc::OutOfRange);
}

TEST_CASE("zero_shot_bc_score stays in [0,1] and is monotone in its marginals") {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 2000; ++trial) {
    auto d = random_distribution(g);
    const double s = zero_shot_bc_score(d, kListenerChannel);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    // Moving mass from a state to one with an extra contributing bit never lowers the score.
    const int from = static_cast<int>(g() % kNumStates);
    BinPattern b = decode_state(from);
    b[kListenerChannel][g() % 3] = true;
    const int to = encode_state(b);
    d[static_cast<std::size_t>(to)] += d[static_cast<std::size_t>(from)];
    d[static_cast<std::size_t>(from)] = 0.0;
    if (to == from) continue;
    CHECK(zero_shot_bc_score(d, kListenerChannel) >= s - 1e-12);
  }
}

TEST_CASE("validate_distribution and grid validation") {
  CHECK_NOTHROW(validate_distribution(point_mass(3)));
  CHECK(test::error_code_of([] { validate_distribution(std::vector<double>(10, 0.1)); }) == Errc::OutOfRange);
  CHECK(test::error_code_of([] { validate_distribution(std::vector<double>(kNumStates, 0.0)); }) == Errc::OutOfRange);
  BinGrid g;
  g.boundaries_ms = {0, 600, 200, 1200, 2000};
  CHECK(test::error_code_of([&] { g.validate(); }) == Errc::InvalidConfig);
}
