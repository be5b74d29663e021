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

#include <algorithm>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "vapbc/labeling.hpp"
#include "vapbc/synth.hpp"

using namespace vapbc;
using vapbc::test::TempDir;

namespace {

SynthConfig short_config(double seconds = 120.0) {
  SynthConfig c;
  c.session_seconds = seconds;
  return c;
}

// Speech segments found from the speaker's 10 ms energy contour.
struct Segment {
  double start = 0.0, end = 0.0;
  std::vector<double> rms;  // 10 ms windows
};

std::vector<Segment> detect_segments(const std::vector<float>& x) {
  const double hop = 0.01;
  const auto rms = rms_contour(x, kSampleRate, hop);
  std::vector<Segment> out;
  const double floor = 1e-3;
  const int min_pause = 20;  // 200 ms of silence separates utterances
  std::size_t i = 0;
  while (i < rms.size()) {
    if (rms[i] < floor) {
      ++i;
      continue;
    }
    Segment s;
    s.start = i * hop;
    std::size_t quiet = 0, j = i;
    for (; j < rms.size() && quiet < static_cast<std::size_t>(min_pause); ++j) {
      quiet = rms[j] < floor ? quiet + 1 : 0;
      s.rms.push_back(rms[j]);
    }
    s.rms.resize(s.rms.size() - quiet);
    s.end = s.start + s.rms.size() * hop;
    out.push_back(std::move(s));
    i = j;
  }
  return out;
}

// Intensity peak: a 200 ms stretch well above the segment's median level.
bool peak_detected(const Segment& s) {
  std::vector<double> sorted = s.rms;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double median = sorted[sorted.size() / 2];
  int run = 0;
  for (double r : s.rms) {
    run = r > 1.6 * median ? run + 1 : 0;
    if (run >= 20) return true;
  }
  return false;
}

struct Counts {
  double tp = 0, fp = 0, fn = 0;
  double f1() const { return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn); }
  void add(bool pred, bool gold) {
    tp += pred && gold;
    fp += pred && !gold;
    fn += !pred && gold;
  }
};

}  // namespace

TEST_CASE("generate_dialogue is deterministic per seed") {
  const SynthConfig c = short_config(60.0);
  const Dialogue a = generate_dialogue(c, 42), b = generate_dialogue(c, 42), other = generate_dialogue(c, 43);
  CHECK(a.audio.channels == b.audio.channels);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    CHECK(a.events[i].onset == b.events[i].onset);
    CHECK(a.events[i].kind == b.events[i].kind);
  }
  CHECK(a.audio.channels != other.audio.channels);
  CHECK(session_seed(1, 0) == session_seed(1, 0));
  CHECK(session_seed(1, 0) != session_seed(1, 1));
  CHECK(session_seed(1, 0) != session_seed(2, 0));
}

TEST_CASE("zero assessment rate yields no assessment events") {
  SynthConfig c = short_config(300.0);
  c.assessment_rate = 0.0;
  const Dialogue d = generate_dialogue(c, 1);
  CHECK_FALSE(d.events.empty());
  for (const auto& e : d.events) CHECK(e.kind == BcKind::Continuer);
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.continuer_rate = 0.9;
  c.assessment_rate = 0.2;
  CHECK(test::error_code_of([&] { generate_dialogue(c, 1); }) == Errc::InvalidConfig);
  SynthConfig d;
  d.delay_min = 0.0;
  CHECK(test::error_code_of([&] { d.validate(); }) == Errc::InvalidConfig);
  SynthConfig e;
  e.amplitude = 0.5;  // peak would clip
  CHECK(test::error_code_of([&] { e.validate(); }) == Errc::InvalidConfig);
  const nlohmann::json j = SynthConfig{};
  CHECK(j.get<SynthConfig>().peak_gain == SynthConfig{}.peak_gain);
}

TEST_CASE("an 8-minute session has a positive frame rate in [5%, 15%] and a 3:1 event mix") {
  const SynthConfig c;  // 480 s sessions
  std::array<std::size_t, 3> kinds{};
  for (std::uint64_t s = 0; s < 6; ++s) {
    const Dialogue d = generate_dialogue(c, session_seed(c.seed, s));
    const std::size_t frames = frame_count(c.session_seconds, 10.0);
    const BcTracks tracks = make_bc_labels(d.events, frames, 10.0, LabelOptions{});
    // Independent count: frames starting within 0.5 s before an onset.
    std::size_t positives = 0, unmasked = 0;
    for (std::size_t f = 0; f < frames; ++f) {
      const double start = f / 10.0;
      bool pos = false, inside = false;
      for (const auto& e : d.events) {
        pos |= start >= e.onset - 0.5 - 1e-9 && start < e.onset - 1e-9;
        inside |= start >= e.onset - 1e-9 && start < e.offset - 1e-9;
      }
      if (inside && !pos) continue;
      ++unmasked;
      positives += pos;
    }
    const double rate = static_cast<double>(positives) / static_cast<double>(unmasked);
    FrameLabels fl;
    fl.bc_class = tracks.bc_class;
    fl.bc_mask = tracks.bc_mask;
    CHECK(positive_rate(fl, 1) == doctest::Approx(rate).epsilon(0.02));
    CHECK(rate >= 0.05);
    CHECK(rate <= 0.15);
    for (const auto& e : d.events) ++kinds[static_cast<int>(e.kind)];
  }
  const double ratio = static_cast<double>(kinds[0]) / static_cast<double>(kinds[1]);
  INFO("continuer " << kinds[0] << " assessment " << kinds[1]);
  CHECK(ratio >= 2.5);
  CHECK(ratio <= 3.5);
  CHECK(kinds[2] == 0);
}

TEST_CASE("annotations describe the listener audio to within 10 ms") {
  const Dialogue d = generate_dialogue(short_config(240.0), 7);
  const auto& listener = d.audio.channels[kListenerChannel];
  for (const auto& e : d.events) {
    const auto a = static_cast<std::size_t>(std::lround(e.onset * kSampleRate));
    const auto b = static_cast<std::size_t>(std::lround(e.offset * kSampleRate));
    double energy = 0.0;
    for (std::size_t n = a; n < b; ++n) energy += static_cast<double>(listener[n]) * listener[n];
    CHECK(std::sqrt(energy / static_cast<double>(b - a)) > 1e-3);
    CHECK(e.channel == kListenerChannel);
    CHECK(e.offset > e.onset);
  }
  std::size_t stray = 0;
  for (std::size_t n = 0; n < listener.size(); ++n) {
    if (listener[n] == 0.0f) continue;
    const double t = static_cast<double>(n) / kSampleRate;
    const bool covered = std::any_of(d.events.begin(), d.events.end(),
                                     [&](const BcEvent& e) { return t >= e.onset - 0.01 && t <= e.offset + 0.01; });
    stray += !covered;
  }
  CHECK(stray == 0);
  // Speaker VAD matches the utterances and listener VAD matches the events.
  REQUIRE(d.vad[kSpeakerChannel].size() == d.utterances.size());
  REQUIRE(d.vad[kListenerChannel].size() == d.events.size());
}

TEST_CASE("cue timing: every event starts 0.3-0.7 s after its cue") {
  const Dialogue d = generate_dialogue(short_config(300.0), 3);
  std::size_t matched = 0;
  for (const auto& u : d.utterances) {
    if (u.cue == Cue::None) continue;
    const double cue_end = u.cue == Cue::Continuer ? u.end : u.peak_end;
    const BcKind kind = u.cue == Cue::Continuer ? BcKind::Continuer : BcKind::Assessment;
    for (const auto& e : d.events) {
      if (e.kind == kind && e.onset - cue_end >= 0.3 - 1e-3 && e.onset - cue_end <= 0.7 + 1e-3) {
        ++matched;
        break;
      }
    }
  }
  CHECK(matched == d.events.size());
}

TEST_CASE("cues are learnable: a pause / intensity-peak stump predicts events with F1 > 0.6") {
  const Dialogue d = generate_dialogue(short_config(480.0), 11);
  const auto segments = detect_segments(d.audio.channels[kSpeakerChannel]);
  REQUIRE(segments.size() == d.utterances.size());
  Counts pause_rule, peak_rule;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const double next = i + 1 < segments.size() ? segments[i + 1].start : 1e9;
    const bool pause = next - segments[i].end >= 0.5;
    bool continuer = false, assessment = false;
    for (const auto& e : d.events) {
      continuer |= e.kind == BcKind::Continuer && e.onset >= segments[i].end && e.onset < next;
      assessment |= e.kind == BcKind::Assessment && e.onset >= segments[i].start && e.onset < segments[i].end + 0.8;
    }
    pause_rule.add(pause, continuer || assessment);
    peak_rule.add(peak_detected(segments[i]), assessment);
  }
  INFO("pause stump F1 " << pause_rule.f1() << " peak stump F1 " << peak_rule.f1());
  CHECK(pause_rule.f1() > 0.6);
  CHECK(peak_rule.f1() > 0.6);
}

TEST_CASE("flattening intensity removes the assessment cue (peak detector F1 < 0.2)") {
  const Dialogue d = generate_dialogue(short_config(480.0), 11);
  const StereoAudio flat = flatten_intensity(d.audio, kSpeakerChannel);
  const auto segments = detect_segments(flat.channels[kSpeakerChannel]);
  REQUIRE(segments.size() == d.utterances.size());
  Counts c;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    c.add(peak_detected(segments[i]), d.utterances[i].cue == Cue::Assessment);
  }
  INFO("flattened peak F1 " << c.f1());
  CHECK(c.f1() < 0.2);
  CHECK(flat.channels[kListenerChannel] == d.audio.channels[kListenerChannel]);
}

TEST_CASE("flat pitch changes only the speaker's F0") {
  SynthConfig c = short_config(60.0);
  const Dialogue a = generate_dialogue(c, 5);
  c.flat_pitch = true;
  const Dialogue b = generate_dialogue(c, 5);
  CHECK(a.audio.channels[kListenerChannel] == b.audio.channels[kListenerChannel]);
  CHECK(a.audio.channels[kSpeakerChannel] != b.audio.channels[kSpeakerChannel]);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) CHECK(a.events[i].onset == b.events[i].onset);
}

TEST_CASE("generate_corpus writes the layout and a stable digest") {
  TempDir a("corpus_a"), b("corpus_b");
  SynthConfig c = short_config(30.0);
  c.sessions = {3, 1, 1};
  const CorpusSummary sa = generate_corpus(c, a.path());
  const CorpusSummary sb = generate_corpus(c, b.path());
  CHECK(sa.sessions == 5);
  CHECK(sa.digest == sb.digest);
  CHECK(sa.digest.size() == 64);
  CHECK(corpus_digest(a.path()) == sa.digest);
  const auto manifest = read_manifest(a.path());
  CHECK(manifest.size() == 5);
  CHECK(std::count_if(manifest.begin(), manifest.end(), [](const auto& m) { return m.second == Split::Train; }) == 3);
  for (const auto& [name, split] : manifest) {
    CHECK(std::filesystem::exists(a.path() / name / "audio.wav"));
    CHECK(std::filesystem::exists(a.path() / name / "bc.jsonl"));
    CHECK(std::filesystem::exists(a.path() / name / "vad.jsonl"));
  }
  CHECK(std::filesystem::exists(a.path() / "summary.json"));

  // Touching one byte of one session changes the digest.
  {
    std::ofstream f(a.path() / manifest[0].first / "bc.jsonl", std::ios::app);
    f << "\n";
  }
  CHECK(corpus_digest(a.path()) != sa.digest);

  SynthConfig other = c;
  other.seed = 2;
  TempDir o("corpus_o");
  CHECK(generate_corpus(other, o.path()).digest != sa.digest);
}
