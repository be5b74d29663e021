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
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vapbc/audio.hpp"
#include "vapbc/labeling.hpp"

namespace vapbc {

/// Two-channel tone-burst dialogues. The speaker (channel 0) produces
/// harmonic-tone utterances; the listener (channel 1) answers with short
/// bursts. A falling utterance-final F0 followed by a pause cues a continuer,
/// a loud segment inside the utterance cues an assessment.
struct SynthConfig {
  std::uint64_t seed = 1;
  double session_seconds = 480.0;
  std::array<int, 3> sessions{40, 5, 5};  // train, val, test
  double f0_min = 100.0;
  double f0_max = 200.0;
  double utterance_min = 2.7;
  double utterance_max = 5.0;
  double pause_min = 0.6;
  double pause_max = 1.6;
  double continuer_rate = 0.6;   // share of utterances ending in the continuer cue
  double assessment_rate = 0.2;  // share carrying the intensity cue
  double delay_min = 0.3;        // cue end -> backchannel onset
  double delay_max = 0.7;
  double bc_min = 0.2;
  double bc_max = 0.4;
  double final_fall = 0.6;     // F0 ratio reached at the end of a continuer cue
  double final_rise = 1.3;     // F0 ratio at the end of other utterances
  double cue_span = 0.6;       // seconds of utterance-final F0 movement
  double peak_gain = 2.5;
  double peak_min = 0.4;
  double peak_max = 0.6;
  double amplitude = 0.2;
  bool flat_pitch = false;  // constant F0 per utterance, everything else unchanged

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

enum class Cue { None, Continuer, Assessment };

struct Utterance {
  double start = 0.0;
  double end = 0.0;
  Cue cue = Cue::None;
  double peak_start = 0.0;  // intensity cue, when present
  double peak_end = 0.0;
};

struct Dialogue {
  StereoAudio audio;
  std::vector<BcEvent> events;
  VadSegments vad;
  std::vector<Utterance> utterances;
};

/// Per-session seed derived from the corpus seed and the session index.
std::uint64_t session_seed(std::uint64_t corpus_seed, std::size_t index);

Dialogue generate_dialogue(const SynthConfig& cfg, std::uint64_t seed);

struct CorpusSummary {
  std::size_t sessions = 0;
  std::array<std::size_t, 3> events{};  // continuer, assessment, other
  double continuer_assessment_ratio = 0.0;
  double positive_rate = 0.0;  // 10 Hz timing labels, 0.5 s lead
  std::string digest;
};

nlohmann::json to_json(const CorpusSummary& s);

/// Writes manifest.json, summary.json and one directory per session
/// (audio.wav, bc.jsonl, vad.jsonl) under `out`.
CorpusSummary generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out);

/// SHA-256 over the manifest and every session file, in sorted order.
std::string corpus_digest(const std::filesystem::path& root);

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace vapbc
