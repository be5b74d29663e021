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
#include <iosfwd>
#include <string>
#include <vector>

#include "vapbc/audio.hpp"
#include "vapbc/model.hpp"
#include "vapbc/state_codec.hpp"

namespace vapbc {

enum class BcKind { Continuer, Assessment, Other };

std::string_view to_string(BcKind kind);
BcKind parse_bc_kind(std::string_view text);

struct BcEvent {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
  int channel = kListenerChannel;
  BcKind kind = BcKind::Continuer;
};

/// Timing = binary backchannel / non-backchannel; Type = non-backchannel,
/// continuer, assessment.
enum class Task { Timing, Type };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);
inline int num_classes(Task task) { return task == Task::Timing ? 2 : 3; }

inline constexpr int kNonBc = 0;
inline constexpr int kContinuer = 1;
inline constexpr int kAssessment = 2;

/// What happens to frames inside a backchannel utterance.
enum class InteriorPolicy { Mask, Negative };

struct LabelOptions {
  Task task = Task::Timing;
  double lead_s = 0.5;
  int listener = kListenerChannel;
  InteriorPolicy interior = InteriorPolicy::Mask;
};

struct FrameLabels {
  VadTracks vad;
  std::vector<int> vap_state;
  std::vector<int> bc_class;
  std::vector<std::uint8_t> bc_mask;  // 1 = counted in L_bc and metrics

  std::size_t num_frames() const { return bc_class.size(); }
};

struct Interval {
  double start = 0.0;
  double end = 0.0;
};
using VadSegments = std::array<std::vector<Interval>, 2>;

/// Number of frames covering `duration` seconds at `frame_rate`.
std::size_t frame_count(double duration, double frame_rate);

/// Line-delimited {onset, offset, channel, kind} records, sorted by onset.
std::vector<BcEvent> load_annotations(const std::filesystem::path& path);
std::vector<BcEvent> parse_annotations(std::istream& in, const std::string& source = "<stream>");
void write_annotations(const std::filesystem::path& path, const std::vector<BcEvent>& events);

/// Line-delimited {channel, start, end} records.
VadSegments load_vad_segments(const std::filesystem::path& path);
void write_vad_segments(const std::filesystem::path& path, const VadSegments& segments);

struct BcTracks {
  std::vector<int> bc_class;
  std::vector<std::uint8_t> bc_mask;
};

/// Frames whose start time lies in [onset - lead, onset) take the event's
/// class; frames in [onset, offset) are masked (or negative, per policy).
BcTracks make_bc_labels(const std::vector<BcEvent>& events, std::size_t num_frames, double frame_rate,
                        const LabelOptions& options);

/// Frame t is active iff its midpoint (t + 0.5) / frame_rate lies in a
/// half-open segment.
VadTracks make_vad_labels(const VadSegments& segments, std::size_t num_frames, double frame_rate);

std::vector<int> make_vap_targets(const VadTracks& vad, double frame_rate, const BinGrid& grid = {});

FrameLabels make_frame_labels(const std::vector<BcEvent>& events, const VadSegments& segments,
                              std::size_t num_frames, double frame_rate, const LabelOptions& options,
                              const BinGrid& grid = {});

/// Share of unmasked frames labelled `positive_class` (for the timing task
/// every non-zero class counts).
double positive_rate(const FrameLabels& labels, int positive_class);

// ---------------------------------------------------------------------------
// Corpus layout: <root>/manifest.json maps session -> split; each session
// directory holds audio.wav, bc.jsonl and vad.jsonl (and feats0.bin /
// feats1.bin when external encoder features are used).

enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Session {
  std::string name;
  std::filesystem::path dir;
  std::array<FeatureMatrix, 2> inputs;  // encoder inputs per channel
  std::vector<BcEvent> events;
  FrameLabels labels;
  double duration = 0.0;
};

struct DatasetStats {
  std::size_t sessions = 0;
  std::size_t frames = 0;
  std::size_t unmasked = 0;
  std::array<std::size_t, 3> class_frames{};  // unmasked frames per class
  std::array<std::size_t, 3> events{};        // listener events per kind
  double positive_rate = 0.0;                 // any backchannel class
};

struct Dataset {
  std::vector<Session> sessions;
  DatasetStats stats;
};

struct DatasetOptions {
  LabelOptions labels;
  BinGrid grid;
  double frame_rate = 10.0;
  int n_mels = 40;
  EncoderKind encoder = EncoderKind::Reference;
  std::filesystem::path audio_override;  // sibling corpus with replacement audio
};

std::vector<std::pair<std::string, Split>> read_manifest(const std::filesystem::path& root);

Dataset assemble_dataset(const std::filesystem::path& root, Split split, const DatasetOptions& options);

/// Loads one session (audio, annotations, features, labels).
Session load_session(const std::filesystem::path& dir, const std::string& name, const DatasetOptions& options);

DatasetStats compute_stats(const std::vector<Session>& sessions);

}  // namespace vapbc
