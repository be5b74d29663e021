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

#include "vapbc/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vapbc/error.hpp"

namespace vapbc {

namespace {

constexpr double kTimeEps = 1e-9;

// First frame whose start time t / rate is >= seconds.
std::ptrdiff_t first_frame_at(double seconds, double rate) {
  return static_cast<std::ptrdiff_t>(std::ceil(seconds * rate - kTimeEps));
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::NotFound, "cannot open " + path.string());
  std::vector<nlohmann::json> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(Errc::ParseError, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::ParseError, where + ": bad value for '" + key + "'");
  }
}

int checked_channel(int c, const std::string& where) {
  if (c != 0 && c != 1) throw Error(Errc::ParseError, where + ": channel must be 0 or 1");
  return c;
}

BcEvent parse_event(const nlohmann::json& j, const std::string& where) {
  BcEvent e;
  e.onset = field<double>(j, "onset", where);
  e.offset = field<double>(j, "offset", where);
  e.channel = checked_channel(field<int>(j, "channel", where), where);
  try {
    e.kind = parse_bc_kind(field<std::string>(j, "kind", where));
  } catch (const Error&) {
    throw Error(Errc::ParseError, where + ": unknown backchannel kind");
  }
  if (e.onset < 0.0 || !(e.offset > e.onset)) {
    throw Error(Errc::NegativeTime, where + ": need 0 <= onset < offset");
  }
  return e;
}

std::vector<BcEvent> sort_and_check(std::vector<BcEvent> events, const std::string& source) {
  std::stable_sort(events.begin(), events.end(), [](const BcEvent& a, const BcEvent& b) { return a.onset < b.onset; });
  for (int c = 0; c < 2; ++c) {
    double last_offset = -1.0;
    for (const auto& e : events) {
      if (e.channel != c) continue;
      if (e.onset < last_offset) {
        throw Error(Errc::OverlapError, source + ": overlapping events on channel " + std::to_string(c));
      }
      last_offset = e.offset;
    }
  }
  return events;
}

}  // namespace

std::string_view to_string(BcKind kind) {
  switch (kind) {
    case BcKind::Continuer: return "continuer";
    case BcKind::Assessment: return "assessment";
    case BcKind::Other: return "other";
  }
  return "other";
}

BcKind parse_bc_kind(std::string_view text) {
  if (text == "continuer") return BcKind::Continuer;
  if (text == "assessment") return BcKind::Assessment;
  if (text == "other") return BcKind::Other;
  throw Error(Errc::ParseError, "unknown backchannel kind '" + std::string(text) + "'");
}

std::string_view to_string(Task task) { return task == Task::Timing ? "timing" : "type"; }

Task parse_task(std::string_view text) {
  if (text == "timing" || text == "binary") return Task::Timing;
  if (text == "type") return Task::Type;
  throw Error(Errc::ConfigError, "unknown task '" + std::string(text) + "' (expected timing|type)");
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw Error(Errc::ConfigError, "unknown split '" + std::string(text) + "'");
}

std::size_t frame_count(double duration, double frame_rate) {
  return static_cast<std::size_t>(std::floor(duration * frame_rate + kTimeEps));
}

std::vector<BcEvent> parse_annotations(std::istream& in, const std::string& source) {
  std::vector<BcEvent> events;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, where + ": " + e.what());
    }
    events.push_back(parse_event(j, where));
  }
  return sort_and_check(std::move(events), source);
}

std::vector<BcEvent> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::NotFound, "cannot open " + path.string());
  return parse_annotations(in, path.string());
}

void write_annotations(const std::filesystem::path& path, const std::vector<BcEvent>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  for (const auto& e : events) {
    out << nlohmann::json{{"onset", e.onset}, {"offset", e.offset}, {"channel", e.channel},
                          {"kind", std::string(to_string(e.kind))}}
               .dump()
        << '\n';
  }
}

VadSegments load_vad_segments(const std::filesystem::path& path) {
  VadSegments segments;
  int record = 0;
  for (const auto& j : read_jsonl(path)) {
    const std::string where = path.string() + " record " + std::to_string(++record);
    const int c = checked_channel(field<int>(j, "channel", where), where);
    Interval iv{field<double>(j, "start", where), field<double>(j, "end", where)};
    if (iv.start < 0.0 || !(iv.end > iv.start)) throw Error(Errc::NegativeTime, where + ": need 0 <= start < end");
    segments[c].push_back(iv);
  }
  return segments;
}

void write_vad_segments(const std::filesystem::path& path, const VadSegments& segments) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  for (int c = 0; c < 2; ++c) {
    for (const auto& iv : segments[c]) {
      out << nlohmann::json{{"channel", c}, {"start", iv.start}, {"end", iv.end}}.dump() << '\n';
    }
  }
}

BcTracks make_bc_labels(const std::vector<BcEvent>& events, std::size_t num_frames, double frame_rate,
                        const LabelOptions& options) {
  if (!(options.lead_s > 0.0)) throw Error(Errc::InvalidConfig, "lead must be positive");
  BcTracks out{std::vector<int>(num_frames, kNonBc), std::vector<std::uint8_t>(num_frames, 1)};
  const auto n = static_cast<std::ptrdiff_t>(num_frames);
  auto clip = [n](std::ptrdiff_t f) { return std::clamp<std::ptrdiff_t>(f, 0, n); };

  std::vector<BcEvent> listener;
  for (const auto& e : events) {
    if (e.channel == options.listener) listener.push_back(e);
  }
  std::stable_sort(listener.begin(), listener.end(), [](const BcEvent& a, const BcEvent& b) { return a.onset < b.onset; });

  const bool typed = options.task == Task::Type;
  for (const auto& e : listener) {
    const std::ptrdiff_t lo = clip(first_frame_at(e.onset - options.lead_s, frame_rate));
    const std::ptrdiff_t hi = clip(first_frame_at(e.onset, frame_rate));
    const bool excluded = typed && e.kind == BcKind::Other;
    int cls = 1;
    if (typed) cls = e.kind == BcKind::Assessment ? kAssessment : kContinuer;
    for (std::ptrdiff_t f = lo; f < hi; ++f) {
      out.bc_class[f] = excluded ? kNonBc : cls;
      out.bc_mask[f] = excluded ? 0 : 1;
    }
  }
  for (const auto& e : listener) {
    const bool excluded = typed && e.kind == BcKind::Other;
    if (options.interior == InteriorPolicy::Negative && !excluded) continue;
    const std::ptrdiff_t lo = clip(first_frame_at(e.onset, frame_rate));
    const std::ptrdiff_t hi = clip(first_frame_at(e.offset, frame_rate));
    for (std::ptrdiff_t f = lo; f < hi; ++f) {
      out.bc_class[f] = kNonBc;
      out.bc_mask[f] = 0;
    }
  }
  return out;
}

VadTracks make_vad_labels(const VadSegments& segments, std::size_t num_frames, double frame_rate) {
  VadTracks vad;
  for (int c = 0; c < 2; ++c) {
    auto sorted = segments[c];
    std::sort(sorted.begin(), sorted.end(), [](const Interval& a, const Interval& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i].start < sorted[i - 1].end) {
        throw Error(Errc::OverlapError, "overlapping VAD segments on channel " + std::to_string(c));
      }
    }
    vad.active[c].assign(num_frames, 0);
    for (const auto& iv : sorted) {
      // Midpoint (f + 0.5) / rate in [start, end)  <=>  f in [start*rate - 0.5, end*rate - 0.5).
      const auto lo = static_cast<std::ptrdiff_t>(std::ceil(iv.start * frame_rate - 0.5 - kTimeEps));
      const auto hi = static_cast<std::ptrdiff_t>(std::ceil(iv.end * frame_rate - 0.5 - kTimeEps));
      for (std::ptrdiff_t f = std::max<std::ptrdiff_t>(lo, 0);
           f < std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(num_frames)); ++f) {
        vad.active[c][f] = 1;
      }
    }
  }
  return vad;
}

std::vector<int> make_vap_targets(const VadTracks& vad, double frame_rate, const BinGrid& grid) {
  grid.validate();
  std::vector<int> targets(vad.num_frames());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    targets[t] = encode_state(project_future_activity(vad, t, frame_rate, grid));
  }
  return targets;
}

FrameLabels make_frame_labels(const std::vector<BcEvent>& events, const VadSegments& segments,
                              std::size_t num_frames, double frame_rate, const LabelOptions& options,
                              const BinGrid& grid) {
  FrameLabels labels;
  labels.vad = make_vad_labels(segments, num_frames, frame_rate);
  labels.vap_state = make_vap_targets(labels.vad, frame_rate, grid);
  BcTracks bc = make_bc_labels(events, num_frames, frame_rate, options);
  labels.bc_class = std::move(bc.bc_class);
  labels.bc_mask = std::move(bc.bc_mask);
  return labels;
}

double positive_rate(const FrameLabels& labels, int positive_class) {
  std::size_t unmasked = 0;
  std::size_t positives = 0;
  for (std::size_t f = 0; f < labels.num_frames(); ++f) {
    if (!labels.bc_mask[f]) continue;
    ++unmasked;
    const int c = labels.bc_class[f];
    if (c == positive_class) ++positives;
  }
  return unmasked == 0 ? 0.0 : static_cast<double>(positives) / static_cast<double>(unmasked);
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Split>> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingManifest, "no manifest at " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::ParseError, path.string() + ": expected an object");
  std::vector<std::pair<std::string, Split>> out;
  for (const auto& [name, split] : j.items()) {
    if (!split.is_string()) throw Error(Errc::ParseError, path.string() + ": split of " + name + " must be a string");
    out.emplace_back(name, parse_split(split.get<std::string>()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Session load_session(const std::filesystem::path& dir, const std::string& name, const DatasetOptions& options) {
  Session s;
  s.name = name;
  s.dir = dir;
  std::array<FeatureMatrix, 2> inputs;
  std::size_t frames = 0;
  if (options.encoder == EncoderKind::Reference) {
    std::filesystem::path wav = dir / "audio.wav";
    if (!options.audio_override.empty()) {
      wav = options.audio_override / name / "audio.wav";
      if (!std::filesystem::exists(wav)) {
        throw Error(Errc::MissingManipulatedAudio, "missing manipulated audio " + wav.string());
      }
    }
    if (!std::filesystem::exists(wav)) throw Error(Errc::MissingAudio, "missing audio " + wav.string());
    const StereoAudio audio = read_wav_stereo(wav);
    s.duration = audio.duration();
    LogMelOptions mel;
    mel.frame_rate = options.frame_rate;
    mel.n_bands = options.n_mels;
    for (int c = 0; c < 2; ++c) inputs[c] = log_mel(audio.channels[c], mel, c).frames;
    frames = static_cast<std::size_t>(inputs[0].rows());
  } else {
    for (int c = 0; c < 2; ++c) {
      const auto path = dir / ("feats" + std::to_string(c) + ".bin");
      if (!std::filesystem::exists(path)) throw Error(Errc::MissingAudio, "missing features " + path.string());
      FeatureSequence f = read_feature_file(path);
      if (f.frame_rate != options.frame_rate) {
        throw Error(Errc::ConfigMismatch, path.string() + ": frame rate differs from the model's");
      }
      inputs[c] = std::move(f.frames);
    }
    if (inputs[0].rows() != inputs[1].rows()) throw Error(Errc::LengthMismatch, "feature files differ in length");
    frames = static_cast<std::size_t>(inputs[0].rows());
    s.duration = static_cast<double>(frames) / options.frame_rate;
  }
  s.inputs = std::move(inputs);
  s.events = load_annotations(dir / "bc.jsonl");
  const VadSegments segments = load_vad_segments(dir / "vad.jsonl");
  s.labels = make_frame_labels(s.events, segments, frames, options.frame_rate, options.labels, options.grid);
  return s;
}

DatasetStats compute_stats(const std::vector<Session>& sessions) {
  DatasetStats st;
  st.sessions = sessions.size();
  std::size_t positives = 0;
  for (const auto& s : sessions) {
    st.frames += s.labels.num_frames();
    for (std::size_t f = 0; f < s.labels.num_frames(); ++f) {
      if (!s.labels.bc_mask[f]) continue;
      ++st.unmasked;
      const int c = s.labels.bc_class[f];
      ++st.class_frames[static_cast<std::size_t>(c)];
      if (c != kNonBc) ++positives;
    }
    for (const auto& e : s.events) {
      if (e.channel == kListenerChannel) ++st.events[static_cast<std::size_t>(e.kind)];
    }
  }
  st.positive_rate = st.unmasked == 0 ? 0.0 : static_cast<double>(positives) / static_cast<double>(st.unmasked);
  return st;
}

Dataset assemble_dataset(const std::filesystem::path& root, Split split, const DatasetOptions& options) {
  Dataset ds;
  for (const auto& [name, s] : read_manifest(root)) {
    if (s != split) continue;
    ds.sessions.push_back(load_session(root / name, name, options));
  }
  ds.stats = compute_stats(ds.sessions);
  return ds;
}

}  // namespace vapbc
