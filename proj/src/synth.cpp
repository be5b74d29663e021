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

#include "vapbc/synth.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "vapbc/error.hpp"
#include "vapbc/nn.hpp"

namespace vapbc {

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  auto range = [&](double lo, double hi, const char* name) {
    if (!(lo > 0.0) || !(hi >= lo)) fail(std::string(name) + " range must be positive and ordered");
  };
  if (!(session_seconds >= 10.0)) fail("session_seconds must be >= 10");
  for (int n : sessions) {
    if (n < 0) fail("session counts must be non-negative");
  }
  if (sessions[0] + sessions[1] + sessions[2] < 1) fail("at least one session required");
  range(f0_min, f0_max, "f0");
  range(utterance_min, utterance_max, "utterance");
  range(pause_min, pause_max, "pause");
  range(delay_min, delay_max, "delay");
  range(bc_min, bc_max, "backchannel length");
  range(peak_min, peak_max, "intensity peak");
  if (continuer_rate < 0.0 || assessment_rate < 0.0 || continuer_rate + assessment_rate > 1.0) {
    fail("cue rates must be non-negative and sum to at most 1");
  }
  if (utterance_min < cue_span + 0.3 || utterance_min < 1.8 + 0.1) fail("utterances too short for the cues");
  if (!(peak_gain > 1.0)) fail("peak_gain must exceed 1");
  if (!(amplitude > 0.0) || amplitude * peak_gain > 1.0) fail("amplitude * peak_gain must be in (0, 1]");
  if (!(final_fall > 0.0) || !(final_rise > 0.0)) fail("F0 ratios must be positive");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"session_seconds", c.session_seconds},
                     {"train_sessions", c.sessions[0]},
                     {"val_sessions", c.sessions[1]},
                     {"test_sessions", c.sessions[2]},
                     {"f0_min", c.f0_min},
                     {"f0_max", c.f0_max},
                     {"utterance_min", c.utterance_min},
                     {"utterance_max", c.utterance_max},
                     {"pause_min", c.pause_min},
                     {"pause_max", c.pause_max},
                     {"continuer_rate", c.continuer_rate},
                     {"assessment_rate", c.assessment_rate},
                     {"delay_min", c.delay_min},
                     {"delay_max", c.delay_max},
                     {"bc_min", c.bc_min},
                     {"bc_max", c.bc_max},
                     {"final_fall", c.final_fall},
                     {"final_rise", c.final_rise},
                     {"cue_span", c.cue_span},
                     {"peak_gain", c.peak_gain},
                     {"peak_min", c.peak_min},
                     {"peak_max", c.peak_max},
                     {"amplitude", c.amplitude},
                     {"flat_pitch", c.flat_pitch}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.session_seconds = j.value("session_seconds", c.session_seconds);
  c.sessions[0] = j.value("train_sessions", c.sessions[0]);
  c.sessions[1] = j.value("val_sessions", c.sessions[1]);
  c.sessions[2] = j.value("test_sessions", c.sessions[2]);
  c.f0_min = j.value("f0_min", c.f0_min);
  c.f0_max = j.value("f0_max", c.f0_max);
  c.utterance_min = j.value("utterance_min", c.utterance_min);
  c.utterance_max = j.value("utterance_max", c.utterance_max);
  c.pause_min = j.value("pause_min", c.pause_min);
  c.pause_max = j.value("pause_max", c.pause_max);
  c.continuer_rate = j.value("continuer_rate", c.continuer_rate);
  c.assessment_rate = j.value("assessment_rate", c.assessment_rate);
  c.delay_min = j.value("delay_min", c.delay_min);
  c.delay_max = j.value("delay_max", c.delay_max);
  c.bc_min = j.value("bc_min", c.bc_min);
  c.bc_max = j.value("bc_max", c.bc_max);
  c.final_fall = j.value("final_fall", c.final_fall);
  c.final_rise = j.value("final_rise", c.final_rise);
  c.cue_span = j.value("cue_span", c.cue_span);
  c.peak_gain = j.value("peak_gain", c.peak_gain);
  c.peak_min = j.value("peak_min", c.peak_min);
  c.peak_max = j.value("peak_max", c.peak_max);
  c.amplitude = j.value("amplitude", c.amplitude);
  c.flat_pitch = j.value("flat_pitch", c.flat_pitch);
}

std::uint64_t session_seed(std::uint64_t corpus_seed, std::size_t index) {
  // splitmix64 finaliser over the pair
  std::uint64_t z = corpus_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

constexpr int kHarmonics = 6;
constexpr double kRamp = 0.02;       // onset / offset ramps
constexpr double kPeakRamp = 0.03;

double ramp(double x) { return 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(x, 0.0, 1.0)); }

// Renders a harmonic tone into out[first, last) with instantaneous F0 and
// gain given per sample. Harmonics come from the Chebyshev sine recurrence.
template <typename F0, typename Gain>
void render_tone(std::vector<float>& out, std::size_t first, std::size_t last, F0&& f0, Gain&& gain) {
  static const double norm = [] {
    double s = 0.0;
    for (int k = 1; k <= kHarmonics; ++k) s += 1.0 / k;
    return s;
  }();
  double phase = 0.0;
  for (std::size_t n = first; n < last; ++n) {
    const double s1 = std::sin(phase), c1 = std::cos(phase);
    double prev = 0.0, cur = s1, sum = s1;
    for (int k = 2; k <= kHarmonics; ++k) {
      const double next = 2.0 * c1 * cur - prev;
      prev = cur;
      cur = next;
      sum += cur / k;
    }
    out[n] = static_cast<float>(gain(n) * sum / norm);
    phase += 2.0 * std::numbers::pi * f0(n) / kSampleRate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
  }
}

std::size_t to_sample(double t) { return static_cast<std::size_t>(std::llround(t * kSampleRate)); }
double to_time(std::size_t n) { return static_cast<double>(n) / kSampleRate; }

}  // namespace

Dialogue generate_dialogue(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Rng rng(seed);
  Dialogue d;
  const std::size_t total = to_sample(cfg.session_seconds);
  d.audio.sample_rate = kSampleRate;
  for (auto& ch : d.audio.channels) ch.assign(total, 0.0f);

  // Enough room after the last utterance for its longest cue response.
  const double tail = cfg.delay_max + cfg.bc_max + 0.2;
  double t = rng.uniform(0.5, 1.5);
  while (true) {
    const double length = rng.uniform(cfg.utterance_min, cfg.utterance_max);
    const double pause = rng.uniform(cfg.pause_min, cfg.pause_max);
    const double draw = rng.uniform();
    const double f0 = rng.uniform(cfg.f0_min, cfg.f0_max);
    const double mod_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double peak_offset = rng.uniform(0.3, length - 1.8);
    const double peak_length = rng.uniform(cfg.peak_min, cfg.peak_max);
    const double delay = rng.uniform(cfg.delay_min, cfg.delay_max);
    const double bc_length = rng.uniform(cfg.bc_min, cfg.bc_max);
    if (t + length + tail > cfg.session_seconds) break;

    const std::size_t s0 = to_sample(t), s1 = to_sample(t + length);
    Utterance u{to_time(s0), to_time(s1), Cue::None, 0.0, 0.0};
    if (draw < cfg.continuer_rate) u.cue = Cue::Continuer;
    else if (draw < cfg.continuer_rate + cfg.assessment_rate) u.cue = Cue::Assessment;

    const double dur = u.end - u.start;
    const double end_ratio = u.cue == Cue::Continuer ? cfg.final_fall : cfg.final_rise;
    const double span_start = dur - cfg.cue_span;
    auto contour = [&](std::size_t n) {
      if (cfg.flat_pitch) return f0;
      const double x = to_time(n - s0);
      const double declination = 1.0 - 0.05 * x / dur;
      if (x < span_start) return f0 * declination;
      const double r = (x - span_start) / cfg.cue_span;
      return f0 * declination * (1.0 + (end_ratio - 1.0) * r);
    };
    double peak_a = -1.0, peak_b = -1.0;
    if (u.cue == Cue::Assessment) {
      peak_a = peak_offset;
      peak_b = peak_offset + peak_length;
      u.peak_start = u.start + peak_a;
      u.peak_end = u.start + peak_b;
    }
    auto gain = [&](std::size_t n) {
      const double x = to_time(n - s0);
      double g = cfg.amplitude * ramp(x / kRamp) * ramp((dur - x) / kRamp);
      g *= 0.85 + 0.15 * std::sin(2.0 * std::numbers::pi * 4.0 * x + mod_phase);
      if (peak_a >= 0.0) {
        const double w = std::min(ramp((x - peak_a) / kPeakRamp), ramp((peak_b - x) / kPeakRamp));
        g *= 1.0 + (cfg.peak_gain - 1.0) * w;
      }
      return g;
    };
    render_tone(d.audio.channels[kSpeakerChannel], s0, s1, contour, gain);
    d.vad[kSpeakerChannel].push_back({u.start, u.end});

    if (u.cue != Cue::None) {
      const double cue_end = u.cue == Cue::Continuer ? u.end : u.peak_end;
      const std::size_t b0 = to_sample(cue_end + delay), b1 = to_sample(cue_end + delay + bc_length);
      const BcKind kind = u.cue == Cue::Continuer ? BcKind::Continuer : BcKind::Assessment;
      const double bf0 = kind == BcKind::Continuer ? 230.0 : 300.0;
      const double blen = to_time(b1 - b0);
      render_tone(
          d.audio.channels[kListenerChannel], b0, b1, [&](std::size_t) { return bf0; },
          [&](std::size_t n) {
            const double x = to_time(n - b0);
            return 0.6 * cfg.amplitude * ramp(x / kRamp) * ramp((blen - x) / kRamp);
          });
      d.events.push_back({to_time(b0), to_time(b1), kListenerChannel, kind});
      d.vad[kListenerChannel].push_back({to_time(b0), to_time(b1)});
    }
    d.utterances.push_back(u);
    t = u.end + pause;
  }
  quantize_pcm16(d.audio);
  return d;
}

nlohmann::json to_json(const CorpusSummary& s) {
  return nlohmann::json{{"sessions", s.sessions},
                        {"events", {{"continuer", s.events[0]}, {"assessment", s.events[1]}, {"other", s.events[2]}}},
                        {"continuer_assessment_ratio", s.continuer_assessment_ratio},
                        {"positive_rate", s.positive_rate},
                        {"digest", s.digest}};
}

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error(Errc::Io, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read " + path.string());
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_DigestFinal_ex(ctx_, md, &n);
    std::ostringstream out;
    for (unsigned int i = 0; i < n; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return out.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string file_digest(const std::filesystem::path& path) {
  Sha256 h;
  h.update_file(path);
  return h.hex();
}

std::string corpus_digest(const std::filesystem::path& root) {
  Sha256 h;
  h.update_file(root / "manifest.json");
  for (const auto& [name, split] : read_manifest(root)) {
    for (const char* file : {"audio.wav", "bc.jsonl", "vad.jsonl"}) {
      const std::string tag = name + "/" + file;
      h.update(tag.data(), tag.size());
      h.update_file(root / name / file);
    }
  }
  return h.hex();
}

CorpusSummary generate_corpus(const SynthConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + out.string() + ": " + ec.message());

  CorpusSummary summary;
  nlohmann::json manifest = nlohmann::json::object();
  const std::array<Split, 3> splits{Split::Train, Split::Val, Split::Test};
  std::size_t index = 0, positives = 0, unmasked = 0;
  LabelOptions label_options;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < cfg.sessions[s]; ++i, ++index) {
      std::ostringstream name;
      name << "s" << std::setw(3) << std::setfill('0') << index;
      const auto dir = out / name.str();
      std::filesystem::create_directories(dir, ec);
      if (ec) throw Error(Errc::Io, "cannot create " + dir.string());
      const Dialogue d = generate_dialogue(cfg, session_seed(cfg.seed, index));
      write_wav_stereo(dir / "audio.wav", d.audio, WavEncoding::Pcm16);
      write_annotations(dir / "bc.jsonl", d.events);
      write_vad_segments(dir / "vad.jsonl", d.vad);
      manifest[name.str()] = std::string(to_string(splits[s]));
      for (const auto& e : d.events) ++summary.events[static_cast<int>(e.kind)];
      const BcTracks tracks =
          make_bc_labels(d.events, frame_count(cfg.session_seconds, 10.0), 10.0, label_options);
      for (std::size_t f = 0; f < tracks.bc_class.size(); ++f) {
        if (!tracks.bc_mask[f]) continue;
        ++unmasked;
        if (tracks.bc_class[f] != kNonBc) ++positives;
      }
    }
  }
  {
    std::ofstream m(out / "manifest.json");
    m << manifest.dump(2) << '\n';
    if (!m) throw Error(Errc::Io, "cannot write manifest under " + out.string());
  }
  summary.sessions = index;
  summary.continuer_assessment_ratio =
      summary.events[1] ? static_cast<double>(summary.events[0]) / static_cast<double>(summary.events[1]) : 0.0;
  summary.positive_rate = unmasked ? static_cast<double>(positives) / static_cast<double>(unmasked) : 0.0;
  summary.digest = corpus_digest(out);
  std::ofstream sj(out / "summary.json");
  nlohmann::json j = to_json(summary);
  j["config"] = cfg;
  sj << j.dump(2) << '\n';
  if (!sj) throw Error(Errc::Io, "cannot write summary under " + out.string());
  return summary;
}

}  // namespace vapbc
