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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vapbc/audio.hpp"
#include "vapbc/error.hpp"

namespace vapbc {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

StereoAudio read_wav_stereo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::NotFound, "cannot open " + path.string());
  }
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::CorruptHeader, path.string() + " is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) {
      throw Error(Errc::CorruptHeader, path.string() + ": chunk exceeds file size");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw Error(Errc::CorruptHeader, path.string() + ": short fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (size < 40) throw Error(Errc::CorruptHeader, path.string() + ": short extensible fmt");
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1U);
  }
  if (!have_fmt || data == nullptr) {
    throw Error(Errc::CorruptHeader, path.string() + ": missing fmt or data chunk");
  }
  if (channels != 2) {
    throw Error(Errc::UnsupportedFormat,
                path.string() + ": expected 2 channels, got " + std::to_string(channels));
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw Error(Errc::UnsupportedFormat,
                path.string() + ": expected 16000 Hz, got " + std::to_string(rate));
  }
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw Error(Errc::UnsupportedFormat, path.string() + ": only PCM16 and float32 are supported");
  }

  const std::size_t frame_bytes = pcm16 ? 4 : 8;
  const std::size_t frames = data_size / frame_bytes;
  StereoAudio audio;
  audio.sample_rate = kSampleRate;
  audio.channels[0].resize(frames);
  audio.channels[1].resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* p = data + i * frame_bytes;
    for (int c = 0; c < 2; ++c) {
      if (pcm16) {
        const auto v = static_cast<std::int16_t>(read_u16(p + 2 * c));
        audio.channels[c][i] = static_cast<float>(v) / 32768.0f;
      } else {
        const std::uint32_t raw = read_u32(p + 4 * c);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        audio.channels[c][i] = v;
      }
    }
  }
  return audio;
}

namespace {

std::int16_t to_pcm16(float v) {
  const long q = std::lround(static_cast<double>(v) * 32768.0);
  return static_cast<std::int16_t>(std::clamp<long>(q, -32768, 32767));
}

}  // namespace

void quantize_pcm16(StereoAudio& audio) {
  for (auto& channel : audio.channels) {
    for (float& s : channel) s = static_cast<float>(to_pcm16(s)) / 32768.0f;
  }
}

void write_wav_stereo(const std::filesystem::path& path, const StereoAudio& audio,
                      WavEncoding encoding) {
  audio.validate();
  const bool pcm16 = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint16_t block_align = 2 * bits / 8;
  const auto frames = static_cast<std::uint32_t>(audio.num_samples());
  const std::uint32_t data_size = frames * block_align;

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, 2);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate) * block_align);
  put_u16(out, block_align);
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (std::uint32_t i = 0; i < frames; ++i) {
    for (int c = 0; c < 2; ++c) {
      if (pcm16) {
        put_u16(out, static_cast<std::uint16_t>(to_pcm16(audio.channels[c][i])));
      } else {
        std::uint32_t raw;
        std::memcpy(&raw, &audio.channels[c][i], sizeof raw);
        put_u32(out, raw);
      }
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw Error(Errc::Io, "cannot write " + path.string());
  }
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw Error(Errc::Io, "short write to " + path.string());
  }
}

}  // namespace vapbc
