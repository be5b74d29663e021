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

#include "vapbc/error.hpp"

namespace vapbc {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::NotFound: return "NotFound";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::EmptyAudio: return "EmptyAudio";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NoForwardPass: return "NoForwardPass";
    case Errc::Io: return "Io";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::MissingTensor: return "MissingTensor";
    case Errc::ConfigMismatch: return "ConfigMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::OverlapError: return "OverlapError";
    case Errc::NegativeTime: return "NegativeTime";
    case Errc::MissingManifest: return "MissingManifest";
    case Errc::MissingAudio: return "MissingAudio";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::CheckpointMissing: return "CheckpointMissing";
    case Errc::MissingThreshold: return "MissingThreshold";
    case Errc::MissingManipulatedAudio: return "MissingManipulatedAudio";
    case Errc::SessionClosed: return "SessionClosed";
    case Errc::AudioTooShort: return "AudioTooShort";
    case Errc::BindError: return "BindError";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::UnknownSubcommand: return "UnknownSubcommand";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

bool Error::is_validation() const noexcept {
  switch (code_) {
    case Errc::NotFound:
    case Errc::UnsupportedFormat:
    case Errc::CorruptHeader:
    case Errc::InvalidConfig:
    case Errc::ConfigMismatch:
    case Errc::ParseError:
    case Errc::OverlapError:
    case Errc::NegativeTime:
    case Errc::MissingManifest:
    case Errc::MissingAudio:
    case Errc::CheckpointMissing:
    case Errc::MissingThreshold:
    case Errc::MissingManipulatedAudio:
    case Errc::BadMagic:
    case Errc::VersionMismatch:
    case Errc::MissingTensor:
    case Errc::UnknownSubcommand:
    case Errc::ConfigError:
    case Errc::AudioTooShort:
    case Errc::EmptyAudio:
    case Errc::EmptyCorpus:
      return true;
    default:
      return false;
  }
}

}  // namespace vapbc
