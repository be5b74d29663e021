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

#include <stdexcept>
#include <string>
#include <string_view>

namespace vapbc {

enum class Errc {
  NotFound,
  UnsupportedFormat,
  CorruptHeader,
  EmptyAudio,
  OutOfRange,
  InvalidConfig,
  LengthMismatch,
  NoForwardPass,
  Io,
  BadMagic,
  VersionMismatch,
  MissingTensor,
  ConfigMismatch,
  ParseError,
  OverlapError,
  NegativeTime,
  MissingManifest,
  MissingAudio,
  EmptyCorpus,
  CheckpointMissing,
  MissingThreshold,
  MissingManipulatedAudio,
  SessionClosed,
  AudioTooShort,
  BindError,
  ProtocolError,
  UnknownSubcommand,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

/// Error raised by every vapbc operation. The code identifies the failure
/// class; the message carries context such as the offending path.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

  /// Validation failures map to CLI exit code 1, everything else to 2.
  bool is_validation() const noexcept;

 private:
  Errc code_;
};

}  // namespace vapbc
