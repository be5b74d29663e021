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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vapbc {

inline constexpr const char* kToolVersion = "0.1.0";

/// Flat key-value configuration resolved from three layers:
/// command-line flag > config file > built-in default.
class ConfigResolver {
 public:
  explicit ConfigResolver(nlohmann::json defaults);

  /// A flat JSON object whose keys must all be known defaults.
  void load_file(const std::filesystem::path& path);
  void set_file_value(const std::string& key, nlohmann::json value);
  void set_flag(const std::string& key, nlohmann::json value);

  nlohmann::json resolved() const;
  std::string source(const std::string& key) const;  // "flag", "file" or "default"

  template <typename T>
  T get(const std::string& key) const {
    try {
      return value(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw_type_error(key, e.what());
    }
  }

 private:
  const nlohmann::json& value(const std::string& key) const;
  void check_key(const std::string& key) const;
  [[noreturn]] static void throw_type_error(const std::string& key, const std::string& what);

  nlohmann::json defaults_;
  nlohmann::json file_ = nlohmann::json::object();
  nlohmann::json flags_ = nlohmann::json::object();
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
};

nlohmann::json to_json(const RunManifest& m);

/// Adds `path` to the manifest inputs with its digest (files) or corpus
/// digest (corpus directories).
void record_input(RunManifest& m, const std::filesystem::path& path);

void write_run_manifest(const std::filesystem::path& path, const RunManifest& m);

}  // namespace vapbc
