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

#include "vapbc/config.hpp"

#include <fstream>

#include "vapbc/error.hpp"
#include "vapbc/synth.hpp"

namespace vapbc {

ConfigResolver::ConfigResolver(nlohmann::json defaults) : defaults_(std::move(defaults)) {
  if (!defaults_.is_object()) throw Error(Errc::ConfigError, "defaults must be an object");
}

void ConfigResolver::check_key(const std::string& key) const {
  if (!defaults_.contains(key)) throw Error(Errc::ConfigError, "unknown configuration key '" + key + "'");
}

void ConfigResolver::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot read config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::ConfigError, path.string() + ": expected a flat JSON object");
  for (const auto& [key, v] : j.items()) {
    if (v.is_object()) throw Error(Errc::ConfigError, path.string() + ": nested value for '" + key + "'");
    set_file_value(key, v);
  }
}

void ConfigResolver::set_file_value(const std::string& key, nlohmann::json value) {
  check_key(key);
  file_[key] = std::move(value);
}

void ConfigResolver::set_flag(const std::string& key, nlohmann::json value) {
  check_key(key);
  flags_[key] = std::move(value);
}

const nlohmann::json& ConfigResolver::value(const std::string& key) const {
  check_key(key);
  if (flags_.contains(key)) return flags_.at(key);
  if (file_.contains(key)) return file_.at(key);
  return defaults_.at(key);
}

std::string ConfigResolver::source(const std::string& key) const {
  check_key(key);
  if (flags_.contains(key)) return "flag";
  if (file_.contains(key)) return "file";
  return "default";
}

nlohmann::json ConfigResolver::resolved() const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, v] : defaults_.items()) out[key] = value(key);
  return out;
}

void ConfigResolver::throw_type_error(const std::string& key, const std::string& what) {
  throw Error(Errc::ConfigError, "bad value for '" + key + "': " + what);
}

nlohmann::json to_json(const RunManifest& m) {
  return nlohmann::json{{"command", m.command}, {"config", m.config},     {"seeds", m.seeds},
                        {"inputs", m.inputs},   {"outputs", m.outputs},   {"tool_version", m.tool_version}};
}

void record_input(RunManifest& m, const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    m.inputs[path.string()] = corpus_digest(path);
  } else {
    m.inputs[path.string()] = file_digest(path);
  }
}

void write_run_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path);
  out << to_json(m).dump(2) << '\n';
  if (!out) throw Error(Errc::Io, "cannot write run manifest " + path.string());
}

}  // namespace vapbc
