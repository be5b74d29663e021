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

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "vapbc/error.hpp"
#include "vapbc/model.hpp"

namespace vapbc {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'P', 'B'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  std::uint32_t raw;
  std::memcpy(&raw, &v, sizeof raw);
  put_u32(out, raw);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }

  std::uint32_t u32(Errc on_eof, const char* what) {
    need(4, on_eof, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(Errc on_eof, const char* what) {
    const std::uint32_t raw = u32(on_eof, what);
    float v;
    std::memcpy(&v, &raw, sizeof v);
    return v;
  }

  std::string str(std::size_t n, Errc on_eof, const char* what) {
    need(n, on_eof, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, Errc on_eof, const char* what) const {
    if (!has(n)) throw Error(on_eof, std::string("truncated checkpoint while reading ") + what);
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::NotFound, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

}  // namespace

void store_checkpoint(const RuntimeModel& model, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string config = nlohmann::json(model.config()).dump();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;

  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  auto& params = const_cast<ModelParams<float>&>(model.params());
  visit_parameters(params, [&](const std::string& name, Matrix<float>& m) { tensors.emplace_back(name, &m); });
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) put_f32(out, m->data()[i]);
  }
  write_all(path, out);
}

RuntimeModel load_checkpoint(const std::filesystem::path& path) {
  Reader in(read_all(path));
  const std::string magic = in.str(4, Errc::BadMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw Error(Errc::BadMagic, path.string() + " is not a vapbc checkpoint");
  }
  const std::uint32_t version = in.u32(Errc::BadMagic, "version");
  if (version != kCheckpointVersion) {
    throw Error(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                           std::to_string(kCheckpointVersion));
  }
  const std::uint32_t config_len = in.u32(Errc::BadMagic, "config length");
  ModelConfig config;
  try {
    config = nlohmann::json::parse(in.str(config_len, Errc::BadMagic, "config")).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadMagic, std::string("unreadable embedded config: ") + e.what());
  }
  config.validate();

  std::map<std::string, Matrix<float>> table;
  const std::uint32_t count = in.u32(Errc::MissingTensor, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32(Errc::MissingTensor, "tensor name");
    std::string name = in.str(name_len, Errc::MissingTensor, "tensor name");
    const std::uint32_t ndim = in.u32(Errc::MissingTensor, "tensor rank");
    if (ndim != 2) throw Error(Errc::MissingTensor, "tensor " + name + " has rank " + std::to_string(ndim));
    const std::uint32_t rows = in.u32(Errc::MissingTensor, "tensor shape");
    const std::uint32_t cols = in.u32(Errc::MissingTensor, "tensor shape");
    if (!in.has(static_cast<std::size_t>(rows) * cols * 4)) {
      throw Error(Errc::MissingTensor, "truncated data for tensor " + name);
    }
    Matrix<float> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = in.f32(Errc::MissingTensor, "tensor data");
    if (!table.emplace(name, std::move(m)).second) {
      throw Error(Errc::MissingTensor, "tensor " + name + " appears twice");
    }
  }

  // Build the expected layout, then fill it from the table.
  RuntimeModel model = RuntimeModel::init(config, config.seed);
  model.mutable_config() = config;
  if (model.params().bc_head.weight.rows() != config.bc_classes) model.reset_bc_head(config.bc_classes, config.seed);
  model.mutable_config().bc_head_trained = config.bc_head_trained;
  std::size_t used = 0;
  visit_parameters(model.params(), [&](const std::string& name, Matrix<float>& m) {
    auto it = table.find(name);
    if (it == table.end()) throw Error(Errc::MissingTensor, "checkpoint lacks tensor " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw Error(Errc::MissingTensor, "tensor " + name + " has the wrong shape");
    }
    m = it->second;
    ++used;
  });
  if (used != table.size()) {
    throw Error(Errc::MissingTensor, "checkpoint holds tensors the configuration does not use");
  }
  return model;
}

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& features) {
  std::string out;
  put_u32(out, static_cast<std::uint32_t>(features.frames.rows()));
  put_u32(out, static_cast<std::uint32_t>(features.frames.cols()));
  put_f32(out, static_cast<float>(features.frame_rate));
  for (Eigen::Index i = 0; i < features.frames.size(); ++i) put_f32(out, features.frames.data()[i]);
  write_all(path, out);
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
  Reader in(read_all(path));
  const std::uint32_t rows = in.u32(Errc::CorruptHeader, "feature header");
  const std::uint32_t cols = in.u32(Errc::CorruptHeader, "feature header");
  const float rate = in.f32(Errc::CorruptHeader, "feature header");
  if (!in.has(static_cast<std::size_t>(rows) * cols * 4)) {
    throw Error(Errc::CorruptHeader, path.string() + ": feature data shorter than header claims");
  }
  FeatureSequence f;
  f.frame_rate = rate;
  f.frames.resize(rows, cols);
  for (Eigen::Index i = 0; i < f.frames.size(); ++i) f.frames.data()[i] = in.f32(Errc::CorruptHeader, "features");
  return f;
}

}  // namespace vapbc
