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
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vapbc/audio.hpp"
#include "vapbc/nn.hpp"

namespace vapbc {

enum class EncoderKind { Reference, External };
enum class Architecture { Vap, Baseline };

struct ModelConfig {
  EncoderKind encoder = EncoderKind::Reference;
  Architecture arch = Architecture::Vap;
  int d_channel = 256;
  int d_concat = 512;
  int n_channel_layers = 1;
  int n_cross_layers = 3;
  int n_heads = 4;
  int ffn_mult = 4;
  double dropout = 0.1;
  double frame_rate = 50.0;
  int bc_classes = 2;
  bool bc_head_trained = false;
  int max_context = 1000;  // frames visible to the Transformer layers
  int n_mels = 40;
  int encoder_layers = 2;
  int encoder_kernel = 3;
  float feature_offset = -10.0f;  // fixed log-mel normalisation: (x - offset) * scale
  float feature_scale = 0.1f;
  std::uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return d_channel / n_heads; }
  int input_dim() const { return encoder == EncoderKind::Reference ? n_mels : d_channel; }
  /// Frames of history each encoder output depends on (0 for external features).
  int encoder_receptive_field() const {
    return encoder == EncoderKind::Reference ? encoder_layers * (encoder_kernel - 1) : 0;
  }
  /// Closed-form parameter count derived from the configured shapes.
  std::size_t expected_parameter_count() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename S>
using Matrix = nn::Matrix<S>;

template <typename S>
struct ModelParams {
  std::vector<nn::Linear<S>> encoder_convs;
  nn::Linear<S> encoder_proj;
  Matrix<S> positions;  // max_context x d_channel
  std::vector<nn::Block<S>> channel_blocks;
  std::vector<std::array<nn::Block<S>, 2>> cross_blocks;  // [layer][direction]
  nn::LayerNorm<S> final_norm;
  nn::Linear<S> vap_head, vad_head, bc_head;
};

/// Visits every present parameter in a fixed order with its stable name.
template <typename S, typename F>
void visit_parameters(ModelParams<S>& p, F&& f) {
  for (std::size_t i = 0; i < p.encoder_convs.size(); ++i) {
    nn::visit(p.encoder_convs[i], "encoder.conv" + std::to_string(i), f);
  }
  if (p.encoder_proj.weight.size()) nn::visit(p.encoder_proj, "encoder.proj", f);
  if (p.positions.size()) f(std::string("positions"), p.positions);
  for (std::size_t i = 0; i < p.channel_blocks.size(); ++i) {
    nn::visit(p.channel_blocks[i], "channel." + std::to_string(i), f);
  }
  for (std::size_t i = 0; i < p.cross_blocks.size(); ++i) {
    nn::visit(p.cross_blocks[i][0], "cross." + std::to_string(i) + ".a", f);
    nn::visit(p.cross_blocks[i][1], "cross." + std::to_string(i) + ".b", f);
  }
  if (p.final_norm.gain.size()) nn::visit(p.final_norm, "final_norm", f);
  nn::visit(p.vap_head, "head.vap", f);
  nn::visit(p.vad_head, "head.vad", f);
  nn::visit(p.bc_head, "head.bc", f);
}

template <typename S>
std::vector<Matrix<S>*> flatten(ModelParams<S>& p) {
  std::vector<Matrix<S>*> out;
  visit_parameters(p, [&](const std::string&, Matrix<S>& m) { out.push_back(&m); });
  return out;
}

template <typename S>
ModelParams<S> zeros_like(const ModelParams<S>& p) {
  ModelParams<S> z = p;
  visit_parameters(z, [](const std::string&, Matrix<S>& m) { m.setZero(); });
  return z;
}

/// Per-frame head outputs before normalisation.
template <typename S>
struct ModelOutput {
  Matrix<S> vap_logits;  // T x 256
  Matrix<S> vad_logits;  // T x 2
  Matrix<S> bc_logits;   // T x bc_classes

  Eigen::Index num_frames() const { return vap_logits.rows(); }
  Matrix<S> vap_probs() const;
  Matrix<S> vad_probs() const;
  Matrix<S> bc_probs() const;
};

/// Gradient of the loss with respect to each head's logits.
template <typename S>
using OutputGrads = ModelOutput<S>;

/// Activations recorded by a training forward pass.
template <typename S>
struct Tape {
  struct EncoderCache {
    std::vector<Matrix<S>> unfolded;
    std::vector<Matrix<S>> pre_activation;
    Matrix<S> proj_in;
  };

  bool recorded = false;
  Eigen::Index skipped_rows = 0;  // encoder warm-up rows not fed to the Transformer
  Eigen::Index length = 0;
  std::array<EncoderCache, 2> encoder;
  std::array<std::vector<nn::BlockCache<S>>, 2> channel;
  std::vector<std::array<nn::BlockCache<S>, 2>> cross;
  nn::LayerNormCache<S> final_norm;
  Matrix<S> hidden;  // input to the heads
};

template <typename S>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams<S> params);

  /// Deterministic initialisation from `seed`.
  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const ModelParams<S>& params() const { return params_; }
  ModelParams<S>& params() { return params_; }
  std::size_t parameter_count() const;

  /// Replaces the backchannel head with a fresh one for `classes` outputs.
  void reset_bc_head(int classes, std::uint64_t seed);

  /// Inference. With a finite window W, the Transformer output at frame t is
  /// computed from encoder frames (t - W, t] only; the encoder itself always
  /// sees the whole history. The window is capped at max_context.
  ModelOutput<S> forward(const Matrix<S>& input0, const Matrix<S>& input1,
                         std::optional<Eigen::Index> window = std::nullopt) const;

  /// Training pass over frames [begin, begin + length), which must fit in
  /// max_context. The encoder is run from its receptive field before `begin`.
  ModelOutput<S> forward_train(const Matrix<S>& input0, const Matrix<S>& input1, Eigen::Index begin,
                               Eigen::Index length, Tape<S>& tape, nn::Rng* dropout_rng) const;

  /// Accumulates parameter gradients into `grads` (same layout as params()).
  void backward(const Tape<S>& tape, const OutputGrads<S>& d_out, ModelParams<S>& grads) const;

  /// Encoder over a full input sequence (identity for external features).
  Matrix<S> encode(const Matrix<S>& input) const;

  /// Heads applied to the Transformer output for the last frame of the given
  /// encoder windows. Used by the streaming runtime.
  ModelOutput<S> predict_last(const Matrix<S>& encoded0, const Matrix<S>& encoded1) const;

  template <typename T>
  Model<T> cast() const;

 private:
  Matrix<S> encode_impl(const Matrix<S>& input, typename Tape<S>::EncoderCache* cache) const;
  void encoder_backward(const typename Tape<S>::EncoderCache& cache, const Matrix<S>& d_out,
                        ModelParams<S>& grads) const;
  Matrix<S> transformer(const Matrix<S>& e0, const Matrix<S>& e1, bool last_only, nn::Rng* rng,
                        Tape<S>* tape) const;
  ModelOutput<S> heads(const Matrix<S>& hidden) const;
  void check_inputs(const Matrix<S>& input0, const Matrix<S>& input1) const;

  ModelConfig config_;
  ModelParams<S> params_;
};

extern template class Model<float>;
extern template class Model<double>;
extern template struct ModelOutput<float>;
extern template struct ModelOutput<double>;

using RuntimeModel = Model<float>;

/// Log-mel front end followed by the model's reference encoder.
FeatureSequence encode_reference(std::span<const float> samples, const RuntimeModel& model,
                                 int channel_id = 0);

/// Encoder inputs for one channel: log-mel frames for the reference encoder.
FeatureSequence model_inputs(std::span<const float> samples, const ModelConfig& config,
                             int channel_id = 0);

// ---------------------------------------------------------------------------
// Checkpoints: "VAPB" magic, format version, embedded JSON config and a table
// of named little-endian float32 tensors.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void store_checkpoint(const RuntimeModel& model, const std::filesystem::path& path);
RuntimeModel load_checkpoint(const std::filesystem::path& path);

// External feature files: int32 T, int32 D, float32 frame_rate, then T*D
// row-major float32 values, all little-endian.
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& features);
FeatureSequence read_feature_file(const std::filesystem::path& path);

}  // namespace vapbc
