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

#include "vapbc/model.hpp"

#include <algorithm>
#include <string>

#include "vapbc/error.hpp"
#include "vapbc/state_codec.hpp"

namespace vapbc {

namespace {

constexpr std::uint64_t kBcHeadSeedSalt = 0x9e3779b97f4a7c15ULL;

std::string to_string(EncoderKind k) { return k == EncoderKind::Reference ? "reference" : "external"; }
std::string to_string(Architecture a) { return a == Architecture::Vap ? "vap" : "baseline"; }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  if (d_channel <= 0) fail("d_channel must be positive");
  if (d_concat != 2 * d_channel) fail("d_concat must equal 2 * d_channel");
  if (n_heads <= 0 || d_channel % n_heads != 0) {
    fail("n_heads (" + std::to_string(n_heads) + ") must divide d_channel (" + std::to_string(d_channel) + ")");
  }
  if (bc_classes != 2 && bc_classes != 3) fail("bc_classes must be 2 or 3");
  if (frame_rate != 10.0 && frame_rate != 50.0) fail("frame_rate must be 10 or 50");
  if (n_channel_layers < 0 || n_cross_layers < 0) fail("layer counts must be non-negative");
  if (ffn_mult <= 0) fail("ffn_mult must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (max_context <= 0) fail("max_context must be positive");
  if (encoder == EncoderKind::Reference) {
    if (n_mels < 8) fail("n_mels must be at least 8");
    if (encoder_layers <= 0 || encoder_kernel <= 0) fail("encoder shape must be positive");
  }
  if (arch == Architecture::Baseline && encoder != EncoderKind::Reference) {
    fail("the baseline architecture fine-tunes its encoder and needs the reference encoder");
  }
}

std::size_t ModelConfig::expected_parameter_count() const {
  const std::size_t d = d_channel;
  const std::size_t f = static_cast<std::size_t>(ffn_mult) * d;
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  std::size_t total = 0;
  if (encoder == EncoderKind::Reference) {
    for (int i = 0; i < encoder_layers; ++i) {
      const std::size_t in = i == 0 ? static_cast<std::size_t>(n_mels) : d;
      total += linear(in * encoder_kernel, d);
    }
    total += linear(d, d);
  }
  if (arch == Architecture::Vap) {
    const std::size_t block = 2 * d + 4 * linear(d, d) + 2 * d + linear(d, f) + linear(f, d);
    total += static_cast<std::size_t>(max_context) * d;
    total += static_cast<std::size_t>(n_channel_layers) * block;
    total += static_cast<std::size_t>(n_cross_layers) * 2 * (block + 2 * d);
    total += 2 * (2 * d);
  }
  total += linear(2 * d, kNumStates) + linear(2 * d, 2) + linear(2 * d, bc_classes);
  return total;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"encoder", to_string(c.encoder)},
                     {"arch", to_string(c.arch)},
                     {"d_channel", c.d_channel},
                     {"d_concat", c.d_concat},
                     {"n_channel_layers", c.n_channel_layers},
                     {"n_cross_layers", c.n_cross_layers},
                     {"n_heads", c.n_heads},
                     {"ffn_mult", c.ffn_mult},
                     {"dropout", c.dropout},
                     {"frame_rate", c.frame_rate},
                     {"bc_classes", c.bc_classes},
                     {"bc_head_trained", c.bc_head_trained},
                     {"max_context", c.max_context},
                     {"n_mels", c.n_mels},
                     {"encoder_layers", c.encoder_layers},
                     {"encoder_kernel", c.encoder_kernel},
                     {"feature_offset", c.feature_offset},
                     {"feature_scale", c.feature_scale},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  try {
    const std::string enc = j.value("encoder", to_string(d.encoder));
    if (enc != "reference" && enc != "external") throw Error(Errc::InvalidConfig, "unknown encoder '" + enc + "'");
    c.encoder = enc == "reference" ? EncoderKind::Reference : EncoderKind::External;
    const std::string arch = j.value("arch", to_string(d.arch));
    if (arch != "vap" && arch != "baseline") throw Error(Errc::InvalidConfig, "unknown arch '" + arch + "'");
    c.arch = arch == "vap" ? Architecture::Vap : Architecture::Baseline;
    c.d_channel = j.value("d_channel", d.d_channel);
    c.d_concat = j.value("d_concat", 2 * c.d_channel);
    c.n_channel_layers = j.value("n_channel_layers", d.n_channel_layers);
    c.n_cross_layers = j.value("n_cross_layers", d.n_cross_layers);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
    c.dropout = j.value("dropout", d.dropout);
    c.frame_rate = j.value("frame_rate", d.frame_rate);
    c.bc_classes = j.value("bc_classes", d.bc_classes);
    c.bc_head_trained = j.value("bc_head_trained", d.bc_head_trained);
    c.max_context = j.value("max_context", d.max_context);
    c.n_mels = j.value("n_mels", d.n_mels);
    c.encoder_layers = j.value("encoder_layers", d.encoder_layers);
    c.encoder_kernel = j.value("encoder_kernel", d.encoder_kernel);
    c.feature_offset = j.value("feature_offset", d.feature_offset);
    c.feature_scale = j.value("feature_scale", d.feature_scale);
    c.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

template <typename S>
Matrix<S> ModelOutput<S>::vap_probs() const {
  Matrix<S> p = vap_logits;
  nn::softmax_rows(p);
  return p;
}

template <typename S>
Matrix<S> ModelOutput<S>::vad_probs() const {
  return vad_logits.unaryExpr([](S x) { return static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x)); });
}

template <typename S>
Matrix<S> ModelOutput<S>::bc_probs() const {
  Matrix<S> p = bc_logits;
  nn::softmax_rows(p);
  return p;
}

// ---------------------------------------------------------------------------

template <typename S>
Model<S>::Model(ModelConfig config, ModelParams<S> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

template <typename S>
Model<S> Model<S>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Rng rng(seed);
  const int d = config.d_channel;
  const int ffn = config.ffn_mult * d;
  ModelParams<S> p;
  if (config.encoder == EncoderKind::Reference) {
    // Variance-preserving scales keep encoder features near unit size, so the
    // first layer norm does not amplify tiny feature differences.
    for (int i = 0; i < config.encoder_layers; ++i) {
      const int in = i == 0 ? config.n_mels : d;
      p.encoder_convs.push_back(nn::make_linear<S>(in * config.encoder_kernel, d, rng, std::sqrt(6.0)));
    }
    p.encoder_proj = nn::make_linear<S>(d, d, rng, std::sqrt(3.0));
  }
  if (config.arch == Architecture::Vap) {
    p.positions.resize(config.max_context, d);
    for (Eigen::Index i = 0; i < p.positions.size(); ++i) {
      p.positions.data()[i] = static_cast<S>(0.02 * rng.normal());
    }
    for (int i = 0; i < config.n_channel_layers; ++i) {
      p.channel_blocks.push_back(nn::make_block<S>(d, ffn, false, rng));
    }
    for (int i = 0; i < config.n_cross_layers; ++i) {
      p.cross_blocks.push_back({nn::make_block<S>(d, ffn, true, rng), nn::make_block<S>(d, ffn, true, rng)});
    }
    p.final_norm = nn::make_layer_norm<S>(2 * d);
  }
  p.vap_head = nn::make_linear<S>(2 * d, kNumStates, rng);
  p.vad_head = nn::make_linear<S>(2 * d, 2, rng);

  ModelConfig c = config;
  c.seed = seed;
  c.bc_head_trained = false;
  Model model(c, std::move(p));
  model.reset_bc_head(config.bc_classes, seed);
  return model;
}

template <typename S>
void Model<S>::reset_bc_head(int classes, std::uint64_t seed) {
  if (classes != 2 && classes != 3) throw Error(Errc::InvalidConfig, "bc_classes must be 2 or 3");
  nn::Rng rng(seed ^ kBcHeadSeedSalt);
  params_.bc_head = nn::make_linear<S>(2 * config_.d_channel, classes, rng);
  config_.bc_classes = classes;
  config_.bc_head_trained = false;
}

template <typename S>
std::size_t Model<S>::parameter_count() const {
  std::size_t n = 0;
  auto& p = const_cast<ModelParams<S>&>(params_);
  visit_parameters(p, [&](const std::string&, Matrix<S>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename S>
void Model<S>::check_inputs(const Matrix<S>& input0, const Matrix<S>& input1) const {
  if (input0.rows() != input1.rows()) {
    throw Error(Errc::LengthMismatch, "channel feature lengths differ (" + std::to_string(input0.rows()) +
                                          " vs " + std::to_string(input1.rows()) + ")");
  }
  const int dim = config_.input_dim();
  if ((input0.rows() > 0 && input0.cols() != dim) || (input1.rows() > 0 && input1.cols() != dim)) {
    throw Error(Errc::ConfigMismatch, "input feature dimension must be " + std::to_string(dim));
  }
}

template <typename S>
Matrix<S> Model<S>::encode_impl(const Matrix<S>& input, typename Tape<S>::EncoderCache* cache) const {
  if (config_.encoder == EncoderKind::External) return input;
  Matrix<S> x = ((input.array() - static_cast<S>(config_.feature_offset)) *
                 static_cast<S>(config_.feature_scale)).matrix();
  for (const auto& conv : params_.encoder_convs) {
    Matrix<S> unfolded = nn::unfold_causal(x, config_.encoder_kernel);
    Matrix<S> pre = nn::linear_forward(conv, unfolded);
    x = pre.unaryExpr([](S v) { return nn::gelu(v); });
    if (cache) {
      cache->unfolded.push_back(std::move(unfolded));
      cache->pre_activation.push_back(std::move(pre));
    }
  }
  if (cache) cache->proj_in = x;
  return nn::linear_forward(params_.encoder_proj, x);
}

template <typename S>
Matrix<S> Model<S>::encode(const Matrix<S>& input) const {
  return encode_impl(input, nullptr);
}

template <typename S>
void Model<S>::encoder_backward(const typename Tape<S>::EncoderCache& cache, const Matrix<S>& d_out,
                                ModelParams<S>& grads) const {
  if (config_.encoder == EncoderKind::External) return;
  Matrix<S> dx = nn::linear_backward(params_.encoder_proj, cache.proj_in, d_out, grads.encoder_proj);
  for (std::size_t i = params_.encoder_convs.size(); i-- > 0;) {
    dx.array() *= cache.pre_activation[i].unaryExpr([](S v) { return nn::gelu_grad(v); }).array();
    const bool need_input = i > 0;
    Matrix<S> dcols = nn::linear_backward(params_.encoder_convs[i], cache.unfolded[i], dx,
                                          grads.encoder_convs[i], need_input);
    if (!need_input) break;
    dx = nn::fold_causal(dcols, config_.encoder_kernel, params_.encoder_convs[i - 1].weight.rows());
  }
}

template <typename S>
Matrix<S> Model<S>::transformer(const Matrix<S>& e0, const Matrix<S>& e1, bool last_only, nn::Rng* rng,
                                Tape<S>* tape) const {
  const Eigen::Index t = e0.rows();
  const int d = config_.d_channel;
  if (config_.arch == Architecture::Baseline) {
    const Eigen::Index rows = last_only ? 1 : t;
    Matrix<S> h(rows, 2 * d);
    h.leftCols(d) = e0.bottomRows(rows);
    h.rightCols(d) = e1.bottomRows(rows);
    return h;
  }
  if (t > config_.max_context) {
    throw Error(Errc::OutOfRange, "transformer input longer than max_context");
  }
  nn::BlockOptions opt{config_.n_heads, rng ? config_.dropout : 0.0, rng};
  std::array<Matrix<S>, 2> x{e0 + params_.positions.topRows(t), e1 + params_.positions.topRows(t)};

  const std::size_t n_channel = params_.channel_blocks.size();
  const std::size_t n_cross = params_.cross_blocks.size();
  if (tape) {
    tape->channel[0].assign(n_channel, {});
    tape->channel[1].assign(n_channel, {});
    tape->cross.assign(n_cross, {});
  }
  for (std::size_t l = 0; l < n_channel; ++l) {
    const bool truncate = last_only && n_cross == 0 && l + 1 == n_channel;
    for (int c = 0; c < 2; ++c) {
      const Matrix<S> q = truncate ? Matrix<S>(x[c].bottomRows(1)) : x[c];
      x[c] = nn::block_forward(params_.channel_blocks[l], q, x[c], opt, tape ? &tape->channel[c][l] : nullptr);
    }
  }
  for (std::size_t l = 0; l < n_cross; ++l) {
    const bool truncate = last_only && l + 1 == n_cross;
    const Matrix<S> q0 = truncate ? Matrix<S>(x[0].bottomRows(1)) : x[0];
    const Matrix<S> q1 = truncate ? Matrix<S>(x[1].bottomRows(1)) : x[1];
    Matrix<S> y0 = nn::block_forward(params_.cross_blocks[l][0], q0, x[1], opt, tape ? &tape->cross[l][0] : nullptr);
    Matrix<S> y1 = nn::block_forward(params_.cross_blocks[l][1], q1, x[0], opt, tape ? &tape->cross[l][1] : nullptr);
    x[0] = std::move(y0);
    x[1] = std::move(y1);
  }
  if (last_only && n_channel == 0 && n_cross == 0) {
    x[0] = Matrix<S>(x[0].bottomRows(1));
    x[1] = Matrix<S>(x[1].bottomRows(1));
  }
  Matrix<S> h(x[0].rows(), 2 * d);
  h.leftCols(d) = x[0];
  h.rightCols(d) = x[1];
  return nn::layer_norm_forward(params_.final_norm, h, tape ? &tape->final_norm : nullptr);
}

template <typename S>
ModelOutput<S> Model<S>::heads(const Matrix<S>& hidden) const {
  return {nn::linear_forward(params_.vap_head, hidden), nn::linear_forward(params_.vad_head, hidden),
          nn::linear_forward(params_.bc_head, hidden)};
}

template <typename S>
ModelOutput<S> Model<S>::forward(const Matrix<S>& input0, const Matrix<S>& input1,
                                 std::optional<Eigen::Index> window) const {
  check_inputs(input0, input1);
  const Eigen::Index t = input0.rows();
  if (t == 0) {
    return {Matrix<S>(0, kNumStates), Matrix<S>(0, 2), Matrix<S>(0, config_.bc_classes)};
  }
  const Matrix<S> e0 = encode(input0);
  const Matrix<S> e1 = encode(input1);
  if (config_.arch == Architecture::Baseline) return heads(transformer(e0, e1, false, nullptr, nullptr));

  Eigen::Index w = config_.max_context;
  if (window && *window > 0) w = std::min<Eigen::Index>(w, *window);
  if (t <= w) return heads(transformer(e0, e1, false, nullptr, nullptr));

  // Frames before w share the prefix pass; later frames each get their own
  // trailing window.
  const Matrix<S> prefix = transformer(e0.topRows(w), e1.topRows(w), false, nullptr, nullptr);
  Matrix<S> hidden(t, 2 * config_.d_channel);
  hidden.topRows(w) = prefix;
  for (Eigen::Index end = w; end < t; ++end) {
    hidden.row(end) = transformer(e0.middleRows(end - w + 1, w), e1.middleRows(end - w + 1, w), true,
                                  nullptr, nullptr);
  }
  return heads(hidden);
}

template <typename S>
ModelOutput<S> Model<S>::predict_last(const Matrix<S>& encoded0, const Matrix<S>& encoded1) const {
  if (encoded0.rows() != encoded1.rows() || encoded0.rows() == 0) {
    throw Error(Errc::LengthMismatch, "predict_last needs equal, non-empty windows");
  }
  return heads(transformer(encoded0, encoded1, true, nullptr, nullptr));
}

template <typename S>
ModelOutput<S> Model<S>::forward_train(const Matrix<S>& input0, const Matrix<S>& input1, Eigen::Index begin,
                                       Eigen::Index length, Tape<S>& tape, nn::Rng* dropout_rng) const {
  check_inputs(input0, input1);
  if (begin < 0 || length <= 0 || begin + length > input0.rows()) {
    throw Error(Errc::OutOfRange, "training crop outside the sequence");
  }
  if (config_.arch == Architecture::Vap && length > config_.max_context) {
    throw Error(Errc::OutOfRange, "training crop longer than max_context");
  }
  tape = Tape<S>{};
  const Eigen::Index first = std::max<Eigen::Index>(0, begin - config_.encoder_receptive_field());
  const Eigen::Index rows = begin + length - first;
  tape.skipped_rows = begin - first;
  tape.length = length;
  const Matrix<S> e0 = encode_impl(input0.middleRows(first, rows), &tape.encoder[0]);
  const Matrix<S> e1 = encode_impl(input1.middleRows(first, rows), &tape.encoder[1]);
  tape.hidden = transformer(e0.bottomRows(length), e1.bottomRows(length), false, dropout_rng, &tape);
  tape.recorded = true;
  return heads(tape.hidden);
}

template <typename S>
void Model<S>::backward(const Tape<S>& tape, const OutputGrads<S>& d_out, ModelParams<S>& grads) const {
  if (!tape.recorded) throw Error(Errc::NoForwardPass, "backward called without a recorded forward pass");
  const int d = config_.d_channel;
  Matrix<S> dh = nn::linear_backward(params_.vap_head, tape.hidden, d_out.vap_logits, grads.vap_head);
  dh += nn::linear_backward(params_.vad_head, tape.hidden, d_out.vad_logits, grads.vad_head);
  dh += nn::linear_backward(params_.bc_head, tape.hidden, d_out.bc_logits, grads.bc_head);

  std::array<Matrix<S>, 2> dx;
  if (config_.arch == Architecture::Vap) {
    dh = nn::layer_norm_backward(params_.final_norm, tape.final_norm, dh, grads.final_norm);
    dx = {Matrix<S>(dh.leftCols(d)), Matrix<S>(dh.rightCols(d))};
    for (std::size_t l = params_.cross_blocks.size(); l-- > 0;) {
      auto [dq0, dm1] = nn::block_backward(params_.cross_blocks[l][0], tape.cross[l][0], dx[0], config_.n_heads,
                                           grads.cross_blocks[l][0]);
      auto [dq1, dm0] = nn::block_backward(params_.cross_blocks[l][1], tape.cross[l][1], dx[1], config_.n_heads,
                                           grads.cross_blocks[l][1]);
      dx[0] = dq0 + dm0;
      dx[1] = dq1 + dm1;
    }
    for (std::size_t l = params_.channel_blocks.size(); l-- > 0;) {
      for (int c = 0; c < 2; ++c) {
        dx[c] = nn::block_backward(params_.channel_blocks[l], tape.channel[c][l], dx[c], config_.n_heads,
                                   grads.channel_blocks[l])
                    .first;
      }
    }
    grads.positions.topRows(tape.length) += dx[0] + dx[1];
  } else {
    dx = {Matrix<S>(dh.leftCols(d)), Matrix<S>(dh.rightCols(d))};
  }

  if (config_.encoder == EncoderKind::Reference) {
    for (int c = 0; c < 2; ++c) {
      Matrix<S> de = Matrix<S>::Zero(tape.skipped_rows + tape.length, d);
      de.bottomRows(tape.length) = dx[c];
      encoder_backward(tape.encoder[c], de, grads);
    }
  }
}

template <typename S>
template <typename T>
Model<T> Model<S>::cast() const {
  ModelParams<T> p;
  for (const auto& conv : params_.encoder_convs) p.encoder_convs.push_back(nn::cast<T>(conv));
  p.encoder_proj = nn::cast<T>(params_.encoder_proj);
  p.positions = params_.positions.template cast<T>();
  for (const auto& b : params_.channel_blocks) p.channel_blocks.push_back(nn::cast<T>(b));
  for (const auto& pair : params_.cross_blocks) p.cross_blocks.push_back({nn::cast<T>(pair[0]), nn::cast<T>(pair[1])});
  p.final_norm = nn::cast<T>(params_.final_norm);
  p.vap_head = nn::cast<T>(params_.vap_head);
  p.vad_head = nn::cast<T>(params_.vad_head);
  p.bc_head = nn::cast<T>(params_.bc_head);
  return Model<T>(config_, std::move(p));
}

template struct ModelOutput<float>;
template struct ModelOutput<double>;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

// ---------------------------------------------------------------------------

FeatureSequence model_inputs(std::span<const float> samples, const ModelConfig& config, int channel_id) {
  if (config.encoder != EncoderKind::Reference) {
    throw Error(Errc::ConfigMismatch, "audio inputs need the reference encoder");
  }
  LogMelOptions opt;
  opt.frame_rate = config.frame_rate;
  opt.n_bands = config.n_mels;
  return log_mel(samples, opt, channel_id);
}

FeatureSequence encode_reference(std::span<const float> samples, const RuntimeModel& model, int channel_id) {
  FeatureSequence mel = model_inputs(samples, model.config(), channel_id);
  FeatureSequence out;
  out.frame_rate = mel.frame_rate;
  out.channel_id = channel_id;
  out.frames = model.encode(mel.frames);
  return out;
}

}  // namespace vapbc
