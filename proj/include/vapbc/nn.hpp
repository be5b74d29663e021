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

// Dense layers with hand-written backward passes. Every layer is a plain
// parameter struct plus free forward/backward functions; the gradient of a
// parameter struct is another instance of the same struct.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace vapbc::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Deterministic uniform/normal draws independent of the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename S>
struct Linear {
  Matrix<S> weight;  // out x in
  Matrix<S> bias;    // 1 x out
};

template <typename S>
struct LayerNorm {
  Matrix<S> gain;  // 1 x d
  Matrix<S> bias;  // 1 x d
};

template <typename S>
struct Attention {
  Linear<S> query, key, value, output;
};

template <typename S>
struct FeedForward {
  Linear<S> up, down;
};

/// Pre-norm Transformer block. A cross block normalises its memory input with
/// `norm_memory`; a self block leaves it empty.
template <typename S>
struct Block {
  LayerNorm<S> norm_query;
  LayerNorm<S> norm_memory;
  Attention<S> attention;
  LayerNorm<S> norm_ff;
  FeedForward<S> ff;

  bool is_cross() const { return norm_memory.gain.size() > 0; }
};

// ---------------------------------------------------------------------------
// Construction and traversal

template <typename S>
Linear<S> make_linear(int in, int out, Rng& rng, double gain = 1.0) {
  Linear<S> p{Matrix<S>(out, in), Matrix<S>::Zero(1, out)};
  const double bound = gain / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < p.weight.size(); ++i) {
    p.weight.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  return p;
}

template <typename S>
LayerNorm<S> make_layer_norm(int d) {
  return {Matrix<S>::Ones(1, d), Matrix<S>::Zero(1, d)};
}

template <typename S>
Block<S> make_block(int d, int ffn, bool cross, Rng& rng) {
  Block<S> b;
  b.norm_query = make_layer_norm<S>(d);
  if (cross) b.norm_memory = make_layer_norm<S>(d);
  b.attention = {make_linear<S>(d, d, rng), make_linear<S>(d, d, rng), make_linear<S>(d, d, rng),
                 make_linear<S>(d, d, rng)};
  b.norm_ff = make_layer_norm<S>(d);
  b.ff = {make_linear<S>(d, ffn, rng), make_linear<S>(ffn, d, rng)};
  return b;
}

template <typename S, typename F>
void visit(Linear<S>& p, const std::string& name, F&& f) {
  f(name + ".weight", p.weight);
  f(name + ".bias", p.bias);
}

template <typename S, typename F>
void visit(LayerNorm<S>& p, const std::string& name, F&& f) {
  f(name + ".gain", p.gain);
  f(name + ".bias", p.bias);
}

template <typename S, typename F>
void visit(Block<S>& p, const std::string& name, F&& f) {
  visit(p.norm_query, name + ".norm_query", f);
  if (p.is_cross()) visit(p.norm_memory, name + ".norm_memory", f);
  visit(p.attention.query, name + ".attn.query", f);
  visit(p.attention.key, name + ".attn.key", f);
  visit(p.attention.value, name + ".attn.value", f);
  visit(p.attention.output, name + ".attn.output", f);
  visit(p.norm_ff, name + ".norm_ff", f);
  visit(p.ff.up, name + ".ff.up", f);
  visit(p.ff.down, name + ".ff.down", f);
}

// ---------------------------------------------------------------------------
// Elementwise helpers

template <typename S>
S gelu(S x) {
  constexpr S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  constexpr S c = static_cast<S>(0.044715);
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(k * (x + c * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  constexpr S k = static_cast<S>(0.7978845608028654);
  constexpr S c = static_cast<S>(0.044715);
  const S t = std::tanh(k * (x + c * x * x * x));
  return static_cast<S>(0.5) * (static_cast<S>(1) + t) +
         static_cast<S>(0.5) * x * (static_cast<S>(1) - t * t) * k * (static_cast<S>(1) + 3 * c * x * x);
}

/// Row-wise softmax in place.
template <typename S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

// ---------------------------------------------------------------------------
// Linear

template <typename S>
Matrix<S> linear_forward(const Linear<S>& p, const Matrix<S>& x) {
  Matrix<S> y(x.rows(), p.weight.rows());
  y.noalias() = x * p.weight.transpose();
  y.rowwise() += p.bias.row(0);
  return y;
}

/// Accumulates parameter gradients into `g` and returns dL/dx.
template <typename S>
Matrix<S> linear_backward(const Linear<S>& p, const Matrix<S>& x, const Matrix<S>& dy, Linear<S>& g,
                          bool need_input_grad = true) {
  g.weight.noalias() += dy.transpose() * x;
  g.bias.row(0) += dy.colwise().sum();
  if (!need_input_grad) return {};
  Matrix<S> dx(dy.rows(), p.weight.cols());
  dx.noalias() = dy * p.weight;
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename S>
struct LayerNormCache {
  Matrix<S> normalized;
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std;
};

template <typename S>
Matrix<S> layer_norm_forward(const LayerNorm<S>& p, const Matrix<S>& x, LayerNormCache<S>* cache) {
  constexpr S eps = static_cast<S>(1e-5);
  const Eigen::Index d = x.cols();
  Matrix<S> xhat(x.rows(), d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const S var = centered.square().sum() / static_cast<S>(d);
    inv_std[r] = static_cast<S>(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std[r];
  }
  Matrix<S> y = (xhat.array().rowwise() * p.gain.row(0).array()).matrix();
  y.rowwise() += p.bias.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const LayerNorm<S>& p, const LayerNormCache<S>& cache,
                              const Matrix<S>& dy, LayerNorm<S>& g) {
  g.gain.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  g.bias.row(0) += dy.colwise().sum();
  const Matrix<S> dxhat = (dy.array().rowwise() * p.gain.row(0).array()).matrix();
  const auto d = static_cast<S>(dy.cols());
  Matrix<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const S mean_d = dxhat.row(r).sum() / d;
    const S mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / d;
    dx.row(r) = cache.inv_std[r] *
                (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention with an end-aligned causal mask: query row i may see
// memory rows j <= i + (memory_rows - query_rows).

template <typename S>
struct AttentionCache {
  Matrix<S> query_in, memory_in;
  Matrix<S> q, k, v;
  std::vector<Matrix<S>> probs;  // one Tq x Tk matrix per head
  Matrix<S> context;
};

template <typename S>
Matrix<S> attention_forward(const Attention<S>& p, const Matrix<S>& query_in,
                            const Matrix<S>& memory_in, int heads, AttentionCache<S>* cache) {
  const Eigen::Index tq = query_in.rows();
  const Eigen::Index tk = memory_in.rows();
  const Eigen::Index d = p.query.weight.rows();
  const Eigen::Index dh = d / heads;
  const Eigen::Index offset = tk - tq;
  const S scale = static_cast<S>(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> q = linear_forward(p.query, query_in);
  Matrix<S> k = linear_forward(p.key, memory_in);
  Matrix<S> v = linear_forward(p.value, memory_in);
  Matrix<S> context(tq, d);
  std::vector<Matrix<S>> probs;
  if (cache) probs.reserve(heads);

  for (int h = 0; h < heads; ++h) {
    Matrix<S> scores(tq, tk);
    scores.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    scores *= scale;
    for (Eigen::Index i = 0; i < tq; ++i) {
      const Eigen::Index visible = i + offset + 1;
      if (visible < tk) scores.row(i).tail(tk - visible).setConstant(-std::numeric_limits<S>::infinity());
    }
    softmax_rows(scores);
    context.middleCols(h * dh, dh).noalias() = scores * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(scores));
  }
  Matrix<S> out = linear_forward(p.output, context);
  if (cache) {
    cache->query_in = query_in;
    cache->memory_in = memory_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

/// Returns (d query_in, d memory_in).
template <typename S>
std::pair<Matrix<S>, Matrix<S>> attention_backward(const Attention<S>& p, const AttentionCache<S>& c,
                                                   const Matrix<S>& dout, int heads, Attention<S>& g) {
  const Eigen::Index d = p.query.weight.rows();
  const Eigen::Index dh = d / heads;
  const S scale = static_cast<S>(1) / std::sqrt(static_cast<S>(dh));

  const Matrix<S> dcontext = linear_backward(p.output, c.context, dout, g.output);
  Matrix<S> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& a = c.probs[h];
    const Matrix<S> dctx_h = dcontext.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx_h;
    Matrix<S> da(a.rows(), a.cols());
    da.noalias() = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    const Eigen::Matrix<S, Eigen::Dynamic, 1> row_dot = (da.array() * a.array()).rowwise().sum();
    Matrix<S> dscores = (a.array() * (da.colwise() - row_dot).array()).matrix();
    dscores *= scale;
    dq.middleCols(h * dh, dh).noalias() = dscores * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * c.q.middleCols(h * dh, dh);
  }
  Matrix<S> dquery = linear_backward(p.query, c.query_in, dq, g.query);
  Matrix<S> dmemory = linear_backward(p.key, c.memory_in, dk, g.key);
  dmemory += linear_backward(p.value, c.memory_in, dv, g.value);
  return {std::move(dquery), std::move(dmemory)};
}

// ---------------------------------------------------------------------------
// Dropout. A null rng or zero rate makes it the identity.

template <typename S>
Matrix<S> dropout_forward(const Matrix<S>& x, double rate, Rng* rng, Matrix<S>* mask) {
  if (rng == nullptr || rate <= 0.0) {
    if (mask) mask->resize(0, 0);
    return x;
  }
  Matrix<S> m(x.rows(), x.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng->uniform() < rate ? S(0) : keep_scale;
  }
  Matrix<S> y = (x.array() * m.array()).matrix();
  if (mask) *mask = std::move(m);
  return y;
}

template <typename S>
Matrix<S> dropout_backward(const Matrix<S>& dy, const Matrix<S>& mask) {
  if (mask.size() == 0) return dy;
  return (dy.array() * mask.array()).matrix();
}

// ---------------------------------------------------------------------------
// Transformer block

template <typename S>
struct BlockCache {
  LayerNormCache<S> norm_query, norm_memory, norm_ff;
  AttentionCache<S> attention;
  Matrix<S> attn_mask, ff_mask;
  Matrix<S> ff_in, ff_hidden_pre;
};

struct BlockOptions {
  int heads = 4;
  double dropout = 0.0;
  Rng* rng = nullptr;  // non-null enables dropout
};

/// `query` rows are aligned to the end of `memory` (self blocks pass the same
/// matrix twice, possibly with fewer query rows for last-frame evaluation).
template <typename S>
Matrix<S> block_forward(const Block<S>& p, const Matrix<S>& query, const Matrix<S>& memory,
                        const BlockOptions& opt, BlockCache<S>* cache) {
  const Matrix<S> hq = layer_norm_forward(p.norm_query, query, cache ? &cache->norm_query : nullptr);
  Matrix<S> attn;
  if (p.is_cross()) {
    const Matrix<S> hm = layer_norm_forward(p.norm_memory, memory, cache ? &cache->norm_memory : nullptr);
    attn = attention_forward(p.attention, hq, hm, opt.heads, cache ? &cache->attention : nullptr);
  } else if (query.rows() == memory.rows()) {
    attn = attention_forward(p.attention, hq, hq, opt.heads, cache ? &cache->attention : nullptr);
  } else {
    const Matrix<S> hm = layer_norm_forward(p.norm_query, memory, static_cast<LayerNormCache<S>*>(nullptr));
    attn = attention_forward(p.attention, hq, hm, opt.heads, static_cast<AttentionCache<S>*>(nullptr));
  }
  attn = dropout_forward(attn, opt.dropout, opt.rng, cache ? &cache->attn_mask : nullptr);
  Matrix<S> x1 = query + attn;

  const Matrix<S> h2 = layer_norm_forward(p.norm_ff, x1, cache ? &cache->norm_ff : nullptr);
  Matrix<S> pre = linear_forward(p.ff.up, h2);
  Matrix<S> act = pre.unaryExpr([](S v) { return gelu(v); });
  Matrix<S> f = linear_forward(p.ff.down, act);
  f = dropout_forward(f, opt.dropout, opt.rng, cache ? &cache->ff_mask : nullptr);
  if (cache) {
    cache->ff_in = h2;
    cache->ff_hidden_pre = std::move(pre);
  }
  return x1 + f;
}

/// Returns (d query, d memory). For self blocks the memory gradient is folded
/// into the query gradient and the second matrix is empty.
template <typename S>
std::pair<Matrix<S>, Matrix<S>> block_backward(const Block<S>& p, const BlockCache<S>& c,
                                               const Matrix<S>& dy, int heads, Block<S>& g) {
  // y = x1 + drop(down(gelu(up(ln_ff(x1)))))
  const Matrix<S> df = dropout_backward(dy, c.ff_mask);
  const Matrix<S> act = c.ff_hidden_pre.unaryExpr([](S v) { return gelu(v); });
  Matrix<S> dact = linear_backward(p.ff.down, act, df, g.ff.down);
  dact.array() *= c.ff_hidden_pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  const Matrix<S> dh2 = linear_backward(p.ff.up, c.ff_in, dact, g.ff.up);
  Matrix<S> dx1 = dy + layer_norm_backward(p.norm_ff, c.norm_ff, dh2, g.norm_ff);

  // x1 = x + drop(attn(ln_q(x), ln_m(mem)))
  const Matrix<S> dattn = dropout_backward(dx1, c.attn_mask);
  auto [dhq, dhm] = attention_backward(p.attention, c.attention, dattn, heads, g.attention);
  if (p.is_cross()) {
    Matrix<S> dquery = dx1 + layer_norm_backward(p.norm_query, c.norm_query, dhq, g.norm_query);
    Matrix<S> dmemory = layer_norm_backward(p.norm_memory, c.norm_memory, dhm, g.norm_memory);
    return {std::move(dquery), std::move(dmemory)};
  }
  dhq += dhm;
  Matrix<S> dquery = dx1 + layer_norm_backward(p.norm_query, c.norm_query, dhq, g.norm_query);
  return {std::move(dquery), Matrix<S>()};
}

// ---------------------------------------------------------------------------
// Causal 1-D convolution expressed as a Linear over stacked history frames.
// Row t of the unfolded input is [x[t-k+1], ..., x[t]] with zeros before 0.

template <typename S>
Matrix<S> unfold_causal(const Matrix<S>& x, int kernel) {
  const Eigen::Index c = x.cols();
  Matrix<S> out = Matrix<S>::Zero(x.rows(), c * kernel);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = t - (kernel - 1) + j;
      if (src >= 0) out.row(t).segment(j * c, c) = x.row(src);
    }
  }
  return out;
}

template <typename S>
Matrix<S> fold_causal(const Matrix<S>& dcols, int kernel, Eigen::Index channels) {
  Matrix<S> dx = Matrix<S>::Zero(dcols.rows(), channels);
  for (Eigen::Index t = 0; t < dcols.rows(); ++t) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = t - (kernel - 1) + j;
      if (src >= 0) dx.row(src) += dcols.row(t).segment(j * channels, channels);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Conversion between scalar types (checkpoints and gradient checks).

template <typename T, typename S>
Linear<T> cast(const Linear<S>& p) {
  return {p.weight.template cast<T>(), p.bias.template cast<T>()};
}

template <typename T, typename S>
LayerNorm<T> cast(const LayerNorm<S>& p) {
  return {p.gain.template cast<T>(), p.bias.template cast<T>()};
}

template <typename T, typename S>
Block<T> cast(const Block<S>& p) {
  Block<T> b;
  b.norm_query = cast<T>(p.norm_query);
  b.norm_memory = cast<T>(p.norm_memory);
  b.attention = {cast<T>(p.attention.query), cast<T>(p.attention.key), cast<T>(p.attention.value),
                 cast<T>(p.attention.output)};
  b.norm_ff = cast<T>(p.norm_ff);
  b.ff = {cast<T>(p.ff.up), cast<T>(p.ff.down)};
  return b;
}

}  // namespace vapbc::nn
