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

#include "vapbc/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vapbc/error.hpp"
#include "vapbc/evaluation.hpp"

namespace vapbc {

std::string_view to_string(Stage stage) { return stage == Stage::Pretrain ? "pretrain" : "finetune"; }

Stage parse_stage(std::string_view text) {
  if (text == "pretrain") return Stage::Pretrain;
  if (text == "finetune") return Stage::Finetune;
  throw Error(Errc::ConfigError, "unknown stage '" + std::string(text) + "'");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::Baseline: return "baseline";
    case Method::StNoPt: return "st_no_pt";
    case Method::StPt: return "st_pt";
    case Method::MtPt: return "mt_pt";
  }
  return "mt_pt";
}

Method parse_method(std::string_view text) {
  if (text == "baseline") return Method::Baseline;
  if (text == "st_no_pt") return Method::StNoPt;
  if (text == "st_pt") return Method::StPt;
  if (text == "mt_pt") return Method::MtPt;
  throw Error(Errc::ConfigError, "unknown method '" + std::string(text) + "'");
}

void TrainConfig::apply_method_defaults() {
  if (stage != Stage::Finetune) return;
  if (method == Method::MtPt) {
    alpha = 1.0;
    beta = 1.0;
  } else {
    alpha = 0.0;
    beta = 0.0;
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidConfig, msg); };
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) fail("loss weights must be non-negative");
  if (!(positive_weight >= 1.0)) fail("positive_weight must be >= 1");
  if (stage == Stage::Finetune) {
    if (!(gamma > 0.0)) fail("gamma must be > 0 when fine-tuning");
    if (method != Method::MtPt && (alpha != 0.0 || beta != 0.0)) {
      fail("single-task methods require alpha = beta = 0");
    }
  } else if (alpha == 0.0 && beta == 0.0) {
    fail("pre-training needs a positive alpha or beta");
  }
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(crop_seconds > 0.0)) fail("crop_seconds must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
  if (val_interval < 1) fail("val_interval must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha},
                     {"beta", c.beta},
                     {"gamma", c.gamma},
                     {"positive_weight", c.positive_weight},
                     {"stage", std::string(to_string(c.stage))},
                     {"method", std::string(to_string(c.method))},
                     {"learning_rate", c.learning_rate},
                     {"crop_seconds", c.crop_seconds},
                     {"batch_size", c.batch_size},
                     {"max_steps", c.max_steps},
                     {"val_interval", c.val_interval},
                     {"patience", c.patience},
                     {"grad_clip", c.grad_clip},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.positive_weight = j.value("positive_weight", c.positive_weight);
  if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.crop_seconds = j.value("crop_seconds", c.crop_seconds);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.val_interval = j.value("val_interval", c.val_interval);
  c.patience = j.value("patience", c.patience);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
}

// ---------------------------------------------------------------------------

namespace {

// Row-wise log-softmax in double.
template <typename S>
Eigen::ArrayXd log_softmax_row(const Matrix<S>& logits, Eigen::Index t) {
  Eigen::ArrayXd row = logits.row(t).transpose().template cast<double>().array();
  const double m = row.maxCoeff();
  const double lse = m + std::log((row - m).exp().sum());
  return row - lse;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

template <typename S>
LossBreakdown compute_loss(const ModelOutput<S>& out, const FrameLabels& labels, const TrainConfig& cfg,
                           OutputGrads<S>* grads) {
  const Eigen::Index T = out.num_frames();
  if (static_cast<std::size_t>(T) != labels.num_frames() || labels.vap_state.size() != labels.num_frames() ||
      labels.vad.num_frames() != labels.num_frames() || labels.bc_mask.size() != labels.num_frames() ||
      out.vad_logits.rows() != T || out.bc_logits.rows() != T) {
    throw Error(Errc::LengthMismatch, "outputs have " + std::to_string(T) + " frames, labels " +
                                          std::to_string(labels.num_frames()));
  }
  const Eigen::Index classes = out.bc_logits.cols();
  const double alpha = cfg.alpha, beta = cfg.beta, gamma = cfg.effective_gamma();

  LossBreakdown loss;
  if (grads) {
    grads->vap_logits = Matrix<S>::Zero(T, out.vap_logits.cols());
    grads->vad_logits = Matrix<S>::Zero(T, 2);
    grads->bc_logits = Matrix<S>::Zero(T, classes);
  }
  if (T == 0) {
    loss.all_masked = true;
    return loss;
  }

  double vap_sum = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const int target = labels.vap_state[t];
    const Eigen::ArrayXd lp = log_softmax_row(out.vap_logits, t);
    vap_sum -= lp(target);
    if (grads && alpha != 0.0) {
      Eigen::ArrayXd g = lp.exp();
      g(target) -= 1.0;
      grads->vap_logits.row(t) = (g * (alpha / static_cast<double>(T))).transpose().template cast<S>();
    }
  }
  loss.vap_frames = static_cast<std::size_t>(T);
  loss.l_vap = vap_sum / static_cast<double>(T);

  double vad_sum = 0.0;
  const double vad_n = 2.0 * static_cast<double>(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int c = 0; c < 2; ++c) {
      const double z = static_cast<double>(out.vad_logits(t, c));
      const double y = labels.vad.active[c][t] ? 1.0 : 0.0;
      vad_sum += softplus(z) - y * z;
      if (grads && beta != 0.0) grads->vad_logits(t, c) = static_cast<S>(beta * (sigmoid(z) - y) / vad_n);
    }
  }
  loss.vad_frames = static_cast<std::size_t>(2 * T);
  loss.l_vad = vad_sum / vad_n;

  double weight_sum = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!labels.bc_mask[t]) continue;
    const int target = labels.bc_class[t];
    if (target < 0 || target >= classes) {
      throw Error(Errc::ConfigMismatch, "label class " + std::to_string(target) + " outside the BC head's " +
                                            std::to_string(classes) + " classes");
    }
    weight_sum += target == kNonBc ? 1.0 : cfg.positive_weight;
    ++loss.bc_frames;
  }
  loss.bc_weight_sum = weight_sum;
  if (weight_sum == 0.0) {
    loss.all_masked = true;
  } else {
    double bc_sum = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (!labels.bc_mask[t]) continue;
      const int target = labels.bc_class[t];
      const double w = target == kNonBc ? 1.0 : cfg.positive_weight;
      const Eigen::ArrayXd lp = log_softmax_row(out.bc_logits, t);
      bc_sum -= w * lp(target);
      if (grads && gamma != 0.0) {
        Eigen::ArrayXd g = lp.exp();
        g(target) -= 1.0;
        grads->bc_logits.row(t) = (g * (gamma * w / weight_sum)).transpose().template cast<S>();
      }
    }
    loss.l_bc = bc_sum / weight_sum;
  }
  loss.total = alpha * loss.l_vap + beta * loss.l_vad + gamma * loss.l_bc;
  return loss;
}

template LossBreakdown compute_loss<float>(const ModelOutput<float>&, const FrameLabels&, const TrainConfig&,
                                           OutputGrads<float>*);
template LossBreakdown compute_loss<double>(const ModelOutput<double>&, const FrameLabels&, const TrainConfig&,
                                            OutputGrads<double>*);

FrameLabels slice_labels(const FrameLabels& labels, std::size_t begin, std::size_t length) {
  if (begin + length > labels.num_frames()) throw Error(Errc::OutOfRange, "label slice outside the session");
  auto cut = [&](const auto& v) { return std::decay_t<decltype(v)>(v.begin() + begin, v.begin() + begin + length); };
  FrameLabels out;
  out.vad.active = {cut(labels.vad.active[0]), cut(labels.vad.active[1])};
  out.vap_state = cut(labels.vap_state);
  out.bc_class = cut(labels.bc_class);
  out.bc_mask = cut(labels.bc_mask);
  return out;
}

FrameLabels concat_labels(std::span<const FrameLabels> parts) {
  FrameLabels out;
  for (const auto& p : parts) {
    for (int c = 0; c < 2; ++c) {
      out.vad.active[c].insert(out.vad.active[c].end(), p.vad.active[c].begin(), p.vad.active[c].end());
    }
    out.vap_state.insert(out.vap_state.end(), p.vap_state.begin(), p.vap_state.end());
    out.bc_class.insert(out.bc_class.end(), p.bc_class.begin(), p.bc_class.end());
    out.bc_mask.insert(out.bc_mask.end(), p.bc_mask.begin(), p.bc_mask.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

void Adam::update(ModelParams<float>& params, ModelParams<float>& grads) {
  const auto p = flatten(params);
  const auto g = flatten(grads);
  if (m_.empty()) {
    for (const auto* m : p) {
      m_.push_back(Eigen::ArrayXd::Zero(m->size()));
      v_.push_back(Eigen::ArrayXd::Zero(m->size()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < p.size(); ++i) {
    float* w = p[i]->data();
    const float* d = g[i]->data();
    for (Eigen::Index k = 0; k < p[i]->size(); ++k) {
      const double gk = d[k];
      m_[i](k) = beta1_ * m_[i](k) + (1.0 - beta1_) * gk;
      v_[i](k) = beta2_ * v_[i](k) + (1.0 - beta2_) * gk * gk;
      const double mh = m_[i](k) / c1;
      const double vh = v_[i](k) / c2;
      w[k] = static_cast<float>(w[k] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

std::vector<Crop> sample_batch(const Dataset& dataset, int batch_size, Eigen::Index crop_frames, nn::Rng& rng) {
  std::size_t total = 0;
  for (const auto& s : dataset.sessions) total += s.labels.num_frames();
  if (total == 0) throw Error(Errc::EmptyCorpus, "no frames to sample training crops from");
  std::vector<Crop> batch;
  for (int b = 0; b < batch_size; ++b) {
    std::size_t pick = rng.index(total);
    const Session* session = nullptr;
    for (const auto& s : dataset.sessions) {
      if (pick < s.labels.num_frames()) {
        session = &s;
        break;
      }
      pick -= s.labels.num_frames();
    }
    const auto T = static_cast<Eigen::Index>(session->labels.num_frames());
    const Eigen::Index length = std::min(T, crop_frames);
    const Eigen::Index begin = T > length ? static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(T - length + 1))) : 0;
    batch.push_back({session, begin, length});
  }
  return batch;
}

Trainer::Trainer(RuntimeModel& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), adam_(cfg.learning_rate), dropout_rng_(cfg.seed ^ 0x5bd1e995ULL) {
  cfg_.validate();
}

namespace {

template <typename S>
Matrix<S> vstack(const std::vector<ModelOutput<S>>& outs, Matrix<S> ModelOutput<S>::*field) {
  Eigen::Index rows = 0;
  for (const auto& o : outs) rows += (o.*field).rows();
  Matrix<S> m(rows, (outs.front().*field).cols());
  Eigen::Index r = 0;
  for (const auto& o : outs) {
    m.middleRows(r, (o.*field).rows()) = o.*field;
    r += (o.*field).rows();
  }
  return m;
}

double global_norm(ModelParams<float>& grads) {
  double sq = 0.0;
  for (const auto* m : flatten(grads)) sq += m->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

LossBreakdown Trainer::gradients(std::span<const Crop> batch, ModelParams<float>& grads, bool dropout) {
  if (batch.empty()) throw Error(Errc::EmptyCorpus, "empty training batch");
  std::vector<Tape<float>> tapes(batch.size());
  std::vector<ModelOutput<float>> outs;
  std::vector<FrameLabels> labels;
  nn::Rng* rng = dropout && model_.config().dropout > 0.0 ? &dropout_rng_ : nullptr;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Crop& c = batch[i];
    outs.push_back(model_.forward_train(c.session->inputs[0], c.session->inputs[1], c.begin, c.length, tapes[i], rng));
    labels.push_back(slice_labels(c.session->labels, static_cast<std::size_t>(c.begin),
                                  static_cast<std::size_t>(c.length)));
  }
  ModelOutput<float> stacked{vstack(outs, &ModelOutput<float>::vap_logits),
                             vstack(outs, &ModelOutput<float>::vad_logits),
                             vstack(outs, &ModelOutput<float>::bc_logits)};
  OutputGrads<float> d;
  const LossBreakdown loss = compute_loss(stacked, concat_labels(labels), cfg_, &d);
  grads = zeros_like(model_.params());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::Index n = batch[i].length;
    OutputGrads<float> di{d.vap_logits.middleRows(r, n), d.vad_logits.middleRows(r, n), d.bc_logits.middleRows(r, n)};
    model_.backward(tapes[i], di, grads);
    r += n;
  }
  return loss;
}

LossBreakdown Trainer::step(std::span<const Crop> batch) {
  ModelParams<float> grads;
  const LossBreakdown loss = gradients(batch, grads, true);
  if (cfg_.grad_clip > 0.0) {
    const double norm = global_norm(grads);
    if (norm > cfg_.grad_clip) {
      const auto scale = static_cast<float>(cfg_.grad_clip / norm);
      for (auto* m : flatten(grads)) *m *= scale;
    }
  }
  adam_.update(model_.params(), grads);
  return loss;
}

nlohmann::json to_json(const TrainLogRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"l_vap", r.loss.l_vap},
                   {"l_vad", r.loss.l_vad},
                   {"l_bc", r.loss.l_bc},
                   {"total", r.loss.total}};
  j["val_metric"] = r.val_metric ? nlohmann::json(*r.val_metric) : nlohmann::json(nullptr);
  return j;
}

Eigen::Index crop_frames(const TrainConfig& cfg, const ModelConfig& model) {
  auto n = static_cast<Eigen::Index>(std::lround(cfg.crop_seconds * model.frame_rate));
  if (model.arch == Architecture::Vap) n = std::min<Eigen::Index>(n, model.max_context);
  return std::max<Eigen::Index>(1, n);
}

namespace {

// Calls `f(session_index, begin, output)` for consecutive crops covering every session.
template <typename F>
void for_each_chunk(const RuntimeModel& model, const Dataset& dataset, Eigen::Index chunk, F&& f) {
  Tape<float> tape;
  for (std::size_t i = 0; i < dataset.sessions.size(); ++i) {
    const Session& s = dataset.sessions[i];
    const auto T = static_cast<Eigen::Index>(s.labels.num_frames());
    for (Eigen::Index b = 0; b < T; b += chunk) {
      const Eigen::Index n = std::min(chunk, T - b);
      f(i, b, model.forward_train(s.inputs[0], s.inputs[1], b, n, tape, nullptr));
    }
  }
}

}  // namespace

double validation_vap_loss(const RuntimeModel& model, const Dataset& dataset, Eigen::Index chunk) {
  double sum = 0.0;
  std::size_t frames = 0;
  TrainConfig cfg;
  cfg.stage = Stage::Pretrain;
  for_each_chunk(model, dataset, chunk, [&](std::size_t i, Eigen::Index b, const ModelOutput<float>& out) {
    const auto n = static_cast<std::size_t>(out.num_frames());
    const LossBreakdown l = compute_loss(out, slice_labels(dataset.sessions[i].labels, b, n), cfg);
    sum += l.l_vap * static_cast<double>(n);
    frames += n;
  });
  if (frames == 0) throw Error(Errc::EmptyCorpus, "validation set has no frames");
  return sum / static_cast<double>(frames);
}

double validation_f1(const RuntimeModel& model, const Dataset& dataset, Task task, Eigen::Index chunk) {
  std::vector<SessionPrediction> preds(dataset.sessions.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    preds[i].bc_probs.resize(static_cast<Eigen::Index>(dataset.sessions[i].labels.num_frames()),
                             model.config().bc_classes);
  }
  for_each_chunk(model, dataset, chunk, [&](std::size_t i, Eigen::Index b, const ModelOutput<float>& out) {
    preds[i].bc_probs.middleRows(b, out.num_frames()) = out.bc_probs();
  });
  if (preds.empty()) throw Error(Errc::EmptyCorpus, "validation set has no sessions");
  const DecisionRule rule =
      tune_rule(preds, dataset, task, task == Task::Type ? DecisionMode::PerClassThreshold : DecisionMode::Threshold);
  const EvalReport report = score_predictions(preds, dataset, rule);
  double sum = 0.0;
  for (const auto& [c, prf] : report.per_class) sum += prf.f1;
  return sum / static_cast<double>(report.per_class.size());
}

namespace {

TrainResult run_training(RuntimeModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                         bool higher_is_better, const std::function<double(const RuntimeModel&)>& metric,
                         const LogSink& sink) {
  cfg.validate();
  if (train.sessions.empty()) throw Error(Errc::EmptyCorpus, "training split has no sessions");
  if (val.sessions.empty()) throw Error(Errc::EmptyCorpus, "validation split has no sessions");
  const Eigen::Index frames = crop_frames(cfg, model.config());
  nn::Rng batch_rng(cfg.seed);

  TrainResult result{model, {}, higher_is_better ? -std::numeric_limits<double>::infinity()
                                                 : std::numeric_limits<double>::infinity(),
                     0, 0};
  Trainer trainer(model, cfg);
  int stale = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = sample_batch(train, cfg.batch_size, frames, batch_rng);
    TrainLogRecord record{step, trainer.step(batch), std::nullopt};
    result.steps_run = step;
    if (step % cfg.val_interval == 0 || step == cfg.max_steps) {
      const double m = metric(model);
      record.val_metric = m;
      const bool better = higher_is_better ? m > result.best_metric : m < result.best_metric;
      if (better) {
        result.best_metric = m;
        result.best_step = step;
        result.model = model;
        stale = 0;
      } else {
        ++stale;
      }
    }
    if (sink) sink(record);
    result.log.push_back(record);
    if (stale >= cfg.patience) break;
  }
  return result;
}

}  // namespace

TrainResult pretrain(RuntimeModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                     const LogSink& sink) {
  if (cfg.stage != Stage::Pretrain) throw Error(Errc::InvalidConfig, "pretrain needs stage = pretrain");
  if (model.config().arch != Architecture::Vap) throw Error(Errc::ConfigMismatch, "only the VAP model is pre-trained");
  const Eigen::Index chunk = crop_frames(cfg, model.config());
  auto metric = [&](const RuntimeModel& m) { return validation_vap_loss(m, val, chunk); };
  return run_training(std::move(model), train, val, cfg, false, metric, sink);
}

TrainResult finetune(RuntimeModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg, Task task,
                     const LogSink& sink) {
  if (cfg.stage != Stage::Finetune) throw Error(Errc::InvalidConfig, "finetune needs stage = finetune");
  if (model.config().bc_classes != num_classes(task)) {
    throw Error(Errc::ConfigMismatch, "model has " + std::to_string(model.config().bc_classes) +
                                          " BC classes, task needs " + std::to_string(num_classes(task)));
  }
  if ((cfg.method == Method::Baseline) != (model.config().arch == Architecture::Baseline)) {
    throw Error(Errc::ConfigMismatch, "method and model architecture disagree");
  }
  const Eigen::Index chunk = crop_frames(cfg, model.config());
  auto metric = [&](const RuntimeModel& m) { return validation_f1(m, val, task, chunk); };
  TrainResult r = run_training(std::move(model), train, val, cfg, true, metric, sink);
  r.model.mutable_config().bc_head_trained = true;
  return r;
}

RuntimeModel prepare_finetune_model(Method method, const ModelConfig& config, Task task,
                                    const std::filesystem::path& pretrained, std::uint64_t seed) {
  ModelConfig c = config;
  c.bc_classes = num_classes(task);
  switch (method) {
    case Method::Baseline:
      c.arch = Architecture::Baseline;
      if (c.encoder != EncoderKind::Reference) {
        throw Error(Errc::ConfigMismatch, "the baseline trains its encoder and needs the reference encoder");
      }
      return RuntimeModel::init(c, seed);
    case Method::StNoPt:
      c.arch = Architecture::Vap;
      return RuntimeModel::init(c, seed);
    case Method::StPt:
    case Method::MtPt: {
      if (pretrained.empty() || !std::filesystem::exists(pretrained)) {
        throw Error(Errc::CheckpointMissing, "pretrained checkpoint not found: " + pretrained.string());
      }
      RuntimeModel m = load_checkpoint(pretrained);
      const ModelConfig& p = m.config();
      if (p.arch != Architecture::Vap || p.encoder != c.encoder || p.frame_rate != c.frame_rate ||
          p.input_dim() != c.input_dim()) {
        throw Error(Errc::ConfigMismatch, "pretrained checkpoint does not match the requested frame rate or inputs");
      }
      m.reset_bc_head(c.bc_classes, seed);
      return m;
    }
  }
  throw Error(Errc::InvalidConfig, "unknown method");
}

}  // namespace vapbc
