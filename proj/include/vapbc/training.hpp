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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "vapbc/labeling.hpp"
#include "vapbc/model.hpp"

namespace vapbc {

enum class Stage { Pretrain, Finetune };
enum class Method { Baseline, StNoPt, StPt, MtPt };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);
std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct TrainConfig {
  double alpha = 1.0;  // L_vap weight
  double beta = 1.0;   // L_vad weight
  double gamma = 5.0;  // L_bc weight
  double positive_weight = 5.0;
  Stage stage = Stage::Finetune;
  Method method = Method::MtPt;
  double learning_rate = 1e-4;
  double crop_seconds = 20.0;
  int batch_size = 1;  // crops per optimiser step
  int max_steps = 1000;
  int val_interval = 100;
  int patience = 5;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;

  /// Loss weights implied by the method: single-task methods and the
  /// encoder-only baseline drop the VAP and VAD terms.
  void apply_method_defaults();
  void validate() const;
  /// Weights actually used: the BC term is absent while pre-training.
  double effective_gamma() const { return stage == Stage::Pretrain ? 0.0 : gamma; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  double l_vap = 0.0;
  double l_vad = 0.0;
  double l_bc = 0.0;
  double total = 0.0;
  std::size_t vap_frames = 0;
  std::size_t vad_frames = 0;  // frames x channels
  std::size_t bc_frames = 0;   // unmasked frames
  double bc_weight_sum = 0.0;
  bool all_masked = false;  // l_bc undefined, reported as 0
};

/// Multi-task loss. When `grads` is given it receives d(total)/d(logits).
template <typename S>
LossBreakdown compute_loss(const ModelOutput<S>& outputs, const FrameLabels& labels, const TrainConfig& cfg,
                           OutputGrads<S>* grads = nullptr);

extern template LossBreakdown compute_loss<float>(const ModelOutput<float>&, const FrameLabels&,
                                                  const TrainConfig&, OutputGrads<float>*);
extern template LossBreakdown compute_loss<double>(const ModelOutput<double>&, const FrameLabels&,
                                                   const TrainConfig&, OutputGrads<double>*);

FrameLabels slice_labels(const FrameLabels& labels, std::size_t begin, std::size_t length);
FrameLabels concat_labels(std::span<const FrameLabels> parts);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(ModelParams<float>& params, ModelParams<float>& grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

/// One training window: frames [begin, begin + length) of a session.
struct Crop {
  const Session* session = nullptr;
  Eigen::Index begin = 0;
  Eigen::Index length = 0;
};

/// Crops drawn uniformly over all frames of the dataset (sessions weighted by
/// length); sessions shorter than `crop_frames` are used whole.
std::vector<Crop> sample_batch(const Dataset& dataset, int batch_size, Eigen::Index crop_frames, nn::Rng& rng);

/// Forward, loss, backward and one Adam update over a batch of crops.
class Trainer {
 public:
  Trainer(RuntimeModel& model, TrainConfig cfg);

  LossBreakdown step(std::span<const Crop> batch);
  /// Loss and gradients without updating parameters.
  LossBreakdown gradients(std::span<const Crop> batch, ModelParams<float>& grads, bool dropout);

 private:
  RuntimeModel& model_;
  TrainConfig cfg_;
  Adam adam_;
  nn::Rng dropout_rng_;
};

struct TrainLogRecord {
  int step = 0;
  LossBreakdown loss;
  std::optional<double> val_metric;
};

nlohmann::json to_json(const TrainLogRecord& record);

struct TrainResult {
  RuntimeModel model;  // best-validation parameters
  std::vector<TrainLogRecord> log;
  double best_metric = 0.0;
  int best_step = 0;
  int steps_run = 0;
};

/// Crop length in frames for `cfg` at the model's frame rate, capped at max_context.
Eigen::Index crop_frames(const TrainConfig& cfg, const ModelConfig& model);

/// Mean VAP cross-entropy over consecutive crops of every validation session.
double validation_vap_loss(const RuntimeModel& model, const Dataset& dataset, Eigen::Index chunk);

/// Validation F1 used for model selection: the tuned binary F1 for the timing
/// task, the mean of the tuned per-class F1 for the type task.
double validation_f1(const RuntimeModel& model, const Dataset& dataset, Task task, Eigen::Index chunk);

using LogSink = std::function<void(const TrainLogRecord&)>;

TrainResult pretrain(RuntimeModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                     const LogSink& sink = {});

TrainResult finetune(RuntimeModel model, const Dataset& train, const Dataset& val, const TrainConfig& cfg, Task task,
                     const LogSink& sink = {});

/// Initial model for a fine-tuning method: fresh for baseline / st_no_pt, the
/// pretrained checkpoint with a re-initialised BC head for st_pt / mt_pt.
RuntimeModel prepare_finetune_model(Method method, const ModelConfig& config, Task task,
                                    const std::filesystem::path& pretrained, std::uint64_t seed);

}  // namespace vapbc
