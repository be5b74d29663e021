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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vapbc/labeling.hpp"
#include "vapbc/model.hpp"

namespace vapbc {

struct PRF {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// One-vs-rest counts over unmasked frames.
PRF frame_metrics(std::span<const int> predictions, std::span<const int> labels,
                  std::span<const std::uint8_t> mask, int positive_class);
PRF frame_metrics(std::span<const int> predictions, const FrameLabels& labels, int positive_class);

/// F1 of a classifier that always predicts the positive class: 2p / (1 + p).
double always_positive_f1(double positive_rate);

/// 101 thresholds 0.00, 0.01, ..., 1.00.
std::vector<double> default_threshold_grid();

struct SweepResult {
  double threshold = 1.0;
  PRF prf;
};

/// Frame is positive iff prob >= threshold. Maximises F1 over the grid; ties
/// go to the lowest threshold, and a sweep that never reaches F1 > 0 returns
/// the highest threshold.
SweepResult sweep_threshold(std::span<const double> probs, std::span<const int> labels,
                            std::span<const std::uint8_t> mask, int positive_class,
                            std::span<const double> grid = {});

enum class DecisionMode { Threshold, Argmax, PerClassThreshold };

struct DecisionRule {
  Task task = Task::Timing;
  DecisionMode mode = DecisionMode::Threshold;
  std::vector<double> thresholds;  // Threshold: {t}; PerClassThreshold: {t_continuer, t_assessment}
};

/// Maps rows of class probabilities (T x classes) to decisions. Argmax ties
/// resolve to the lowest class index.
std::vector<int> decide_classes(const Matrix<float>& bc_probs, const DecisionRule& rule);

enum class Manipulation { None, PitchFlat, IntensityFlat };
std::string_view to_string(Manipulation m);
Manipulation parse_manipulation(std::string_view text);

/// Per-session model outputs gathered once and scored under several rules.
struct SessionPrediction {
  Matrix<float> bc_probs;          // T x classes
  std::vector<double> zero_shot;   // T
};

struct PredictionOptions {
  Manipulation manipulation = Manipulation::None;
  std::filesystem::path pitch_flat_dir;  // sibling corpus for PitchFlat
  std::optional<double> context_s;       // Transformer window; unset = max_context
  int listener = kListenerChannel;
};

std::vector<SessionPrediction> predict_dataset(const RuntimeModel& model, const Dataset& dataset,
                                               const PredictionOptions& options);

/// Threshold tuning on validation predictions. Timing: sweep on p(backchannel).
/// Type: per-class sweeps recorded for PerClassThreshold mode.
DecisionRule tune_rule(const std::vector<SessionPrediction>& predictions, const Dataset& dataset, Task task,
                       DecisionMode type_mode = DecisionMode::Argmax);

/// Threshold for the zero-shot score, tuned on validation predictions.
double tune_zero_shot(const std::vector<SessionPrediction>& predictions, const Dataset& dataset);

struct EvalReport {
  std::string method;
  Task task = Task::Timing;
  Manipulation manipulation = Manipulation::None;
  std::optional<double> context_s;
  std::map<int, PRF> per_class;         // positive classes only
  std::map<int, double> positive_rate;  // per positive class
  DecisionRule rule;
};

EvalReport score_predictions(const std::vector<SessionPrediction>& predictions, const Dataset& dataset,
                             const DecisionRule& rule);

EvalReport score_zero_shot(const std::vector<SessionPrediction>& predictions, const Dataset& dataset,
                           double threshold);

/// Always-positive reference rows for every positive class of the task.
EvalReport always_positive_report(const Dataset& dataset, Task task);

EvalReport evaluate_run(const RuntimeModel& model, const Dataset& dataset, const DecisionRule& rule,
                        const PredictionOptions& options);

nlohmann::json to_json(const EvalReport& report);
std::string class_name(Task task, int cls);

/// Human-readable table; when `reference` is given, F1 deltas are appended
/// as "(-0.91)".
std::string format_table(const std::vector<EvalReport>& reports, const EvalReport* reference = nullptr);

}  // namespace vapbc
