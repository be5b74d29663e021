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

#include "vapbc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "vapbc/error.hpp"
#include "vapbc/state_codec.hpp"

namespace vapbc {

namespace {

PRF finish(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  PRF m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

// Concatenated label tracks across sessions.
struct FlatLabels {
  std::vector<int> cls;
  std::vector<std::uint8_t> mask;
};

FlatLabels flatten_labels(const Dataset& dataset) {
  FlatLabels out;
  for (const auto& s : dataset.sessions) {
    out.cls.insert(out.cls.end(), s.labels.bc_class.begin(), s.labels.bc_class.end());
    out.mask.insert(out.mask.end(), s.labels.bc_mask.begin(), s.labels.bc_mask.end());
  }
  return out;
}

std::vector<double> flatten_column(const std::vector<SessionPrediction>& predictions, int column) {
  std::vector<double> out;
  for (const auto& p : predictions) {
    for (Eigen::Index t = 0; t < p.bc_probs.rows(); ++t) out.push_back(p.bc_probs(t, column));
  }
  return out;
}

Matrix<float> stack_probs(const std::vector<SessionPrediction>& predictions) {
  Eigen::Index rows = 0;
  const Eigen::Index cols = predictions.empty() ? 0 : predictions.front().bc_probs.cols();
  for (const auto& p : predictions) rows += p.bc_probs.rows();
  Matrix<float> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : predictions) {
    out.middleRows(r, p.bc_probs.rows()) = p.bc_probs;
    r += p.bc_probs.rows();
  }
  return out;
}

}  // namespace

PRF frame_metrics(std::span<const int> predictions, std::span<const int> labels,
                  std::span<const std::uint8_t> mask, int positive_class) {
  if (predictions.size() != labels.size() || labels.size() != mask.size()) {
    throw Error(Errc::LengthMismatch, "predictions and labels differ in length");
  }
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    const bool pred = predictions[i] == positive_class;
    const bool gold = labels[i] == positive_class;
    if (pred && gold) ++tp;
    else if (pred) ++fp;
    else if (gold) ++fn;
    else ++tn;
  }
  return finish(tp, fp, fn, tn);
}

PRF frame_metrics(std::span<const int> predictions, const FrameLabels& labels, int positive_class) {
  return frame_metrics(predictions, labels.bc_class, labels.bc_mask, positive_class);
}

double always_positive_f1(double p) { return 2.0 * p / (1.0 + p); }

std::vector<double> default_threshold_grid() {
  std::vector<double> grid(101);
  for (int i = 0; i <= 100; ++i) grid[i] = i / 100.0;
  return grid;
}

SweepResult sweep_threshold(std::span<const double> probs, std::span<const int> labels,
                            std::span<const std::uint8_t> mask, int positive_class, std::span<const double> grid) {
  if (probs.size() != labels.size() || labels.size() != mask.size()) {
    throw Error(Errc::LengthMismatch, "probabilities and labels differ in length");
  }
  std::vector<double> default_grid;
  if (grid.empty()) {
    default_grid = default_threshold_grid();
    grid = default_grid;
  }
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());

  SweepResult best;
  best.threshold = sorted.back();
  bool found = false;
  std::vector<int> pred(probs.size());
  for (double thr : sorted) {
    for (std::size_t i = 0; i < probs.size(); ++i) pred[i] = probs[i] >= thr ? positive_class : -1;
    const PRF m = frame_metrics(pred, labels, mask, positive_class);
    if (m.f1 > 0.0 && (!found || m.f1 > best.prf.f1)) {
      best = {thr, m};
      found = true;
    }
  }
  if (!found) {
    for (std::size_t i = 0; i < probs.size(); ++i) pred[i] = probs[i] >= best.threshold ? positive_class : -1;
    best.prf = frame_metrics(pred, labels, mask, positive_class);
  }
  return best;
}

std::vector<int> decide_classes(const Matrix<float>& bc_probs, const DecisionRule& rule) {
  std::vector<int> out(static_cast<std::size_t>(bc_probs.rows()), kNonBc);
  const Eigen::Index classes = bc_probs.cols();
  if (rule.task == Task::Timing) {
    if (rule.mode != DecisionMode::Threshold || rule.thresholds.empty()) {
      throw Error(Errc::MissingThreshold, "timing decisions need a tuned threshold");
    }
    if (classes != 2) throw Error(Errc::ConfigMismatch, "timing task expects 2 classes");
    for (Eigen::Index t = 0; t < bc_probs.rows(); ++t) out[t] = bc_probs(t, 1) >= rule.thresholds[0] ? 1 : 0;
    return out;
  }
  if (classes != 3) throw Error(Errc::ConfigMismatch, "type task expects 3 classes");
  if (rule.mode == DecisionMode::PerClassThreshold) {
    if (rule.thresholds.size() < 2) throw Error(Errc::MissingThreshold, "per-class mode needs two thresholds");
    for (Eigen::Index t = 0; t < bc_probs.rows(); ++t) {
      int best = kNonBc;
      float best_p = -1.0f;
      for (int c = 1; c <= 2; ++c) {
        const float p = bc_probs(t, c);
        if (p >= rule.thresholds[c - 1] && p > best_p) {
          best = c;
          best_p = p;
        }
      }
      out[t] = best;
    }
    return out;
  }
  for (Eigen::Index t = 0; t < bc_probs.rows(); ++t) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (bc_probs(t, c) > bc_probs(t, best)) best = c;
    }
    out[t] = best;
  }
  return out;
}

std::string_view to_string(Manipulation m) {
  switch (m) {
    case Manipulation::None: return "none";
    case Manipulation::PitchFlat: return "pitch-flat";
    case Manipulation::IntensityFlat: return "intensity-flat";
  }
  return "none";
}

Manipulation parse_manipulation(std::string_view text) {
  if (text == "none") return Manipulation::None;
  if (text == "pitch-flat") return Manipulation::PitchFlat;
  if (text == "intensity-flat") return Manipulation::IntensityFlat;
  throw Error(Errc::ConfigError, "unknown manipulation '" + std::string(text) + "'");
}

std::vector<SessionPrediction> predict_dataset(const RuntimeModel& model, const Dataset& dataset,
                                               const PredictionOptions& options) {
  const ModelConfig& cfg = model.config();
  std::optional<Eigen::Index> window;
  if (options.context_s) {
    window = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(*options.context_s * cfg.frame_rate)));
  }
  if (options.manipulation != Manipulation::None && cfg.encoder != EncoderKind::Reference) {
    throw Error(Errc::ConfigMismatch, "audio manipulations need the reference encoder");
  }
  std::vector<SessionPrediction> out;
  out.reserve(dataset.sessions.size());
  for (const auto& session : dataset.sessions) {
    std::array<FeatureMatrix, 2> inputs;
    const std::array<FeatureMatrix, 2>* use = &session.inputs;
    if (options.manipulation != Manipulation::None) {
      StereoAudio audio;
      if (options.manipulation == Manipulation::PitchFlat) {
        const auto wav = options.pitch_flat_dir / session.name / "audio.wav";
        if (options.pitch_flat_dir.empty() || !std::filesystem::exists(wav)) {
          throw Error(Errc::MissingManipulatedAudio, "no pitch-flattened audio at " + wav.string());
        }
        audio = read_wav_stereo(wav);
      } else {
        audio = flatten_intensity(read_wav_stereo(session.dir / "audio.wav"), kSpeakerChannel);
      }
      for (int c = 0; c < 2; ++c) inputs[c] = model_inputs(audio.channels[c], cfg, c).frames;
      if (static_cast<std::size_t>(inputs[0].rows()) != session.labels.num_frames()) {
        throw Error(Errc::LengthMismatch, "manipulated audio of " + session.name + " has a different length");
      }
      use = &inputs;
    }
    const ModelOutput<float> o = model.forward((*use)[0], (*use)[1], window);
    SessionPrediction p;
    p.bc_probs = o.bc_probs();
    const Matrix<float> vap = o.vap_probs();
    p.zero_shot.resize(static_cast<std::size_t>(vap.rows()));
    std::vector<double> dist(kNumStates);
    for (Eigen::Index t = 0; t < vap.rows(); ++t) {
      for (int s = 0; s < kNumStates; ++s) dist[s] = vap(t, s);
      p.zero_shot[t] = zero_shot_bc_score(dist, options.listener);
    }
    out.push_back(std::move(p));
  }
  return out;
}

DecisionRule tune_rule(const std::vector<SessionPrediction>& predictions, const Dataset& dataset, Task task,
                       DecisionMode type_mode) {
  const FlatLabels labels = flatten_labels(dataset);
  DecisionRule rule;
  rule.task = task;
  if (task == Task::Timing) {
    rule.mode = DecisionMode::Threshold;
    const auto probs = flatten_column(predictions, 1);
    rule.thresholds = {sweep_threshold(probs, labels.cls, labels.mask, 1).threshold};
    return rule;
  }
  rule.mode = type_mode;
  for (int c = 1; c <= 2; ++c) {
    const auto probs = flatten_column(predictions, c);
    rule.thresholds.push_back(sweep_threshold(probs, labels.cls, labels.mask, c).threshold);
  }
  return rule;
}

double tune_zero_shot(const std::vector<SessionPrediction>& predictions, const Dataset& dataset) {
  const FlatLabels labels = flatten_labels(dataset);
  std::vector<double> scores;
  for (const auto& p : predictions) scores.insert(scores.end(), p.zero_shot.begin(), p.zero_shot.end());
  return sweep_threshold(scores, labels.cls, labels.mask, 1).threshold;
}

EvalReport score_predictions(const std::vector<SessionPrediction>& predictions, const Dataset& dataset,
                             const DecisionRule& rule) {
  if (predictions.size() != dataset.sessions.size()) {
    throw Error(Errc::LengthMismatch, "one prediction per session expected");
  }
  const FlatLabels labels = flatten_labels(dataset);
  const std::vector<int> decisions = decide_classes(stack_probs(predictions), rule);
  EvalReport r;
  r.task = rule.task;
  r.rule = rule;
  const int classes = num_classes(rule.task);
  for (int c = 1; c < classes; ++c) {
    r.per_class[c] = frame_metrics(decisions, labels.cls, labels.mask, c);
    r.positive_rate[c] = static_cast<double>(r.per_class[c].tp + r.per_class[c].fn) /
                         std::max<double>(1.0, static_cast<double>(r.per_class[c].tp + r.per_class[c].fn +
                                                                    r.per_class[c].fp + r.per_class[c].tn));
  }
  return r;
}

EvalReport score_zero_shot(const std::vector<SessionPrediction>& predictions, const Dataset& dataset,
                           double threshold) {
  const FlatLabels labels = flatten_labels(dataset);
  std::vector<int> decisions;
  for (const auto& p : predictions) {
    for (double s : p.zero_shot) decisions.push_back(s >= threshold ? 1 : 0);
  }
  EvalReport r;
  r.method = "zero-shot";
  r.task = Task::Timing;
  r.rule = {Task::Timing, DecisionMode::Threshold, {threshold}};
  r.per_class[1] = frame_metrics(decisions, labels.cls, labels.mask, 1);
  r.positive_rate[1] = static_cast<double>(r.per_class[1].tp + r.per_class[1].fn) /
                       std::max<double>(1.0, static_cast<double>(r.per_class[1].tp + r.per_class[1].fn +
                                                                  r.per_class[1].fp + r.per_class[1].tn));
  return r;
}

EvalReport always_positive_report(const Dataset& dataset, Task task) {
  const FlatLabels labels = flatten_labels(dataset);
  EvalReport r;
  r.method = "always-positive";
  r.task = task;
  for (int c = 1; c < num_classes(task); ++c) {
    const std::vector<int> decisions(labels.cls.size(), c);
    r.per_class[c] = frame_metrics(decisions, labels.cls, labels.mask, c);
    r.positive_rate[c] = r.per_class[c].precision;
  }
  return r;
}

EvalReport evaluate_run(const RuntimeModel& model, const Dataset& dataset, const DecisionRule& rule,
                        const PredictionOptions& options) {
  if (model.config().bc_classes != num_classes(rule.task)) {
    throw Error(Errc::ConfigMismatch, "checkpoint has " + std::to_string(model.config().bc_classes) +
                                          " backchannel classes but the task needs " +
                                          std::to_string(num_classes(rule.task)));
  }
  EvalReport r = score_predictions(predict_dataset(model, dataset, options), dataset, rule);
  r.manipulation = options.manipulation;
  r.context_s = options.context_s;
  return r;
}

std::string class_name(Task task, int cls) {
  if (task == Task::Timing) return cls == 1 ? "backchannel" : "non-backchannel";
  switch (cls) {
    case kContinuer: return "continuer";
    case kAssessment: return "assessment";
    default: return "non-backchannel";
  }
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, m] : report.per_class) {
    classes[class_name(report.task, c)] = {{"f1", m.f1},
                                           {"precision", m.precision},
                                           {"recall", m.recall},
                                           {"tp", m.tp},
                                           {"fp", m.fp},
                                           {"fn", m.fn},
                                           {"tn", m.tn},
                                           {"positive_rate", report.positive_rate.at(c)}};
  }
  nlohmann::json j{{"method", report.method},
                   {"task", std::string(to_string(report.task))},
                   {"manipulation", std::string(to_string(report.manipulation))},
                   {"classes", classes},
                   {"thresholds", report.rule.thresholds}};
  j["context_s"] = report.context_s ? nlohmann::json(*report.context_s) : nlohmann::json(nullptr);
  j["decision"] = report.rule.mode == DecisionMode::Argmax       ? "argmax"
                  : report.rule.mode == DecisionMode::Threshold ? "threshold"
                                                                 : "per-class-threshold";
  return j;
}

std::string format_table(const std::vector<EvalReport>& reports, const EvalReport* reference) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(18) << "method" << std::setw(16) << "manipulation" << std::setw(9) << "context"
      << std::setw(16) << "class" << std::right << std::setw(18) << "F1" << std::setw(11) << "Precision"
      << std::setw(10) << "Recall" << '\n';
  for (const auto& r : reports) {
    for (const auto& [c, m] : r.per_class) {
      std::ostringstream f1;
      f1 << std::fixed << std::setprecision(2) << 100.0 * m.f1;
      if (reference && reference != &r && reference->per_class.count(c)) {
        const double delta = 100.0 * (m.f1 - reference->per_class.at(c).f1);
        f1 << " (" << (delta >= 0 ? "+" : "") << std::fixed << std::setprecision(2) << delta << ")";
      }
      std::ostringstream ctx;
      if (r.context_s) ctx << std::fixed << std::setprecision(0) << *r.context_s << "s";
      else ctx << "full";
      out << std::left << std::setw(18) << (r.method.empty() ? "-" : r.method) << std::setw(16)
          << to_string(r.manipulation) << std::setw(9) << ctx.str() << std::setw(16) << class_name(r.task, c)
          << std::right << std::setw(18) << f1.str() << std::setw(11) << 100.0 * m.precision << std::setw(10)
          << 100.0 * m.recall << '\n';
    }
  }
  return out.str();
}

}  // namespace vapbc
