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

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "vapbc/audio.hpp"
#include "vapbc/error.hpp"
#include "vapbc/evaluation.hpp"
#include "vapbc/labeling.hpp"
#include "vapbc/model.hpp"
#include "vapbc/state_codec.hpp"
#include "vapbc/streaming.hpp"
#include "vapbc/synth.hpp"
#include "vapbc/training.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace vapbc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::span<const float> as_span(const FloatArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D array");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

// JSON values cross the boundary as Python objects via their text form.
py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict prediction_dict(const PredictionFrame& f) {
  py::dict d;
  d["t"] = f.t;
  d["p_bc"] = f.p_bc;
  d["p_continuer"] = f.p_continuer ? py::object(py::float_(*f.p_continuer)) : py::object(py::none());
  d["p_assessment"] = f.p_assessment ? py::object(py::float_(*f.p_assessment)) : py::object(py::none());
  d["p_vad"] = py::make_tuple(f.p_vad[0], f.p_vad[1]);
  d["vap_top_state"] = f.vap_top_state;
  d["zero_shot"] = f.zero_shot;
  return d;
}

std::vector<BcEvent> events_from(const py::list& items) {
  std::vector<BcEvent> out;
  for (const auto& item : items) {
    const auto d = item.cast<py::dict>();
    BcEvent e;
    e.onset = d["onset"].cast<double>();
    e.offset = d["offset"].cast<double>();
    e.channel = d.contains("channel") ? d["channel"].cast<int>() : kListenerChannel;
    e.kind = d.contains("kind") ? parse_bc_kind(d["kind"].cast<std::string>()) : BcKind::Continuer;
    out.push_back(e);
  }
  return out;
}

py::list events_to(const std::vector<BcEvent>& events) {
  py::list out;
  for (const auto& e : events) {
    py::dict d;
    d["onset"] = e.onset;
    d["offset"] = e.offset;
    d["channel"] = e.channel;
    d["kind"] = std::string(to_string(e.kind));
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_vapbc, m) {
  m.doc() = "Voice activity projection and backchannel prediction";

  static py::exception<Error> error(m, "VapbcError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("NUM_STATES") = kNumStates;
  m.attr("SAMPLE_RATE") = kSampleRate;

  // State codec.
  m.def("encode_state", [](const std::array<std::array<bool, 4>, 2>& bins) { return encode_state(bins); });
  m.def("decode_state", [](int index) { return decode_state(index); });
  m.def("zero_shot_bc_score",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> dist, int listener) {
          return zero_shot_bc_score(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())),
                                    listener);
        },
        py::arg("dist"), py::arg("listener") = kListenerChannel);
  m.def("bin_marginal",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> dist, int channel, int bin) {
          return bin_marginal(std::span<const double>(dist.data(), static_cast<std::size_t>(dist.size())), channel,
                              bin);
        });

  // Audio.
  m.def("log_mel",
        [](const FloatArray& samples, double frame_rate, int n_bands) {
          LogMelOptions o;
          o.frame_rate = frame_rate;
          o.n_bands = n_bands;
          return RowMatrix(log_mel(as_span(samples), o).frames);
        },
        py::arg("samples"), py::arg("frame_rate") = 10.0, py::arg("n_bands") = 40);
  m.def("read_wav", [](const std::filesystem::path& path) {
    const StereoAudio a = read_wav_stereo(path);
    return py::make_tuple(py::array_t<float>(a.channels[0].size(), a.channels[0].data()),
                          py::array_t<float>(a.channels[1].size(), a.channels[1].data()), a.sample_rate);
  });
  m.def("flatten_intensity",
        [](const FloatArray& ch0, const FloatArray& ch1, int channel) {
          StereoAudio a;
          a.channels[0].assign(ch0.data(), ch0.data() + ch0.size());
          a.channels[1].assign(ch1.data(), ch1.data() + ch1.size());
          const StereoAudio f = flatten_intensity(a, channel);
          return py::make_tuple(py::array_t<float>(f.channels[0].size(), f.channels[0].data()),
                                py::array_t<float>(f.channels[1].size(), f.channels[1].data()));
        },
        py::arg("channel0"), py::arg("channel1"), py::arg("channel") = kSpeakerChannel);

  // Labels and metrics.
  m.def("make_bc_labels",
        [](const py::list& events, std::size_t num_frames, double frame_rate, const std::string& task,
           double lead_s) {
          LabelOptions o;
          o.task = parse_task(task);
          o.lead_s = lead_s;
          const BcTracks t = make_bc_labels(events_from(events), num_frames, frame_rate, o);
          return py::make_tuple(t.bc_class, t.bc_mask);
        },
        py::arg("events"), py::arg("num_frames"), py::arg("frame_rate") = 10.0, py::arg("task") = "timing",
        py::arg("lead_s") = 0.5);
  m.def("frame_metrics",
        [](const std::vector<int>& pred, const std::vector<int>& labels, std::vector<std::uint8_t> mask,
           int positive_class) {
          if (mask.empty()) mask.assign(labels.size(), 1);
          const PRF r = frame_metrics(pred, labels, mask, positive_class);
          return py::dict("f1"_a = r.f1, "precision"_a = r.precision, "recall"_a = r.recall, "tp"_a = r.tp,
                          "fp"_a = r.fp, "fn"_a = r.fn, "tn"_a = r.tn);
        },
        py::arg("pred"), py::arg("labels"), py::arg("mask") = std::vector<std::uint8_t>{},
        py::arg("positive_class") = 1);
  m.def("sweep_threshold",
        [](const std::vector<double>& probs, const std::vector<int>& labels, std::vector<std::uint8_t> mask) {
          if (mask.empty()) mask.assign(labels.size(), 1);
          const SweepResult r = sweep_threshold(probs, labels, mask, 1);
          return py::make_tuple(r.threshold, r.prf.f1);
        },
        py::arg("probs"), py::arg("labels"), py::arg("mask") = std::vector<std::uint8_t>{});

  // Model.
  py::class_<RuntimeModel, std::shared_ptr<RuntimeModel>>(m, "Model")
      .def_static("init",
                  [](const py::dict& config, std::uint64_t seed) {
                    return std::make_shared<RuntimeModel>(
                        RuntimeModel::init(from_python(config).get<ModelConfig>(), seed));
                  },
                  py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<RuntimeModel>(load_checkpoint(p)); })
      .def("save", [](const RuntimeModel& model, const std::filesystem::path& p) { store_checkpoint(model, p); })
      .def_property_readonly("config", [](const RuntimeModel& model) { return to_python(nlohmann::json(model.config())); })
      .def_property_readonly("parameter_count", &RuntimeModel::parameter_count)
      .def("inputs",
           [](const RuntimeModel& model, const FloatArray& samples, int channel) {
             return RowMatrix(model_inputs(as_span(samples), model.config(), channel).frames);
           },
           py::arg("samples"), py::arg("channel") = 0)
      .def("forward",
           [](const RuntimeModel& model, const RowMatrix& in0, const RowMatrix& in1, std::optional<Eigen::Index> window) {
             const ModelOutput<float> o = model.forward(in0, in1, window);
             return py::dict("vap"_a = RowMatrix(o.vap_probs()), "vad"_a = RowMatrix(o.vad_probs()),
                             "bc"_a = RowMatrix(o.bc_probs()));
           },
           py::arg("input0"), py::arg("input1"), py::arg("window") = py::none());

  // Streaming.
  py::class_<StreamSession>(m, "StreamSession")
      .def(py::init([](std::shared_ptr<RuntimeModel> model, double context_s, const std::string& task) {
             StreamOptions o;
             o.context_s = context_s;
             o.task = parse_task(task);
             return std::make_unique<StreamSession>(std::const_pointer_cast<const RuntimeModel>(model), o);
           }),
           py::arg("model"), py::arg("context_s") = 5.0, py::arg("task") = "timing")
      .def("push_audio",
           [](StreamSession& s, const FloatArray& ch0, const FloatArray& ch1) {
             py::list out;
             for (const auto& f : s.push_audio(as_span(ch0), as_span(ch1))) out.append(prediction_dict(f));
             return out;
           })
      .def("reset", &StreamSession::reset)
      .def_property_readonly("emitted", &StreamSession::emitted);

  // Synthetic dialogues.
  m.def("generate_dialogue",
        [](const py::dict& config, std::uint64_t seed) {
          const Dialogue d = generate_dialogue(from_python(config).get<SynthConfig>(), seed);
          return py::dict("channel0"_a = py::array_t<float>(d.audio.channels[0].size(), d.audio.channels[0].data()),
                          "channel1"_a = py::array_t<float>(d.audio.channels[1].size(), d.audio.channels[1].data()),
                          "events"_a = events_to(d.events));
        },
        py::arg("config") = py::dict(), py::arg("seed") = 1);
  m.def("generate_corpus", [](const py::dict& config, const std::filesystem::path& out) {
    return to_python(to_json(generate_corpus(from_python(config).get<SynthConfig>(), out)));
  });
}
