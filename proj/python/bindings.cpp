#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "padtts/data.hpp"
#include "padtts/errors.hpp"
#include "padtts/eval.hpp"
#include "padtts/model.hpp"
#include "padtts/service.hpp"
#include "padtts/train.hpp"

namespace py = pybind11;
using namespace padtts;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const dsp::Spectrogram& s) {
  Array a({s.frames, s.bins});
  std::copy(s.values.begin(), s.values.end(), a.mutable_data());
  return a;
}

dsp::Spectrogram from_array(const Array& a, dsp::SpectrogramKind kind = dsp::SpectrogramKind::linear) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array (frames x bins)");
  dsp::Spectrogram s;
  s.frames = static_cast<std::size_t>(a.shape(0));
  s.bins = static_cast<std::size_t>(a.shape(1));
  s.values.assign(a.data(), a.data() + a.size());
  s.kind = kind;
  return s;
}

StyleSpec style_spec(const std::optional<std::array<double, 3>>& pad,
                     const std::optional<std::string>& emotion) {
  if (pad && emotion) throw ConfigError("pass either pad or emotion, not both");
  if (pad) {
    style::PadVector p{(*pad)[0], (*pad)[1], (*pad)[2]};
    p.validate();
    return StyleSpec::of(p);
  }
  if (emotion) return StyleSpec::of(style::emotion_from_label(*emotion));
  return StyleSpec::disabled();
}

py::dict synthesis_dict(const Synthesis& s) {
  py::dict d;
  d["mel"] = to_array(s.mel);
  d["linear"] = to_array(s.linear);
  d["steps"] = s.output.steps;
  d["truncated"] = s.output.truncated;
  d["alignments"] = s.output.alignments;
  return d;
}

py::dict metric_dict(const eval::MetricResult& r) {
  py::dict d;
  d["sdr_db"] = r.sdr_db;
  d["mel_sdr_db"] = r.mel_sdr_db;
  d["sd_db"] = r.sd_db;
  d["mel_sd_db"] = r.mel_sd_db;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continuous-emotion speech synthesis core";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  auto config = py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<ValueError>(m, "ValueError", config.ptr());
  py::register_exception<FormatError>(m, "FormatError", config.ptr());
  py::register_exception<StageError>(m, "StageError", config.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  m.attr("EMOTIONS") = std::vector<std::string>(style::kEmotionLabels.begin(),
                                                 style::kEmotionLabels.end());
  m.attr("PRESETS") = synth::SynthConfig::preset_names();

  // dsp
  m.def("stft_magnitude",
        [](const std::vector<double>& samples, int sample_rate) {
          dsp::StftConfig cfg;
          cfg.sample_rate = sample_rate;
          return to_array(dsp::stft_magnitude({samples, sample_rate}, cfg));
        },
        py::arg("samples"), py::arg("sample_rate") = 16000);
  m.def("mel_filterbank",
        [](std::size_t bins, std::size_t n_mels, double fmin, double fmax, int sr) {
          const auto bank = dsp::mel_filterbank(bins, n_mels, fmin, fmax, sr);
          Array a({bank.n_mels, bank.bins});
          std::copy(bank.weights.begin(), bank.weights.end(), a.mutable_data());
          return a;
        },
        py::arg("bins") = 513, py::arg("n_mels") = 80, py::arg("fmin") = 0.0,
        py::arg("fmax") = 8000.0, py::arg("sample_rate") = 16000);
  m.def("griffin_lim",
        [](const Array& magnitude, std::size_t iterations) {
          auto r = dsp::griffin_lim(from_array(magnitude), iterations, {});
          return py::make_tuple(r.waveform.samples, r.distances);
        },
        py::arg("magnitude"), py::arg("iterations") = 32);
  m.def("read_wav", [](const std::filesystem::path& p) {
    const auto w = dsp::read_wav(p);
    return py::make_tuple(w.samples, w.sample_rate);
  });
  m.def("write_wav",
        [](const std::filesystem::path& p, const std::vector<double>& samples, int sr) {
          dsp::write_wav(p, {samples, sr});
        },
        py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);

  // metrics
  m.def("sdr", [](const Array& s, const Array& h) { return eval::sdr(from_array(s), from_array(h)); });
  m.def("sd", [](const Array& s, const Array& h) { return eval::sd(from_array(s), from_array(h)); });
  m.def("dtw_align", [](const Array& target, const Array& synth) {
    const auto r = eval::dtw_align(from_array(target), from_array(synth));
    return py::make_tuple(to_array(r.warped), r.cost, r.path);
  });
  m.def("confidence_interval", [](const std::vector<double>& v) {
    const auto ci = eval::confidence_interval(v);
    return py::make_tuple(ci.mean, ci.half_width);
  });

  // style
  m.def("sign_compatibility",
        [](const std::filesystem::path& init, const std::filesystem::path& final_table) {
          return style::sign_compatibility(style::load_pad_table(init),
                                           style::load_pad_table(final_table))
              .to_json()
              .dump();
        });
  m.def("count_parameters", [](const std::string& preset) {
    return synth::count_parameters(synth::SynthConfig::from_preset(preset));
  });
  m.def("count_projection_matrices", [](const std::string& preset) {
    return synth::count_projection_matrices(synth::SynthConfig::from_preset(preset));
  });

  // data
  m.def("generate_synthetic_corpus",
        [](std::uint64_t seed, std::size_t n, const std::filesystem::path& pad_table,
           const std::filesystem::path& out_dir) {
          return data::generate_synthetic_corpus(seed, n, style::load_pad_table(pad_table), out_dir)
              .manifest;
        },
        py::arg("seed"), py::arg("n_per_emotion"), py::arg("pad_table"), py::arg("out_dir"));

  py::class_<Model, std::shared_ptr<Model>>(m, "Model")
      .def_static(
          "create",
          [](const std::string& preset, const std::filesystem::path& pad_table,
             const std::filesystem::path& manifest, std::uint64_t seed) {
            const auto utts = data::load_manifest(manifest);
            if (utts.empty()) throw ConfigError("manifest is empty");
            return std::make_shared<Model>(synth::SynthConfig::from_preset(preset),
                                           data::FeatureConfig{}, data::Vocab::build(utts),
                                           style::load_pad_table(pad_table), seed);
          },
          py::arg("preset"), py::arg("pad_table"), py::arg("manifest"), py::arg("seed") = 42)
      .def_static("load",
                  [](const std::filesystem::path& p) { return std::make_shared<Model>(Model::load(p)); })
      .def("save", &Model::save)
      .def_property_readonly("stage", [](const Model& mo) { return to_string(mo.stage()); })
      .def_property_readonly("preset", [](const Model& mo) { return mo.config().matching_preset(); })
      .def_property_readonly("parameter_count",
                             [](const Model& mo) { return mo.params().scalar_count(); })
      .def("pad_table", [](const Model& mo) { return mo.projector().current_pad().to_json().dump(); })
      .def(
          "synthesize",
          [](const Model& mo, const std::string& text, std::optional<std::array<double, 3>> pad,
             std::optional<std::string> emotion) {
            Synthesis s;
            {
              py::gil_scoped_release release;
              s = mo.synthesize(text, style_spec(pad, emotion));
            }
            return synthesis_dict(s);
          },
          py::arg("text"), py::arg("pad") = py::none(), py::arg("emotion") = py::none())
      .def(
          "train_stage",
          [](Model& mo, const std::string& stage, const std::filesystem::path& manifest,
             std::size_t steps, std::size_t batch_size, std::uint64_t seed) {
            const Stage st = stage_from(stage);
            const auto ex = data::load_examples(data::load_manifest(manifest), mo.vocab(),
                                                data::FeatureExtractor(mo.features()));
            train::TrainConfig tc;
            tc.steps[static_cast<std::size_t>(st)] = steps;
            tc.batch_size = batch_size;
            tc.seed = seed;
            py::gil_scoped_release release;
            return train::run_stage(st, mo, ex, tc).losses;
          },
          py::arg("stage"), py::arg("manifest"), py::arg("steps"), py::arg("batch_size") = 8,
          py::arg("seed") = 42)
      .def("export_adjusted_pad", [](const Model& mo) {
        const auto a = train::export_adjusted_pad(mo);
        return py::make_tuple(a.table.to_json().dump(), a.report.to_json().dump());
      })
      .def(
          "evaluate",
          [](const Model& mo, const std::filesystem::path& manifest, const std::string& mode) {
            const auto ex = data::load_examples(data::load_manifest(manifest), mo.vocab(),
                                                data::FeatureExtractor(mo.features()));
            const auto rep = eval::evaluate_models({{"model", &mo}}, ex, {eval::mode_from(mode)});
            return rep.to_json().dump();
          },
          py::arg("manifest"), py::arg("mode") = "teacher_forced");

  py::class_<service::Service>(m, "Service")
      .def(py::init([](std::shared_ptr<Model> model, const std::string& id, std::size_t iters) {
             return std::make_unique<service::Service>(std::move(model), id, iters);
           }),
           py::arg("model"), py::arg("model_id") = "default", py::arg("griffin_lim_iterations") = 8)
      .def("handle", [](const service::Service& s, const std::string& method,
                        const std::string& path, const std::string& body) {
        service::Response r;
        {
          py::gil_scoped_release release;
          r = s.handle({method, path, body});
        }
        return py::make_tuple(r.status, r.body);
      }, py::arg("method"), py::arg("path"), py::arg("body") = "");
}
