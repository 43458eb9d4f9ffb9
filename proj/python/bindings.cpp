#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "seizurecast/autodiff.hpp"
#include "seizurecast/cli.hpp"
#include "seizurecast/edf.hpp"
#include "seizurecast/error.hpp"
#include "seizurecast/interpret.hpp"
#include "seizurecast/metrics.hpp"
#include "seizurecast/mfcc.hpp"
#include "seizurecast/models.hpp"
#include "seizurecast/storage.hpp"

namespace py = pybind11;
using namespace seizurecast;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["sensitivity"] = m.sensitivity;
  d["specificity"] = m.specificity;
  d["roc_auc"] = m.roc_auc ? py::cast(*m.roc_auc) : py::none();
  d["tp"] = m.counts.tp;
  d["tn"] = m.counts.tn;
  d["fp"] = m.counts.fp;
  d["fn"] = m.counts.fn;
  return d;
}

MfccConfig mfcc_config(std::size_t n_coeffs, std::size_t frame_len, std::size_t hop, std::size_t fft_size) {
  MfccConfig c;
  c.n_banks = n_coeffs;
  c.n_coeffs = n_coeffs;
  c.frame_len = frame_len;
  c.hop = hop;
  c.fft_size = fft_size;
  return c;
}

// Python callables see the coalition as a list of 0/1 ints.
CoalitionValue wrap_game(py::function fn) {
  return [fn](std::span<const std::uint8_t> s) {
    py::gil_scoped_acquire gil;
    return fn(std::vector<int>(s.begin(), s.end())).cast<double>();
  };
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "seizurecast core: EDF ingest, MFCC features, models, metrics and attribution";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // ingest
  m.def(
      "parse_summary",
      [](const std::string& text) {
        py::list out;
        for (const auto& a : parse_summary(text)) {
          py::list iv;
          for (const auto& s : a.seizure_intervals) iv.append(py::make_tuple(s.start, s.end));
          out.append(py::make_tuple(a.file_name, iv));
        }
        return out;
      },
      py::arg("text"), "Seizure annotation blocks as (file_name, [(start, end), ...]).");

  m.def(
      "load_recording",
      [](const std::filesystem::path& path, int subject_id, std::vector<std::pair<double, double>> seizures) {
        SeizureAnnotations ann;
        ann.file_name = path.filename().string();
        for (auto [a, b] : seizures) ann.seizure_intervals.push_back({a, b});
        const auto rec = load_recording(path, subject_id, ann, default_montage());
        return py::make_tuple(to_array(rec.channels), rec.fs);
      },
      py::arg("path"), py::arg("subject_id") = 1, py::arg("seizures") = std::vector<std::pair<double, double>>{},
      "Reads an EDF file in the canonical 23-channel montage; returns (signals [23 x L], fs).");

  // features
  m.def(
      "mfcc",
      [](const Array& window, double fs, std::size_t n_coeffs, std::size_t frame_len, std::size_t hop,
         std::size_t fft_size) {
        return to_array(mfcc_map(to_tensor(window), mfcc_config(n_coeffs, frame_len, hop, fft_size), fs));
      },
      py::arg("window"), py::arg("fs") = 256.0, py::arg("n_coeffs") = 13, py::arg("frame_len") = 160,
      py::arg("hop") = 12, py::arg("fft_size") = 256, "MFCC map [C x n_coeffs x frames] of a [C x L] window.");

  // losses
  m.def("bce", &nn::bce, py::arg("p"), py::arg("y"));
  m.def(
      "cce", [](std::vector<double> q, std::size_t y) { return nn::cce(q, y); }, py::arg("q"), py::arg("y"));
  m.def("contrastive", &nn::contrastive, py::arg("d"), py::arg("same"), py::arg("margin") = 1.0);

  // metrics
  m.def(
      "roc_auc", [](std::vector<double> s, std::vector<int> y) { return roc_auc(s, y); }, py::arg("scores"),
      py::arg("labels"));
  m.def(
      "compute_metrics",
      [](std::vector<double> s, std::vector<int> y, double threshold) {
        return metrics_dict(compute_metrics(s, y, threshold));
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);

  // models
  py::class_<Model>(m, "Model")
      .def_property_readonly("kind", [](const Model& self) { return to_string(self.kind()); })
      .def_property_readonly("architecture_id", &Model::architecture_id)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("embedding_size", &Model::embedding_size)
      .def_property_readonly("geometry",
                             [](const Model& self) {
                               const auto& g = self.geometry();
                               return py::make_tuple(g.channels, g.height, g.width);
                             })
      .def(
          "predict_proba", [](Model& self, const Array& batch) { return self.predict_proba(to_tensor(batch)); },
          py::arg("batch"), "Eval-mode pre-ictal probabilities for a [B x C x H x W] batch.")
      .def(
          "embed", [](Model& self, const Array& batch) { return to_array(self.embed(to_tensor(batch))); },
          py::arg("batch"))
      .def(
          "save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(p, self); },
          py::arg("path"));

  m.def(
      "make_model",
      [](const std::string& kind, std::uint64_t seed, std::size_t width) -> std::unique_ptr<Model> {
        const InputGeometry g{23, 13, width};
        if (parse_model_kind(kind) == ModelKind::kModel1) return std::make_unique<Model1>(Model1Architecture{}, g, seed);
        return std::make_unique<Model2>(Model2Architecture{}, g, seed);
      },
      py::arg("kind") = "model2", py::arg("seed") = 0, py::arg("width") = 201);
  m.def(
      "load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"));

  // attribution and biomarkers
  m.def(
      "shapley_exact", [](std::size_t n, py::function fn) { return shapley_exact(n, wrap_game(std::move(fn))); },
      py::arg("players"), py::arg("value"));
  m.def(
      "shapley_permutation",
      [](std::size_t n, py::function fn, std::size_t permutations, std::uint64_t seed) {
        return shapley_permutation(n, wrap_game(std::move(fn)), permutations, seed);
      },
      py::arg("players"), py::arg("value"), py::arg("permutations") = 1000, py::arg("seed") = 0);
  m.def(
      "channel_shapley",
      [](Model& model, const Array& instance, const Array& baseline, std::size_t samples, std::uint64_t seed) {
        return channel_shapley(model, to_tensor(instance), to_tensor(baseline), samples, seed);
      },
      py::arg("model"), py::arg("instance"), py::arg("baseline"), py::arg("samples") = 100, py::arg("seed") = 0);
  m.def(
      "kl_map",
      [](const std::vector<Array>& maps, std::size_t bins, double alpha) {
        std::vector<Tensor> ts;
        ts.reserve(maps.size());
        for (const auto& a : maps) ts.push_back(to_tensor(a));
        return to_array(kl_map(ts, bins, alpha).values);
      },
      py::arg("maps"), py::arg("bins") = 32, py::arg("alpha") = 1e-6,
      "Per-channel KL between consecutive maps, [C x (N - 1)].");
  m.def(
      "kl_divergence", [](std::vector<double> p, std::vector<double> q) { return kl_divergence(p, q); },
      py::arg("p"), py::arg("q"));
  m.def(
      "smooth_and_threshold",
      [](std::vector<double> raw, std::size_t window_len, double threshold) {
        const auto t = smooth_and_threshold(raw, window_len, threshold);
        return py::make_tuple(t.smoothed, t.final);
      },
      py::arg("raw"), py::arg("window_len") = 21, py::arg("threshold") = 0.5);

  // command line
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a seizurecast subcommand; returns (exit_code, stdout, stderr).");
}
