#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "flsl/cli.hpp"
#include "flsl/config.hpp"
#include "flsl/error.hpp"
#include "flsl/experiments.hpp"
#include "flsl/fl.hpp"
#include "flsl/imaging.hpp"
#include "flsl/metrics.hpp"
#include "flsl/model.hpp"
#include "flsl/synth.hpp"

namespace py = pybind11;
using namespace flsl;

namespace {

using Image = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageBuffer to_image(const Image& a) {
  if (a.ndim() != 3 || a.shape(2) != kChannels) throw InvalidArgument("image must have shape (height, width, 3)");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  return ImageBuffer(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

Image from_image(const ImageBuffer& img) {
  Image out({img.height(), img.width(), kChannels});
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

py::array_t<double> from_vector(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

// {"dims": [...], "residual": bool, "layers": [(weights, bias), ...]}
py::dict model_to_dict(const ModelParams& p) {
  py::list layers;
  for (const auto& l : p.layers) layers.append(py::make_tuple(Matrix(l.weights), Vector(l.bias)));
  py::dict d;
  d["dims"] = p.layer_dims();
  d["residual"] = p.residual_enabled();
  d["layers"] = layers;
  return d;
}

ModelParams model_from_dict(const py::dict& d) {
  ModelParams p(d["dims"].cast<std::vector<int>>(), d["residual"].cast<bool>());
  const auto layers = d["layers"].cast<py::list>();
  if (layers.size() != p.layers.size()) throw InvalidArgument("layer count does not match dims");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto t = layers[i].cast<py::tuple>();
    const Matrix w = t[0].cast<Matrix>();
    const Vector b = t[1].cast<Vector>();
    if (w.rows() != p.layers[i].weights.rows() || w.cols() != p.layers[i].weights.cols() ||
        b.size() != p.layers[i].bias.size()) {
      throw InvalidArgument("layer " + std::to_string(i) + " has the wrong shape");
    }
    p.layers[i].weights = w;
    p.layers[i].bias = b;
  }
  return p;
}

py::dict metrics_to_dict(const Metrics& m) {
  py::dict d;
  d["tp"] = m.counts.tp;
  d["fp"] = m.counts.fp;
  d["tn"] = m.counts.tn;
  d["fn"] = m.counts.fn;
  d["accuracy"] = m.accuracy;
  d["f1"] = m.f1;
  d["error_rate"] = m.error_rate;
  return d;
}

std::vector<LampState> to_states(const std::vector<bool>& v) {
  std::vector<LampState> out;
  out.reserve(v.size());
  for (bool b : v) out.push_back(b ? LampState::On : LampState::Off);
  return out;
}

}  // namespace

PYBIND11_MODULE(_flsl, m) {
  m.doc() = "C++ core: imaging, model, federated training and experiment drivers";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("load_ppm", [](const std::filesystem::path& p) { return from_image(load_ppm(p)); }, py::arg("path"),
        "Binary P6 file as a float64 array of shape (height, width, 3).");
  m.def("save_ppm", [](const Image& a, const std::filesystem::path& p) { save_ppm(to_image(a), p); },
        py::arg("image"), py::arg("path"));
  m.def("center_crop", [](const Image& a, int side) { return from_image(center_crop(to_image(a), side)); },
        py::arg("image"), py::arg("side"));
  m.def("bilinear_resize",
        [](const Image& a, int h, int w) { return from_image(bilinear_resize(to_image(a), h, w)); },
        py::arg("image"), py::arg("height"), py::arg("width"));
  m.def(
      "preprocess",
      [](const Image& a, int crop_side, bool green_metadata) {
        return from_vector(preprocess(to_image(a), {crop_side, green_metadata}));
      },
      py::arg("image"), py::arg("crop_side") = 0, py::arg("green_metadata") = false,
      "crop, resize to 32x32, normalize; optionally append green mean and median.");

  m.def(
      "expected_state",
      [](int minute, int sunrise, int sunset) {
        NodeProfile p;
        p.sunrise_minute = sunrise;
        p.sunset_minute = sunset;
        return expected_state(minute, p) == LampState::On;
      },
      py::arg("minute"), py::arg("sunrise"), py::arg("sunset"), "True when the lamp should be on.");
  m.def(
      "make_fleet",
      [](int type0, int type1, int type2, std::uint64_t seed) {
        FleetConfig fc;
        fc.type0_nodes = type0;
        fc.type1_nodes = type1;
        fc.type2_nodes = type2;
        fc.seed = seed;
        py::list out;
        for (const auto& p : make_fleet(fc)) {
          py::dict d;
          d["node_id"] = p.node_id;
          d["node_type"] = static_cast<int>(p.node_type);
          d["sunrise_minute"] = p.sunrise_minute;
          d["sunset_minute"] = p.sunset_minute;
          out.append(d);
        }
        return out;
      },
      py::arg("type0") = 80, py::arg("type1") = 53, py::arg("type2") = 7, py::arg("seed") = 2022);

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return model_to_dict(load_params(p)); },
        py::arg("path"));
  m.def("save_checkpoint", [](const py::dict& d, const std::filesystem::path& p) { save_params(model_from_dict(d), p); },
        py::arg("model"), py::arg("path"));
  m.def(
      "forward",
      [](const py::dict& d, const std::vector<double>& x) { return forward(model_from_dict(d), x); },
      py::arg("model"), py::arg("features"), "Probability that the lamp is on.");
  m.def(
      "fedavg",
      [](const std::vector<py::dict>& models, const std::vector<std::size_t>& counts) {
        if (models.size() != counts.size()) throw InvalidArgument("need one sample count per model");
        std::vector<ClientUpdate> ups;
        for (std::size_t i = 0; i < models.size(); ++i) {
          ups.push_back({static_cast<NodeId>(i), model_from_dict(models[i]), counts[i], 0.0});
        }
        return model_to_dict(fedavg_aggregate(ups));
      },
      py::arg("models"), py::arg("sample_counts"), "Sample-count weighted mean of the models.");
  m.def(
      "compute_metrics",
      [](const std::vector<bool>& pred, const std::vector<bool>& truth, bool positive_on) {
        return metrics_to_dict(compute_metrics(to_states(pred), to_states(truth),
                                               positive_on ? LampState::On : LampState::Off));
      },
      py::arg("predictions"), py::arg("labels"), py::arg("positive_on") = true);

  m.def("config_keys", [] {
    std::vector<std::tuple<std::string, std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.key, k.default_value, k.description);
    return out;
  });
  m.def(
      "run",
      [](const std::optional<std::filesystem::path>& path, const ConfigEntries& overrides) {
        const ExperimentConfig cfg = load_config(path, overrides);
        py::gil_scoped_release unlock;
        std::ostringstream log;
        return report_to_json(run_command(cfg, log));
      },
      py::arg("config") = py::none(), py::arg("overrides") = ConfigEntries{},
      "Runs experiment.method, writes outputs under output.dir, returns the report JSON.");
  m.def(
      "compare",
      [](const std::optional<std::filesystem::path>& path, const ConfigEntries& overrides) {
        const ExperimentConfig cfg = load_config(path, overrides);
        py::gil_scoped_release unlock;
        std::ostringstream log;
        std::vector<std::string> out;
        for (const auto& r : compare_command(cfg, log)) out.push_back(report_to_json(r));
        return out;
      },
      py::arg("config") = py::none(), py::arg("overrides") = ConfigEntries{});
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv = {"flsl"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release unlock;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool in-process; returns (exit_code, stdout, stderr).");
}
