#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pointdrag/bench.hpp"
#include "pointdrag/engine.hpp"
#include "pointdrag/inversion.hpp"
#include "pointdrag/io.hpp"

namespace py = pybind11;
using namespace pointdrag;
using nlohmann::json;

namespace {

// Documents cross the boundary as JSON text; the Python layer wraps them.
json parse(const std::string& text) { return json::parse(text); }

py::array_t<double> to_hwc(const Grid& g) {
  const int C = g.channels(), H = g.height(), W = g.width();
  py::array_t<double> out({H, W, C});
  auto a = out.mutable_unchecked<3>();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) a(y, x, c) = g.at(c, y, x);
  return out;
}

py::array_t<double> to_chw(const Grid& g) {
  const int C = g.channels(), H = g.height(), W = g.width();
  py::array_t<double> out({C, H, W});
  auto a = out.mutable_unchecked<3>();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) a(c, y, x) = g.at(c, y, x);
  return out;
}

Grid from_hwc(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
  if (image.ndim() != 3 || image.shape(2) != 3) throw std::invalid_argument("image must have shape (H, W, 3)");
  const int H = static_cast<int>(image.shape(0)), W = static_cast<int>(image.shape(1));
  Grid g(3, H, W);
  auto a = image.unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) g.at(c, y, x) = a(y, x, c);
  return g;
}

struct PyGenerator {
  std::shared_ptr<const Generator> gen;

  explicit PyGenerator(std::uint64_t seed) {
    GeneratorSpec spec;
    spec.seed = seed;
    gen = std::make_shared<const Generator>(spec);
  }

  LatentStack latent(const std::string& doc) const { return latent_from_json(parse(doc), gen->spec()); }
  std::string dump(const LatentStack& w) const { return latent_to_json(w, gen->spec().seed).dump(); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of pointdrag";

  py::register_exception<validation_error>(m, "ValidationError", PyExc_ValueError);

  py::class_<PyGenerator>(m, "Generator")
      .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
      .def_property_readonly("seed", [](const PyGenerator& g) { return g.gen->spec().seed; })
      .def_property_readonly("image_size", [](const PyGenerator& g) { return g.gen->spec().image_size; })
      .def("latent_from_seed",
           [](const PyGenerator& g, std::uint64_t seed, const std::string& mode) {
             return g.dump(g.gen->latent_from_seed(seed, latent_mode_from_string(mode)));
           },
           py::arg("seed"), py::arg("mode") = "W+")
      .def("canonical_latent",
           [](const PyGenerator& g, const std::string& mode) {
             const std::vector<double> z(g.gen->spec().latent_dim_z, 0.0);
             return g.dump(g.gen->map_latent(z, latent_mode_from_string(mode)));
           },
           py::arg("mode") = "W+")
      .def("render", [](const PyGenerator& g, const std::string& latent) {
        return to_hwc(g.gen->render_image(g.gen->scene(g.latent(latent))));
      })
      .def("features",
           [](const PyGenerator& g, const std::string& latent, int block) {
             SynthesisOptions so;
             so.image = false;
             so.blocks = {block};
             if (block < 1 || block > g.gen->spec().num_blocks()) throw std::invalid_argument("no such block");
             return to_chw(g.gen->synthesize(g.latent(latent), so).features[block - 1]);
           },
           py::arg("latent"), py::arg("block") = 4)
      .def("blobs", [](const PyGenerator& g, const std::string& latent) {
        std::ostringstream out;
        write_blobs_csv(out, g.gen->blob_params(g.latent(latent)));
        return out.str();
      });

  m.def("png_bytes", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
    const auto bytes = encode_png(from_hwc(image));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });

  m.def(
      "drag",
      [](const PyGenerator& g, const std::string& latent, const std::string& spec, const std::string& config) {
        const auto w = g.latent(latent);
        auto drag_spec = drag_spec_from_json(parse(spec));
        const auto cfg = config_from_json(parse(config));
        std::unique_ptr<DragSession> session;
        DragResult result;
        {
          py::gil_scoped_release release;
          session = std::make_unique<DragSession>(g.gen, w, std::move(drag_spec), cfg);
          result = session->run();
        }
        json out = export_session(*session, g.gen->spec().seed);
        out["termination"] = to_string(result.reason);
        return out.dump();
      },
      py::arg("generator"), py::arg("latent"), py::arg("spec"), py::arg("config") = "{}");

  m.def(
      "replay",
      [](const PyGenerator& g, const std::string& session) {
        auto s = import_session(parse(session), g.gen);
        return export_session(*s, g.gen->spec().seed).dump();
      },
      py::arg("generator"), py::arg("session"));

  m.def(
      "invert",
      [](const PyGenerator& g, const py::array_t<double, py::array::c_style | py::array::forcecast>& image, int steps,
         int restarts, std::uint64_t seed, const std::string& mode, std::optional<std::string> init) {
        InversionConfig cfg;
        cfg.steps = steps;
        cfg.restarts = restarts;
        cfg.seed = seed;
        cfg.mode = latent_mode_from_string(mode);
        InversionTarget target{from_hwc(image), std::nullopt};
        std::optional<LatentStack> start;
        if (init) start = g.latent(*init);
        InversionResult r;
        {
          py::gil_scoped_release release;
          r = invert(*g.gen, target, cfg, start);
        }
        return py::make_tuple(g.dump(r.latent), r.mse);
      },
      py::arg("generator"), py::arg("image"), py::arg("steps") = 500, py::arg("restarts") = 3, py::arg("seed") = 0,
      py::arg("mode") = "W+", py::arg("init") = py::none());

  m.def(
      "benchmark",
      [](const PyGenerator& g, const std::string& protocol, int trials, int points, std::uint64_t seed,
         const std::string& config, bool deterministic) {
        BenchmarkConfig cfg;
        cfg.protocol = protocol_from_string(protocol);
        cfg.n_trials = trials;
        cfg.n_points = points;
        cfg.seed = seed;
        cfg.engine = config_from_json(parse(config));
        cfg.deterministic = deterministic;
        BenchmarkReport report;
        {
          py::gil_scoped_release release;
          report = run_benchmark(g.gen, cfg);
        }
        std::ostringstream csv;
        write_report_csv(csv, report);
        return py::make_tuple(csv.str(), report_summary(report).dump());
      },
      py::arg("generator"), py::arg("protocol"), py::arg("trials"), py::arg("points") = 1, py::arg("seed") = 0,
      py::arg("config") = "{}", py::arg("deterministic") = true);
}
