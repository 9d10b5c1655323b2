#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "pfmn/error.hpp"
#include "pfmn/eval.hpp"
#include "pfmn/features.hpp"
#include "pfmn/pfmn.hpp"
#include "pfmn/pipeline.hpp"
#include "pfmn/sphere.hpp"
#include "pfmn/synth.hpp"
#include "pfmn/temporal_seg.hpp"
#include "pfmn/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace pfmn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.raw(), t.raw() + t.size(), out.mutable_data());
  return out;
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

Viewpoint viewpoint(std::pair<double, double> lonlat) { return make_viewpoint(lonlat.first, lonlat.second); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "PFMN core: selection prior, decoder, segmentation, sphere geometry and data I/O.";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error((std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def("selection_prior", &selection_prior, py::arg("n"), py::arg("m"), py::arg("t"), py::arg("z_prev"),
        "Prior over candidates z_prev+1..n at iteration t (1-based t, z_prev).");
  m.def("summary_length", &summary_length, py::arg("n"), py::arg("ratio"));

  m.def(
      "kts_segment",
      [](const FloatArray& frames, std::size_t max_segments, double penalty, double fps) {
        return to_py(segmentation_to_json(kts_segment(to_tensor(frames), max_segments, penalty, fps)));
      },
      py::arg("frames"), py::arg("max_segments"), py::arg("penalty"), py::arg("fps") = 5.0);
  m.def(
      "kts_segment_auto",
      [](const FloatArray& frames, double min_mean, double max_mean) {
        return to_py(segmentation_to_json(kts_segment_auto(to_tensor(frames), min_mean, max_mean).segmentation));
      },
      py::arg("frames"), py::arg("min_mean") = 25.0, py::arg("max_mean") = 36.0);

  m.def("viewpoint_grid", [] {
    std::vector<std::pair<double, double>> out;
    for (const auto& v : viewpoint_grid()) out.emplace_back(v.longitude, v.latitude);
    return out;
  });
  m.def(
      "frame_cosine_similarity", [](std::pair<double, double> a, std::pair<double, double> b) {
        return frame_cosine_similarity(viewpoint(a), viewpoint(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "frame_overlap",
      [](std::pair<double, double> a, std::pair<double, double> b, std::size_t samples) {
        return frame_overlap(NfovSpec{viewpoint(a)}, NfovSpec{viewpoint(b)}, samples);
      },
      py::arg("a"), py::arg("b"), py::arg("samples") = 200000);

  m.def(
      "read_features",
      [](const fs::path& path) {
        auto f = read_features(path);
        return py::make_tuple(int(f.kind), f.provenance, to_array(f.data));
      },
      py::arg("path"), "Returns (kind, provenance, array).");
  m.def(
      "write_features",
      [](const fs::path& path, const FloatArray& data, int kind, std::uint64_t provenance) {
        if (kind < 0 || kind > 2) throw FormatError("feature kind must be 0, 1 or 2");
        write_features({FeatureKind(kind), provenance, to_tensor(data)}, path);
      },
      py::arg("path"), py::arg("data"), py::arg("kind") = 0, py::arg("provenance") = 0);

  m.def(
      "synth_gen",
      [](const fs::path& out, const py::dict& config, std::size_t pairs) {
        SynthConfig cfg = from_py(config).get<SynthConfig>();
        cfg.validate();
        std::vector<std::string> files;
        for (const auto& p : export_synthetic(SynthCorpus(cfg), out, pairs).files) files.push_back(p.string());
        return files;
      },
      py::arg("out"), py::arg("config") = py::dict(), py::arg("pairs") = 512,
      "Writes a synthetic corpus with manifests under `out`; returns the files written.");

  m.def(
      "summarize",
      [](const fs::path& manifest, const fs::path& checkpoint, std::optional<std::size_t> m, double ratio) {
        const auto man = load_manifest(manifest);
        auto model = load_model(checkpoint, PfmnConfig{}, RankerConfig{});
        SummaryOptions so;
        so.m = m;
        so.ratio = ratio;
        auto out = nlohmann::json::array();
        for (const auto& e : man.videos) out.push_back(summarize_entry(e, model, so));
        return to_py(out);
      },
      py::arg("manifest"), py::arg("checkpoint"), py::arg("m") = py::none(), py::arg("ratio") = 0.15);

  m.def(
      "f1_score",
      [](const std::vector<std::size_t>& pred, const std::vector<std::vector<std::size_t>>& gts,
         const py::dict& segmentation) {
        const auto seg = segmentation_from_json(from_py(segmentation));
        std::vector<GtSummary> gs;
        for (const auto& g : gts) gs.push_back({"", g, std::vector<double>(g.size(), 1.0), seg.frame_count});
        return f1_summary(pred, gs, seg).f1;
      },
      py::arg("pred"), py::arg("gts"), py::arg("segmentation"),
      "Frame-level F1 of predicted subshots against each GT subshot set, averaged.");
}
