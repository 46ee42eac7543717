#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fontdisent/error.hpp"
#include "fontdisent/eval.hpp"
#include "fontdisent/features.hpp"
#include "fontdisent/glyphset.hpp"
#include "fontdisent/metrics.hpp"
#include "fontdisent/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace fontdisent;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

GrayImage image_from(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D image array");
  GrayImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray array_from(const GrayImage& img) {
  FloatArray out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

metrics::Mask mask_from(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D mask array");
  metrics::Mask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  for (py::ssize_t k = 0; k < a.size(); ++k) m.bits[k] = a.data()[k] != 0;
  return m;
}

py::array_t<std::uint8_t> array_from(const metrics::Mask& m) {
  py::array_t<std::uint8_t> out({m.height, m.width});
  std::copy(m.bits.begin(), m.bits.end(), out.mutable_data());
  return out;
}

std::vector<metrics::Point> points_from(const DoubleArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw py::value_error("expected an (N, 2) point array");
  std::vector<metrics::Point> pts(a.shape(0));
  for (py::ssize_t k = 0; k < a.shape(0); ++k) pts[k] = {a.at(k, 0), a.at(k, 1)};
  return pts;
}

DoubleArray array_from(const std::vector<metrics::Point>& pts) {
  DoubleArray out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  for (size_t k = 0; k < pts.size(); ++k) out.mutable_at(k, 0) = pts[k].x, out.mutable_at(k, 1) = pts[k].y;
  return out;
}

DoubleArray array_from(const Eigen::MatrixXd& m) {
  DoubleArray out({m.rows(), m.cols()});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.mutable_at(r, c) = m(r, c);
  return out;
}

Eigen::MatrixXd matrix_from(const DoubleArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Eigen::MatrixXd m(a.shape(0), a.shape(1));
  for (py::ssize_t r = 0; r < a.shape(0); ++r)
    for (py::ssize_t c = 0; c < a.shape(1); ++c) m(r, c) = a.at(r, c);
  return m;
}

py::dict table_dict(const FeatureTable& t) {
  Eigen::MatrixXd style = t.style_matrix(), content = t.content_matrix();
  std::vector<int> fonts, classes;
  for (const auto& r : t.rows) fonts.push_back(r.font_id), classes.push_back(r.class_id);
  py::dict d;
  d["style"] = array_from(style);
  d["content"] = array_from(content);
  d["font_ids"] = py::array(py::cast(fonts));
  d["class_ids"] = py::array(py::cast(classes));
  d["font_names"] = t.font_names;
  d["checkpoint_id"] = t.checkpoint_id;
  d["dataset_id"] = t.dataset_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Font style/content disentanglement toolkit";

  static py::exception<Error> error(m, "FontDisentError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("version", &version_info, "Toolkit, config schema and checkpoint format versions.");

  m.def(
      "rasterize_glyph",
      [](const fs::path& font, const std::string& ch, int size) {
        if (ch.size() != 1) throw py::value_error("expected a single ASCII character");
        return array_from(rasterize_glyph(font, static_cast<char32_t>(ch[0]), size).image);
      },
      py::arg("font_file"), py::arg("char"), py::arg("size") = kDefaultRenderSize,
      "Render one glyph as a (size, size) float32 array with ink = 1.");

  m.def(
      "otsu_threshold", [](const FloatArray& img) { return metrics::otsu_threshold(image_from(img).pixels).threshold_bin; },
      py::arg("image"), "Histogram bin (0-255) chosen by Otsu's method, or -1 for a constant image.");
  m.def(
      "otsu_binarize", [](const FloatArray& img) { return array_from(metrics::otsu_binarize(image_from(img))); },
      py::arg("image"));
  m.def(
      "canny_edges",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask) {
        return array_from(metrics::canny_edges(mask_from(mask)));
      },
      py::arg("mask"), "Edge points (x, y) of a binary mask.");
  m.def(
      "hausdorff", [](const DoubleArray& a, const DoubleArray& b) { return metrics::hausdorff(points_from(a), points_from(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "chamfer", [](const DoubleArray& a, const DoubleArray& b) { return metrics::chamfer(points_from(a), points_from(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "iou",
      [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& b) {
        return metrics::iou(mask_from(a), mask_from(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "fit_pca",
      [](const DoubleArray& x, int k) {
        const auto p = fit_pca(matrix_from(x), k);
        py::dict d;
        d["mean"] = array_from(Eigen::MatrixXd(p.mean.transpose()));
        d["axes"] = array_from(p.axes);
        d["explained_variance"] = array_from(Eigen::MatrixXd(p.explained_variance.transpose()));
        return d;
      },
      py::arg("x"), py::arg("n_components"));

  m.def(
      "load_feature_table", [](const fs::path& path) { return table_dict(load_table(path)); }, py::arg("path"),
      "Load a feature table as a dict of numpy arrays.");

  m.def(
      "generate",
      [](const fs::path& checkpoint, const FloatArray& style_image, const fs::path& features, int content_font) {
        auto net = load_checkpoint(checkpoint).net;
        GlyphImage glyph;
        glyph.image = image_from(style_image);
        glyph.font_id = -1;
        const auto images = one_shot_generate(net, glyph, content_font, load_table(features));
        py::list out;
        for (const auto& img : images) out.append(array_from(img));
        return out;
      },
      py::arg("checkpoint"), py::arg("style_image"), py::arg("features"), py::arg("content_font"),
      "Generate the 26 capitals in the style of one glyph image, using one font's content vectors.");

  m.def(
      "run_pipeline",
      [](const fs::path& config, std::optional<fs::path> output_dir) {
        auto cfg = ExperimentConfig::load(config);
        if (output_dir) cfg.output_dir = *output_dir;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(cfg);
        }
        py::dict d;
        d["output_dir"] = r.output_dir;
        d["ran"] = r.ran;
        d["skipped"] = r.skipped;
        return d;
      },
      py::arg("config"), py::arg("output_dir") = py::none());
}
