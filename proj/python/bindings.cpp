// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <malloc.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "mudet/cli.hpp"
#include "mudet/dataio.hpp"
#include "mudet/enhance.hpp"
#include "mudet/error.hpp"
#include "mudet/fusion.hpp"
#include "mudet/gradcheck.hpp"
#include "mudet/losses.hpp"
#include "mudet/metrics.hpp"
#include "mudet/obb.hpp"

namespace py = pybind11;
using namespace mudet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Shape shape_of(const Array& a) {
  Shape s;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) s.push_back(static_cast<std::size_t>(a.shape(d)));
  return s;
}

// (C, H, W) view of a 2-D or 3-D array.
Tensor to_tensor(const Array& a) {
  Shape s = shape_of(a);
  if (s.size() == 2) s.insert(s.begin(), 1);
  if (s.size() != 3) throw ShapeError("expected a 2-D or 3-D array, got " + shape_str(shape_of(a)));
  return Tensor::from(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t, const Array& like) {
  Array out(std::vector<py::ssize_t>(like.shape(), like.shape() + like.ndim()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_array(const std::vector<std::uint8_t>& m, std::size_t rows,
                                     std::size_t cols) {
  py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
  std::copy(m.begin(), m.end(), out.mutable_data());
  return out;
}

std::vector<DetectionRecord> to_records(const std::vector<std::pair<ObbAnnotation, double>>& d) {
  std::vector<DetectionRecord> out;
  for (const auto& [o, s] : d) out.push_back({o, s});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native kernels of the mudet toolkit";
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  static py::exception<Error> base(m, "MudetError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::class_<ObbAnnotation>(m, "Obb")
      .def(py::init([](double xc, double yc, double w, double h, double theta, int class_id) {
             return ObbAnnotation{class_id, xc, yc, w, h, theta};
           }),
           py::arg("xc"), py::arg("yc"), py::arg("w"), py::arg("h"), py::arg("theta"),
           py::arg("class_id") = 0)
      .def_readwrite("class_id", &ObbAnnotation::class_id)
      .def_readwrite("xc", &ObbAnnotation::xc)
      .def_readwrite("yc", &ObbAnnotation::yc)
      .def_readwrite("w", &ObbAnnotation::w)
      .def_readwrite("h", &ObbAnnotation::h)
      .def_readwrite("theta", &ObbAnnotation::theta)
      .def("vertices",
           [](const ObbAnnotation& o) {
             std::vector<std::pair<double, double>> v;
             for (const Point& p : obb_vertices(o)) v.emplace_back(p.x, p.y);
             return v;
           })
      .def("__eq__", [](const ObbAnnotation& a, const ObbAnnotation& b) { return a == b; })
      .def("__repr__", [](const ObbAnnotation& o) { return "Obb(" + format_annotation(o) + ")"; });

  py::class_<BoxEncoding>(m, "BoxEncoding")
      .def(py::init<>())
      .def_readwrite("l", &BoxEncoding::l)
      .def_readwrite("s", &BoxEncoding::s)
      .def_readwrite("r", &BoxEncoding::r);

  // Enhancement kernels.
  m.def(
      "gamma_transform",
      [](const Array& img, double A, double gamma) {
        return to_array(gamma_transform(to_tensor(img), GammaConfig{A, gamma}), img);
      },
      py::arg("img"), py::arg("A") = 1.0, py::arg("gamma") = 1.0);
  m.def(
      "grayscale_slice",
      [](const Array& hmap, double h1, double h2, double i0, double i1, double c_min,
         double c_max) {
        return to_array(grayscale_slice(to_tensor(hmap), SliceConfig{h1, h2, i0, i1, c_min, c_max}),
                        hmap);
      },
      py::arg("hmap"), py::arg("h1"), py::arg("h2"), py::arg("i0"), py::arg("i1"),
      py::arg("c_min") = 0.0, py::arg("c_max") = 655.35);

  // Geometry.
  m.def("polygon_iou", &polygon_iou);
  m.def("canonicalize", &mudet::canonicalize);
  m.def("hbb_iou_from_distances", [](const std::array<double, 4>& l,
                                     const std::array<double, 4>& l_hat) {
    return hbb_iou_from_distances(l, l_hat).iou;
  });
  m.def("encode_obb",
        [](const ObbAnnotation& o, double x, double y) { return encode_obb(o, Point{x, y}); });
  m.def(
      "decode_obb",
      [](const BoxEncoding& e, double x, double y, int class_id) {
        return decode_obb(e, Point{x, y}, class_id);
      },
      py::arg("enc"), py::arg("x"), py::arg("y"), py::arg("class_id") = 0);
  m.def(
      "nms",
      [](const std::vector<std::pair<ObbAnnotation, double>>& dets, double thr) {
        std::vector<std::pair<ObbAnnotation, double>> out;
        for (const auto& d : nms(to_records(dets), thr)) out.emplace_back(d.obb, d.score);
        return out;
      },
      py::arg("detections"), py::arg("iou_threshold") = 0.45,
      "Detections are (Obb, score) pairs; survivors come back in ranking order.");

  // Losses and fusion.
  m.def("focal_loss", py::overload_cast<double, int, double>(&focal_loss), py::arg("p_hat"),
        py::arg("label"), py::arg("gamma") = 2.0);
  m.def("obb_regression_loss", &obb_regression_loss);
  m.def(
      "build_masks",
      [](const Array& conf_rgb, const Array& conf_h, double theta) {
        if (conf_rgb.ndim() != 2) throw ShapeError("confidence maps must be 2-D");
        MaskTriple t = build_masks({to_tensor(conf_rgb), to_tensor(conf_h), theta});
        return py::make_tuple(mask_array(t.easy, t.rows, t.cols),
                              mask_array(t.rgb_only, t.rows, t.cols),
                              mask_array(t.h_only, t.rows, t.cols));
      },
      py::arg("conf_rgb"), py::arg("conf_h"), py::arg("theta") = 0.2,
      "Returns (easy, rgb_only, h_only) uint8 masks.");

  // Metrics.
  m.def(
      "average_precision",
      [](const std::vector<std::pair<ObbAnnotation, double>>& dets,
         const std::vector<ObbAnnotation>& gts, double iou_threshold, bool interpolate) {
        ApResult r = average_precision(to_records(dets), gts, iou_threshold, interpolate);
        std::vector<std::tuple<double, double, double>> curve;
        for (const auto& p : r.curve) curve.emplace_back(p.threshold, p.precision, p.recall);
        return py::make_tuple(r.ap, curve);
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5,
      py::arg("interpolate") = false, "Returns (ap, [(threshold, precision, recall), ...]).");

  // Data.
  m.def("tile_origins", &tile_origins, py::arg("extent"), py::arg("tile"), py::arg("overlap"));
  m.def("parse_annotations", &parse_annotations);
  m.def("format_annotations", &format_annotations);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t trials) {
        GradCheckOptions opt;
        opt.seed = seed;
        opt.trials = trials;
        py::list out;
        for (const auto& r : run_gradcheck_suite(opt)) {
          py::dict d;
          d["name"] = r.name;
          d["max_error"] = r.max_error;
          d["trials"] = r.trials;
          d["checked"] = r.checked;
          d["skipped"] = r.skipped;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1, py::arg("trials") = 10);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> all{"mudet"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs a mudet subcommand in-process and returns its exit code.");
}
