// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "sgda/ct.hpp"
#include "sgda/errors.hpp"
#include "sgda/froc.hpp"
#include "sgda/sgda_block.hpp"
#include "sgda/suite.hpp"

namespace py = pybind11;
using namespace sgda;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor volume_tensor(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected a 3-D array (z, y, x)");
  return to_tensor(a);
}

SgdaConfig make_config(std::size_t channels, std::size_t groups, std::size_t adapters, std::size_t reduction,
                       const std::string& fuse, const std::vector<std::string>& directions, bool grouped_ca) {
  SgdaConfig cfg;
  cfg.channels = channels;
  cfg.groups = groups;
  cfg.adapters = adapters;
  cfg.reduction = reduction;
  cfg.grouped_ca = grouped_ca;
  if (fuse == "cross_attention") {
    cfg.fuse = Fuse::cross_attention;
  } else if (fuse == "mean_only") {
    cfg.fuse = Fuse::mean_only;
  } else {
    throw ConfigError("unknown fuse mode '" + fuse + "'");
  }
  cfg.directions.clear();
  for (const auto& d : directions) {
    const auto dir = parse_direction(d);
    if (!dir) throw ConfigError("unknown direction '" + d + "'");
    cfg.directions.push_back(*dir);
  }
  cfg.validate();
  return cfg;
}

const std::vector<std::string> kDirs = {"axial", "coronal", "sagittal"};

class Module {
 public:
  Module(std::size_t channels, std::size_t groups, std::size_t adapters, std::size_t reduction,
         const std::string& fuse, const std::vector<std::string>& directions, bool grouped_ca, std::uint64_t seed)
      : cfg_(make_config(channels, groups, adapters, reduction, fuse, directions, grouped_ca)),
        params_(init_params(cfg_, seed)) {}

  Array forward(const Array& x) {
    cfg_.validate_input(Shape(x.shape(), x.shape() + x.ndim()));
    return to_array(sgda_forward(nullptr, ad::constant(to_tensor(x)), params_, cfg_).value());
  }

  // Gradients of sum(forward(x) * grad_out) with respect to x and every parameter.
  std::pair<Array, std::map<std::string, Array>> backward(const Array& x, const Array& grad_out) {
    cfg_.validate_input(Shape(x.shape(), x.shape() + x.ndim()));
    ad::Parameter input(to_tensor(x));
    const Tensor probe = to_tensor(grad_out);
    if (probe.shape() != input.value.shape()) throw DimensionError("grad_out must match the input shape");
    auto named = named_params();
    for (auto& [name, p] : named) p->zero_grad();
    {
      ad::Tape tape;
      const ad::Var y = sgda_forward(&tape, ad::bind(&tape, input), params_, cfg_);
      tape.backward(ad::sum(ad::mul(y, ad::constant(probe))));
    }
    std::map<std::string, Array> grads;
    for (auto& [name, p] : named) {
      grads[name] = to_array(p->grad);
      p->zero_grad();
    }
    return {to_array(input.grad), grads};
  }

  std::map<std::string, Array> parameters() {
    std::map<std::string, Array> out;
    for (auto& [name, p] : named_params()) out[name] = to_array(p->value);
    return out;
  }

  void set_parameter(const std::string& name, const Array& value) {
    for (auto& [n, p] : named_params()) {
      if (n != name) continue;
      Tensor t = to_tensor(value);
      if (t.shape() != p->value.shape()) {
        throw DimensionError("parameter " + name + " has shape " + shape_str(p->value.shape()) + ", got " +
                             shape_str(t.shape()));
      }
      p->value = std::move(t);
      return;
    }
    throw UsageError("no parameter named " + name);
  }

  std::size_t parameter_count() const { return sgda::parameter_count(cfg_); }

 private:
  std::vector<std::pair<std::string, ad::Parameter*>> named_params() {
    std::vector<std::pair<std::string, ad::Parameter*>> out;
    params_.visit(cfg_, "", [&](const std::string& n, ad::Parameter& p) { out.emplace_back(n, &p); });
    return out;
  }

  SgdaConfig cfg_;
  SgdaParams params_;
};

using CandRow = std::tuple<std::string, double, double, double, double>;

py::dict froc_py(const std::vector<CandRow>& cands, const std::vector<CandRow>& anns, std::size_t scans,
                 bool strict) {
  std::vector<froc::Candidate> c;
  for (const auto& [id, x, y, z, p] : cands) c.push_back({id, {x, y, z}, p});
  std::vector<ct::Annotation> a;
  for (const auto& [id, x, y, z, d] : anns) a.push_back({id, {x, y, z}, d});
  froc::Options opts;
  opts.strict = strict;
  const froc::FrocResult r = froc::froc(c, a, scans, opts);
  py::list curve;
  for (const auto& pt : r.curve) curve.append(py::make_tuple(pt.threshold, pt.fp_per_scan, pt.sensitivity));
  py::dict out;
  out["operating_points"] = std::vector<double>(froc::kOperatingPoints.begin(), froc::kOperatingPoints.end());
  out["sensitivities"] = std::vector<double>(r.sensitivities.begin(), r.sensitivities.end());
  out["average"] = r.average;
  out["curve"] = curve;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Slice grouped domain attention for 3-D volumes";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<DataError>(m, "DataError", base);
  py::register_exception<NumericError>(m, "NumericError", base);

  py::class_<Module>(m, "SgdaModule")
      .def(py::init<std::size_t, std::size_t, std::size_t, std::size_t, const std::string&,
                    const std::vector<std::string>&, bool, std::uint64_t>(),
           py::arg("channels"), py::arg("groups") = 4, py::arg("adapters") = 3, py::arg("reduction") = 16,
           py::arg("fuse") = "cross_attention", py::arg("directions") = kDirs, py::arg("grouped_ca") = true,
           py::arg("seed") = 0)
      .def("forward", &Module::forward, py::arg("x"), "Apply the module to a (C, D, H, W) array.")
      .def("backward", &Module::backward, py::arg("x"), py::arg("grad_out"),
           "Input and parameter gradients of sum(forward(x) * grad_out).")
      .def("parameters", &Module::parameters)
      .def("set_parameter", &Module::set_parameter, py::arg("name"), py::arg("value"))
      .def_property_readonly("parameter_count", &Module::parameter_count);

  m.def(
      "parameter_count",
      [](std::size_t channels, std::size_t groups, std::size_t adapters, std::size_t reduction,
         const std::string& fuse, const std::vector<std::string>& directions) {
        return parameter_count(make_config(channels, groups, adapters, reduction, fuse, directions, true));
      },
      py::arg("channels"), py::arg("groups") = 4, py::arg("adapters") = 3, py::arg("reduction") = 16,
      py::arg("fuse") = "cross_attention", py::arg("directions") = kDirs);

  m.def("froc", &froc_py, py::arg("candidates"), py::arg("annotations"), py::arg("scans"), py::arg("strict") = false,
        "Candidates are (series, x, y, z, probability) rows, annotations (series, x, y, z, diameter).");

  m.def(
      "window",
      [](const Array& hu) {
        Array out(std::vector<py::ssize_t>(hu.shape(), hu.shape() + hu.ndim()));
        for (py::ssize_t i = 0; i < hu.size(); ++i) out.mutable_data()[i] = ct::window_value(hu.data()[i]);
        return out;
      },
      py::arg("hu"), "Map Hounsfield units to the 0..255 lung window.");

  m.def(
      "resample_isotropic",
      [](const Array& voxels, std::array<double, 3> spacing, double target) {
        ct::Volume v;
        v.voxels = volume_tensor(voxels);
        v.spacing = spacing;
        return to_array(ct::resample_isotropic(v, target).voxels);
      },
      py::arg("voxels"), py::arg("spacing"), py::arg("target") = 1.0,
      "Trilinear resampling of a (z, y, x) array; spacing is given as (x, y, z).");

  m.def(
      "extract_patch",
      [](const Array& voxels, std::array<long, 3> corner, std::size_t extent) {
        ct::Volume v;
        v.kind = ct::VoxelKind::windowed;
        v.voxels = volume_tensor(voxels);
        const Tensor p = ct::extract_patch(v, {corner[0], corner[1], corner[2]}, extent);
        return to_array(p.reshaped({extent, extent, extent}));
      },
      py::arg("voxels"), py::arg("corner"), py::arg("extent") = ct::kPatchExtent,
      "Cubic patch at an (x, y, z) corner; voxels outside the volume read 170.");

  m.def(
      "read_mhd",
      [](const std::string& path) {
        const ct::Volume v = ct::read_mhd(path);
        return py::make_tuple(to_array(v.voxels), v.spacing, v.offset);
      },
      py::arg("path"), "Returns (voxels, spacing, offset) with voxels indexed (z, y, x).");

  m.def(
      "gradcheck_suite",
      [](double step, double tolerance, std::uint64_t seed) {
        SuiteOptions opts;
        opts.step = step;
        opts.tolerance = tolerance;
        opts.seed = seed;
        const SuiteReport r = gradcheck_suite(opts);
        py::list rows;
        for (const auto& row : r.rows) rows.append(py::make_tuple(row.name, row.checked, row.rel_err));
        py::dict out;
        out["rows"] = rows;
        out["worst"] = r.worst;
        out["passed"] = r.passed;
        return out;
      },
      py::arg("step") = 1e-3, py::arg("tolerance") = 1e-4, py::arg("seed") = 2026);
}
