#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lpnum/conformance.hpp"
#include "lpnum/context.hpp"
#include "lpnum/costmodel.hpp"
#include "lpnum/format.hpp"
#include "lpnum/net.hpp"

namespace py = pybind11;
using namespace lpnum;

namespace {

Network reference_net(const std::string& scheme) {
  return Network(NetConfig{}, SchemeConfig::preset(scheme), 1);
}

}  // namespace

PYBIND11_MODULE(_lpnum, m) {
  m.doc() = "Bit-accurate low-precision arithmetic and training cost models";

  m.def(
      "quantize",
      [](double x, const std::string& fmt, const std::string& mode,
         double u01) {
        return quantize(x, parse_repr(fmt), parse_rounding(mode), u01);
      },
      py::arg("x"), py::arg("fmt"), py::arg("mode") = "nearest",
      py::arg("u01") = 0.0,
      "Round one value onto the format's grid; u01 feeds stochastic mode.");

  m.def(
      "representable",
      [](double x, const std::string& fmt) {
        return representable(x, parse_repr(fmt));
      },
      py::arg("x"), py::arg("fmt"));

  m.def(
      "codepoints",
      [](const std::string& fmt) {
        return enumerate_codepoints(parse_repr(fmt));
      },
      py::arg("fmt"), "Every representable value of the format, ascending.");

  m.def(
      "normalize_format",
      [](const std::string& fmt) { return format_name(parse_repr(fmt)); },
      py::arg("fmt"));

  m.def(
      "storage_bits",
      [](const std::string& fmt) { return parse_repr(fmt).storage_bits(); },
      py::arg("fmt"));

  m.def(
      "context_scale_exponent",
      [](const std::vector<double>& xs) {
        return context_scale_exponent(xs.data(), (int64_t)xs.size());
      },
      py::arg("values"),
      "Shared power-of-two scale for one context's members.");

  m.def("preset_names", [] { return SchemeConfig::preset_names(); });

  m.def(
      "preset_formats",
      [](const std::string& name) {
        SchemeConfig s = SchemeConfig::preset(name);
        py::dict d;
        for (int c = 0; c < kNumClasses; ++c)
          d[to_string(static_cast<ParamClass>(c))] =
              class_format_name(s.cls[c]);
        return d;
      },
      py::arg("name"));

  m.def("class_names", [] {
    std::vector<std::string> v;
    for (int c = 0; c < kNumClasses; ++c)
      v.push_back(to_string(static_cast<ParamClass>(c)));
    return v;
  });

  m.def(
      "estimate_time",
      [](const std::string& scheme, int batch, int64_t iters) {
        Network net = reference_net(scheme);
        TimeEstimate est =
            estimate_time(net, batch, iters, CostTable::builtin());
        py::dict d;
        d["total"] = est.total;
        d["per_layer"] = est.per_layer;
        return d;
      },
      py::arg("scheme"), py::arg("batch") = 100, py::arg("iters") = 20000,
      "Modeled training hours on the reference workload.");

  m.def(
      "estimate_memory",
      [](const std::string& scheme) {
        Network net = reference_net(scheme);
        MemoryEstimate mem = estimate_memory(net);
        py::dict d;
        d["param_bits"] = mem.param_bits;
        d["act_bits"] = mem.act_bits;
        d["calibrated_param_bytes"] = mem.calibrated_param_bytes;
        d["calibrated_act_bytes"] = mem.calibrated_act_bytes;
        d["calibrated_bytes"] = mem.calibrated_bytes;
        d["param_count"] = mem.param_count;
        d["momentum_count"] = mem.momentum_count;
        d["act_count_per_image"] = mem.act_count_per_image;
        d["grad_count_per_image"] = mem.grad_count_per_image;
        return d;
      },
      py::arg("scheme"));

  m.def(
      "run_conformance",
      [](int level) {
        std::vector<py::dict> out;
        for (const CheckResult& r : run_conformance(level)) {
          py::dict d;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["detail"] = r.detail;
          out.push_back(d);
        }
        return out;
      },
      py::arg("level") = 0,
      "Numeric self-checks; level 1 runs the full-depth suite.");

  m.attr("__version__") = "1.0.0";
}
