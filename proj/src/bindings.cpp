#include "specfuse/checkpoint.hpp"
#include "specfuse/cli.hpp"
#include "specfuse/config.hpp"
#include "specfuse/metrics.hpp"
#include "specfuse/trainer.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <vector>

namespace py = pybind11;
using namespace specfuse;

namespace {

Array to_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Array out(a.size());
  const double* src = static_cast<const double*>(a.request().ptr);
  for (py::ssize_t i = 0; i < a.size(); ++i) out((Eigen::Index)i) = src[i];
  return out;
}

py::array_t<double> from_array(const Array& a) {
  // explicit strides: the size-only array_t ctor yields a stride-0 array here
  py::array_t<double> out({static_cast<py::ssize_t>(a.size())},
                          {static_cast<py::ssize_t>(sizeof(double))});
  double* dst = static_cast<double*>(out.request().ptr);
  for (Eigen::Index i = 0; i < a.size(); ++i) dst[i] = a(i);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multimodal diffusion-fusion patch classifier core";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_readonly("beta", &DiffusionSchedule::beta)
      .def_readonly("alpha_bar", &DiffusionSchedule::alpha_bar)
      .def_property_readonly("T", &DiffusionSchedule::T);

  m.def("make_schedule", &make_schedule, py::arg("T"), py::arg("beta_start") = 1e-4,
        py::arg("beta_end") = 0.02);

  m.def(
      "forward_diffuse",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x0, int t,
         py::array_t<double, py::array::c_style | py::array::forcecast> noise,
         const DiffusionSchedule& sched) {
        if (x0.size() != noise.size())
          throw DataError("x0 and noise must have the same size");
        return from_array(forward_diffuse(to_array(x0), t, to_array(noise), sched));
      },
      py::arg("x0"), py::arg("t"), py::arg("noise"), py::arg("schedule"));

  py::class_<BPEVocab>(m, "BPEVocab")
      .def_property_readonly("vocab_size", &BPEVocab::vocab_size)
      .def_readonly("merges", &BPEVocab::merges)
      .def("save", &BPEVocab::save)
      .def_static("load", &BPEVocab::load);

  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("target_size"));
  m.def(
      "tokenize",
      [](const std::string& text, const BPEVocab& vocab) {
        TokenSequence seq = tokenize(text, vocab);
        return std::vector<int>(seq.ids.begin(), seq.ids.end());
      },
      py::arg("text"), py::arg("vocab"));
  m.def(
      "detokenize",
      [](const std::vector<int>& ids, const BPEVocab& vocab) {
        TokenSequence seq;
        if (ids.size() != (size_t)kMaxTokens)
          throw DataError("token sequence must have length 77");
        std::copy(ids.begin(), ids.end(), seq.ids.begin());
        seq.valid_len = kMaxTokens;
        for (int i = 0; i < kMaxTokens; ++i)
          if (seq.ids[(size_t)i] == kEotId) {
            seq.valid_len = i + 1;
            break;
          }
        return detokenize(seq, vocab);
      },
      py::arg("ids"), py::arg("vocab"));

  m.def(
      "evaluate_map",
      [](const std::vector<int32_t>& pred, const std::vector<int32_t>& truth, int C) {
        MetricsReport r = evaluate(pred, truth, C);
        py::dict d;
        d["oa"] = r.oa;
        d["aa"] = r.aa;
        d["kappa"] = r.kappa;
        d["ca"] = r.ca;
        d["confusion"] = r.confusion;
        d["warnings"] = r.warnings;
        return d;
      },
      py::arg("pred"), py::arg("truth"), py::arg("num_classes"));

  m.def(
      "metrics_from_confusion",
      [](const std::vector<int64_t>& cm, int C) {
        MetricsReport r = metrics_from_confusion(cm, C);
        py::dict d;
        d["oa"] = r.oa;
        d["aa"] = r.aa;
        d["kappa"] = r.kappa;
        d["ca"] = r.ca;
        return d;
      },
      py::arg("confusion"), py::arg("num_classes"));

  m.def("max_tokens", [] { return kMaxTokens; });
  m.def("pad_id", [] { return kPadId; });
  m.def("sot_id", [] { return kSotId; });
  m.def("eot_id", [] { return kEotId; });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv;
        argv.push_back("specfuse");
        for (const auto& a : args) argv.push_back(a.c_str());
        return run_cli((int)argv.size(), argv.data());
      },
      py::arg("args"), "Run the command-line pipeline; returns the exit code.");
}
