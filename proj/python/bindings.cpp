// Python bindings: array-level ops, packing, theory constructions and the run commands.

#include <cstring>
#include <iostream>
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mpt/binpack.hpp"
#include "mpt/biprop.hpp"
#include "mpt/commands.hpp"
#include "mpt/estimators.hpp"
#include "mpt/ops.hpp"
#include "mpt/theory.hpp"

namespace py = pybind11;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

mpt::Tensor to_tensor(const FArray& a) {
  mpt::Shape shape(a.shape(), a.shape() + a.ndim());
  return mpt::Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const mpt::Tensor& t) {
  py::array_t<float> out(t.shape());
  std::memcpy(out.mutable_data(), t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(float));
  return out;
}

std::span<const float> span_of(const FArray& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::array_t<std::uint64_t> words(const std::vector<std::uint64_t>& v, std::int64_t rows, std::int64_t wpr) {
  py::array_t<std::uint64_t> out({rows, wpr});
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(std::uint64_t));
  return out;
}

py::dict cert_dict(const mpt::theory::ExistenceCert& c) {
  py::dict d;
  d["stage"] = c.stage;
  d["success"] = c.success;
  d["measured_error"] = c.measured_error;
  d["error_method"] = c.error_method;
  d["corner_error"] = c.corner_error;
  d["component_errors"] = c.component_errors;
  d["c_values"] = c.c_values;
  d["sparsity"] = c.sparsity;
  d["sparsity_tilde"] = c.sparsity_tilde;
  d["sparsity_bound"] = c.sparsity_bound;
  d["sparsity_ok"] = c.sparsity_ok;
  d["k"] = c.k;
  d["width_bound"] = c.width_bound_used;
  d["depth"] = c.depth();
  d["seed"] = c.seed;
  return d;
}

mpt::theory::CommonParams common(double eps, double delta, std::int64_t s, std::int64_t k, std::uint64_t seed) {
  mpt::theory::CommonParams p;
  p.eps = eps;
  p.delta = delta;
  p.s = s;
  p.k = k;
  p.seed = seed;
  return p;
}

mpt::theory::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw mpt::DimensionError("expected a 2-D matrix");
  mpt::theory::Matrix m(a.shape(0), a.shape(1));
  std::memcpy(m.v.data(), a.data(), m.v.size() * sizeof(double));
  return m;
}

py::dict report_dict(const mpt::EpochReport& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["lr"] = r.lr;
  d["train_loss"] = r.train_loss;
  d["train_top1"] = r.train_top1;
  d["test_top1"] = r.test_top1;
  d["alpha"] = r.alpha;
  d["zeros"] = r.zeros;
  return d;
}

mpt::RunConfig resolve(const std::string& preset, const std::string& config, const std::vector<std::string>& overrides,
                       std::optional<std::uint64_t> seed, const std::string& out) {
  mpt::ConfigSources src;
  src.preset = preset;
  src.config_path = config;
  src.overrides = overrides;
  src.seed = seed;
  src.out_dir = out;
  return mpt::resolve_config(src);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary subnetwork search on frozen random weights";

  py::register_exception<mpt::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<mpt::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<mpt::ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<mpt::DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<mpt::FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<mpt::PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<mpt::IoError>(m, "IoError", PyExc_OSError);

  m.def("spline_value", py::vectorize([](double x, double t) { return mpt::spline_value(x, t); }), py::arg("x"),
        py::arg("t") = 1.0);
  m.def("spline_grad", py::vectorize([](double x, double t) { return mpt::spline_grad(x, t); }), py::arg("x"),
        py::arg("t") = 1.0);
  m.def("ste_mask_grad", &mpt::ste_mask_grad<double>, py::arg("upstream"), py::arg("alpha"), py::arg("sign"),
        py::arg("input_act"), py::arg("score") = 1.0);

  m.def(
      "matmul_masked_binary",
      [](const FArray& x, float alpha, const FArray& mask, const FArray& sign) {
        return to_numpy(mpt::matmul_masked_binary(to_tensor(x), alpha, to_tensor(mask), to_tensor(sign)));
      },
      py::arg("x"), py::arg("alpha"), py::arg("mask"), py::arg("sign"), "x (alpha (M * B))^T");

  m.def("pruned_count", &mpt::pruned_count, py::arg("count"), py::arg("prune_percent"));
  m.def(
      "recompute_mask",
      [](const FArray& scores, double p) {
        auto mask = mpt::recompute_mask(span_of(scores), p);
        py::array_t<float> out(std::vector<py::ssize_t>(scores.shape(), scores.shape() + scores.ndim()));
        std::memcpy(out.mutable_data(), mask.data(), mask.size() * sizeof(float));
        return out;
      },
      py::arg("scores"), py::arg("prune_percent"));
  m.def(
      "recompute_gain", [](const FArray& mask, const FArray& w) { return mpt::recompute_gain(span_of(mask), span_of(w)); },
      py::arg("mask"), py::arg("weights"));
  m.def("cosine_lr", &mpt::cosine_lr, py::arg("base"), py::arg("epoch"), py::arg("epochs"), py::arg("warmup_epochs") = 0);

  py::class_<mpt::binpack::PackedLayer>(m, "PackedLayer")
      .def_readonly("rows", &mpt::binpack::PackedLayer::rows)
      .def_readonly("cols", &mpt::binpack::PackedLayer::cols)
      .def_readonly("words_per_row", &mpt::binpack::PackedLayer::words_per_row)
      .def_readonly("alpha", &mpt::binpack::PackedLayer::alpha)
      .def_property_readonly("sign_plane",
                             [](const mpt::binpack::PackedLayer& l) { return words(l.sign_plane, l.rows, l.words_per_row); })
      .def_property_readonly("mask_plane",
                             [](const mpt::binpack::PackedLayer& l) { return words(l.mask_plane, l.rows, l.words_per_row); })
      .def("nonzero", &mpt::binpack::PackedLayer::nonzero)
      .def("unpack", [](const mpt::binpack::PackedLayer& l) { return to_numpy(mpt::binpack::unpack(l)); })
      .def(
          "xnor_dot",
          [](const mpt::binpack::PackedLayer& l, std::int64_t row, const FArray& x) {
            return mpt::binpack::xnor_dot(l, row, mpt::binpack::pack_signs(span_of(x)));
          },
          py::arg("row"), py::arg("x"), "alpha * <M * B, x> for x in {-1,+1}")
      .def(
          "masked_signed_dot",
          [](const mpt::binpack::PackedLayer& l, std::int64_t row, const FArray& x) {
            return mpt::binpack::masked_signed_dot(l, row, span_of(x));
          },
          py::arg("row"), py::arg("x"));

  m.def(
      "pack",
      [](float alpha, const FArray& mask, const FArray& sign) {
        if (mask.ndim() != 2) throw mpt::DimensionError("mask must be [rows, cols]");
        mpt::MaskedBinaryLayer l;
        l.rows = mask.shape(0);
        l.cols = mask.shape(1);
        l.alpha = alpha;
        l.mask = to_tensor(mask);
        l.sign = to_tensor(sign);
        if (l.sign.shape() != l.mask.shape()) throw mpt::DimensionError("mask and sign shapes differ");
        return mpt::binpack::pack(l);
      },
      py::arg("alpha"), py::arg("mask"), py::arg("sign"));

  auto th = m.def_submodule("theory", "Existence constructions and width bounds");
  th.def("lemma1_width_bound", &mpt::theory::lemma1_width_bound);
  th.def("lemma2_width_bound", &mpt::theory::lemma2_width_bound);
  th.def("lemma3_width_bound", &mpt::theory::lemma3_width_bound);
  th.def("theorem_width_bound", &mpt::theory::theorem_width_bound);
  th.def(
      "lemma1_construct",
      [](double alpha, double eps, double delta, std::int64_t s, std::int64_t k, std::uint64_t seed) {
        mpt::theory::Lemma1Instance inst;
        inst.p = common(eps, delta, s, k, seed);
        inst.alpha = alpha;
        return cert_dict(mpt::theory::lemma1_construct(inst));
      },
      py::arg("alpha"), py::arg("eps") = 0.5, py::arg("delta") = 0.3, py::arg("s") = 1, py::arg("k") = 0,
      py::arg("seed") = 0);
  th.def(
      "lemma2_construct",
      [](std::vector<double> w, double eps, double delta, std::int64_t s, std::int64_t k, std::uint64_t seed) {
        mpt::theory::Lemma2Instance inst;
        inst.p = common(eps, delta, s, k, seed);
        inst.w = std::move(w);
        return cert_dict(mpt::theory::lemma2_construct(inst));
      },
      py::arg("w"), py::arg("eps") = 0.5, py::arg("delta") = 0.3, py::arg("s") = 1, py::arg("k") = 0,
      py::arg("seed") = 0);
  th.def(
      "theorem_construct",
      [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& ws, double eps,
         double delta, std::int64_t s, std::int64_t k, std::uint64_t seed, std::int64_t samples) {
        mpt::theory::TheoremInstance inst;
        inst.p = common(eps, delta, s, k, seed);
        for (const auto& w : ws) inst.W.push_back(to_matrix(w));
        inst.samples = samples;
        return cert_dict(mpt::theory::theorem_construct(inst));
      },
      py::arg("weights"), py::arg("eps") = 0.5, py::arg("delta") = 0.3, py::arg("s") = 1, py::arg("k") = 0,
      py::arg("seed") = 0, py::arg("samples") = 2000);

  m.def(
      "resolve_config",
      [](const std::string& preset, const std::string& config, const std::vector<std::string>& overrides,
         std::optional<std::uint64_t> seed, const std::string& out) {
        return resolve(preset, config, overrides, seed, out).doc.dump();
      },
      py::arg("preset") = "", py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      py::arg("seed") = py::none(), py::arg("out") = "", "Merged config document as a JSON string");
  m.def("list_presets", &mpt::list_presets);
  m.def(
      "find",
      [](const std::string& preset, const std::string& config, const std::vector<std::string>& overrides,
         std::optional<std::uint64_t> seed, const std::string& out, bool verbose) {
        const auto cfg = resolve(preset, config, overrides, seed, out);
        std::ostringstream sink;
        mpt::FindResult r;
        {
          py::gil_scoped_release release;
          r = mpt::cmd_find(cfg, verbose ? std::cout : sink);
        }
        py::dict d;
        d["checkpoint"] = r.checkpoint.string();
        d["metrics_csv"] = r.metrics_csv.string();
        d["config_hash"] = r.config_hash;
        py::list reps;
        for (const auto& rep : r.reports) reps.append(report_dict(rep));
        d["reports"] = reps;
        return d;
      },
      py::arg("preset") = "", py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      py::arg("seed") = py::none(), py::arg("out") = "", py::arg("verbose") = false);
  m.def(
      "evaluate",
      [](const std::string& checkpoint, std::size_t limit) {
        mpt::EvalResult r;
        {
          py::gil_scoped_release release;
          r = mpt::cmd_eval(checkpoint, std::nullopt, limit);
        }
        py::dict d;
        d["top1"] = r.top1;
        d["samples"] = r.samples;
        d["packed"] = r.packed;
        d["mode"] = r.mode;
        return d;
      },
      py::arg("checkpoint"), py::arg("limit") = 0);
  m.def(
      "pack_checkpoint",
      [](const std::string& checkpoint, const std::string& output) {
        const auto r = mpt::cmd_pack(checkpoint, output);
        py::dict d;
        d["output"] = r.output.string();
        d["input_bytes"] = r.input_bytes;
        d["output_bytes"] = r.output_bytes;
        d["mode"] = r.mode;
        return d;
      },
      py::arg("checkpoint"), py::arg("output"));
}
