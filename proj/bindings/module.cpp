#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "parformer/blocks.hpp"
#include "parformer/checkpoint.hpp"
#include "parformer/gradcheck.hpp"
#include "parformer/integrators.hpp"
#include "parformer/network.hpp"
#include "parformer/rng.hpp"
#include "parformer/tensor.hpp"

namespace py = pybind11;
using namespace parformer;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
  Shape shape(static_cast<size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape[static_cast<size_t>(i)] = static_cast<int64_t>(arr.shape(i));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

/// Thin ownership wrapper so Python holds a whole network by value.
struct Model {
  Network net;

  Model(const std::string& config_json, uint64_t seed)
      : net(build_network(config_from_json(config_json), seed)) {}
  explicit Model(Network n) : net(std::move(n)) {}

  int64_t param_count() const { return net.param_count(); }
  std::string config_json() const { return config_to_json(net.cfg); }

  py::array_t<double> forward_classify(const DoubleArray& images) const {
    return array_from(net.forward_classify(tensor_from(images)));
  }
  py::array_t<double> forward_lm(const std::vector<std::vector<int>>& tokens) const {
    return array_from(net.forward_lm(tokens));
  }
  void save(const std::string& path) const { save_checkpoint(path, net); }
  static Model load(const std::string& path) { return Model(load_checkpoint(path)); }
};

py::dict order_probe(int dim, int heads, const std::string& scheme, uint64_t seed) {
  // Same frozen-field construction as the CLI's order-check: training-scale
  // weights are too flat to measure, 0.35 sits mid-band.
  std::mt19937_64 rng(mix_seed(seed, 0x6f726463, 0));
  BlockParams p = random_block_params(dim, heads, 2 * dim, true, false, rng, 0.35);
  BlockConfig bc;
  bc.variant = BlockVariant::parallel;
  bc.norm_variant = NormVariant::A;
  std::vector<double> v(static_cast<size_t>(3 * dim));
  for (double& x : v) x = 0.8 * normal01(rng);
  const Tensor x0 = Tensor::from_data({3, dim}, std::move(v));
  const OrderResult r =
      measure_order(vector_field_of_block(p, bc), x0, scheme_from_string(scheme));
  py::dict out;
  out["slope"] = r.slope;
  out["exact"] = r.exact;
  out["step_sizes"] = std::vector<double>(r.step_sizes.begin(), r.step_sizes.end());
  out["errors"] = std::vector<double>(r.errors.begin(), r.errors.end());
  return out;
}

py::dict gradcheck_py(const std::string& scope, int seeds) {
  const SuiteReport r = run_gradcheck(scope, seeds);
  double worst = 0.0;
  for (const GradCheckReport& g : r.reports) worst = std::max(worst, g.max_rel_err);
  py::dict out;
  out["pass"] = r.pass;
  out["checks"] = r.reports.size();
  out["worst_rel_err"] = worst;
  out["summary"] = r.summary();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Side-by-side residual transformer blocks, fixed-step ODE integrators, and a "
            "tape-autodiff training core (f64, deterministic).";

  m.def("share_map", &share_map, py::arg("depth"), py::arg("k"),
        "Layer index -> parameter set index; k consecutive groups of depth/k layers.");
  m.def(
      "gelu", [](const DoubleArray& x) { return array_from(gelu(tensor_from(x))); }, py::arg("x"),
      "Exact-erf GELU, elementwise.");
  m.def(
      "softmax_rows",
      [](const DoubleArray& x) { return array_from(softmax_rows(tensor_from(x))); }, py::arg("x"),
      "Row-wise softmax of a 2-d array.");
  m.def(
      "layer_norm",
      [](const DoubleArray& x, const DoubleArray& gamma, const DoubleArray& beta, double eps) {
        return array_from(layer_norm(tensor_from(x), tensor_from(gamma), tensor_from(beta), eps));
      },
      py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5,
      "Row-wise layer normalization with affine gain/shift.");

  m.def(
      "preset_config", [](const std::string& name) { return config_to_json(preset(name)); },
      py::arg("name"), "Named configuration (deit_ti | nlp_small) as a JSON string.");
  m.def(
      "default_config", [] { return config_to_json(NetworkConfig{}); },
      "The default configuration as a JSON string; edit fields and pass to Model.");

  m.def("gradcheck", &gradcheck_py, py::arg("scope") = "all", py::arg("seeds") = 3,
        "Finite-difference gradient verification. scope: ops|block|network|rk4|all.");
  m.def("measure_block_order", &order_probe, py::arg("dim") = 4, py::arg("heads") = 2,
        py::arg("scheme") = "rk4", py::arg("seed") = 2,
        "Convergence-order probe on a frozen random block vector field.");

  py::class_<Model>(m, "Model",
                    "A built network: patch-embedding classifier or byte-level causal LM.")
      .def(py::init<const std::string&, uint64_t>(), py::arg("config_json"), py::arg("seed") = 0)
      .def("param_count", &Model::param_count)
      .def("config_json", &Model::config_json)
      .def("forward_classify", &Model::forward_classify, py::arg("images"),
           "Logits [B x num_classes] for a [B x C x S x S] pixel batch in [0,1].")
      .def("forward_lm", &Model::forward_lm, py::arg("tokens"),
           "Logits [B x L x V] for equal-length token rows; causal throughout.")
      .def("save", &Model::save, py::arg("path"))
      .def_static("load", &Model::load, py::arg("path"));
}
