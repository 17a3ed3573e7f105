#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fairsearch/data.hpp"
#include "fairsearch/genotype_io.hpp"
#include "fairsearch/grad_check.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/optim.hpp"
#include "fairsearch/search_space.hpp"
#include "fairsearch/tape.hpp"

namespace py = pybind11;
using namespace fairsearch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor require_matrix(const Array& a, const char* name) {
  if (a.ndim() != 2) throw std::invalid_argument(std::string(name) + " must be 2-D");
  return to_tensor(a);
}

Gating gating_arg(const std::string& name) {
  auto g = gating_from_name(name);
  if (!g) throw std::invalid_argument("unknown gating '" + name + "'");
  return *g;
}

std::pair<double, Array> value_and_grad(Tape& t, Var x, Var loss) {
  t.backward(loss);
  return {loss.value()[0], to_array(t.grad(x))};
}

std::pair<double, Array> py_cross_entropy(const Array& logits, const std::vector<int>& labels) {
  Tape t;
  Var x = t.leaf(require_matrix(logits, "logits"), true);
  return value_and_grad(t, x, cross_entropy(x, labels));
}

std::pair<double, Array> py_zero_one(const Array& alpha) {
  Tape t;
  Var x = t.leaf(to_tensor(alpha), true);
  return value_and_grad(t, x, zero_one_loss(x));
}

Array py_cross_correlation(const Array& za, const Array& zb, bool mean_center) {
  Tape t;
  Var c = cross_correlation(t.constant(require_matrix(za, "za")),
                            t.constant(require_matrix(zb, "zb")), mean_center);
  return to_array(c.value());
}

std::pair<double, Array> py_barlow_twins(const Array& c, double lambda) {
  Tape t;
  Var x = t.leaf(require_matrix(c, "c"), true);
  return value_and_grad(t, x, barlow_twins_loss(x, lambda));
}

ArchParams arch_from(const Array& normal, const Array& reduce) {
  ArchParams a;
  a.normal = require_matrix(normal, "normal");
  a.reduce = require_matrix(reduce, "reduce");
  const Shape want{CellSpec::kNumEdges, kNumOps};
  if (a.normal.shape() != want || a.reduce.shape() != want)
    throw ShapeError("alpha must be " + shape_to_string(want));
  return a;
}

std::string py_discretize(const Array& normal, const Array& reduce, const std::string& rule,
                          double threshold, const std::vector<std::string>& candidates,
                          const std::string& gating) {
  DiscretizeOptions opts;
  auto r = rule_from_name(rule);
  if (!r) throw std::invalid_argument("unknown discretize rule '" + rule + "'");
  opts.rule = *r;
  opts.threshold = threshold;
  for (const auto& name : candidates) {
    auto op = op_from_name(name);
    if (!op) throw std::invalid_argument("unknown op '" + name + "'");
    opts.candidates.push_back(*op);
  }
  Genotype g = discretize(arch_from(normal, reduce), opts);
  g.gating_mode = std::string(gating_name(gating_arg(gating)));
  return genotype_serialize(g);
}

py::list py_grad_check(const std::string& scope, int seeds, double tolerance) {
  std::vector<GradCheckCase> cases;
  if (scope == "primitive" || scope == "all") cases = primitive_grad_cases();
  if (scope == "network" || scope == "all") {
    auto net = network_grad_cases();
    cases.insert(cases.end(), net.begin(), net.end());
  }
  if (cases.empty()) throw std::invalid_argument("scope must be primitive, network or all");
  py::list out;
  for (const auto& r : run_grad_checks(cases, seeds, tolerance)) {
    py::dict d;
    d["name"] = r.name;
    d["max_rel_error"] = r.max_rel_error;
    d["seeds"] = r.seeds;
    d["passed"] = r.passed;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_fairsearch, m) {
  m.doc() = "Differentiable architecture search primitives";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  m.attr("NUM_EDGES") = CellSpec::kNumEdges;
  m.attr("NUM_OPS") = kNumOps;
  py::list ops;
  for (std::size_t i = 0; i < kNumOps; ++i) ops.append(std::string(op_name(static_cast<OperationKind>(i))));
  m.attr("OPS") = ops;

  m.def("class_counts",
        [](const std::string& profile, double mu, std::size_t base_count, std::size_t num_classes) {
          auto kind = profile_from_name(profile);
          if (!kind) throw std::invalid_argument("unknown profile '" + profile + "'");
          return class_counts(ImbalanceProfile{*kind, mu, base_count, num_classes});
        },
        py::arg("profile"), py::arg("mu") = 1.0, py::arg("base_count") = 5000,
        py::arg("num_classes") = 10);
  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("total_epochs"),
        py::arg("lr_max") = 0.025, py::arg("lr_min") = 0.001);

  m.def("cross_entropy", &py_cross_entropy, py::arg("logits"), py::arg("labels"),
        "Mean cross-entropy; returns (value, d/dlogits).");
  m.def("zero_one_loss", &py_zero_one, py::arg("alpha"),
        "-mean |sigmoid(a) - 0.5|; returns (value, d/dalpha).");
  m.def("cross_correlation", &py_cross_correlation, py::arg("za"), py::arg("zb"),
        py::arg("mean_center") = false);
  m.def("barlow_twins_loss", &py_barlow_twins, py::arg("c"), py::arg("lambda_") = 5e-3,
        "Returns (value, d/dc).");
  m.def("gate_values",
        [](const Array& alpha, const std::string& gating) {
          return to_array(gate_values(require_matrix(alpha, "alpha"), gating_arg(gating)));
        },
        py::arg("alpha"), py::arg("gating") = "softmax");

  m.def("discretize", &py_discretize, py::arg("normal"), py::arg("reduce"),
        py::arg("rule") = "argmax", py::arg("threshold") = 0.5,
        py::arg("candidates") = std::vector<std::string>{}, py::arg("gating") = "softmax",
        "Genotype JSON text for the given alpha matrices.");
  m.def("genotype_normalize", [](const std::string& text) { return genotype_serialize(genotype_parse(text)); },
        py::arg("text"));
  m.def("genotype_dot",
        [](const std::string& text, const std::string& cell) {
          if (cell != "normal" && cell != "reduce") throw std::invalid_argument("cell must be normal or reduce");
          return genotype_to_dot(genotype_parse(text), cell == "normal" ? CellKind::normal : CellKind::reduce);
        },
        py::arg("text"), py::arg("cell") = "normal");

  m.def("grad_check", &py_grad_check, py::arg("scope") = "primitive", py::arg("seeds") = 3,
        py::arg("tolerance") = 1e-4);
}
