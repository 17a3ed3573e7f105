#include "fairsearch/grad_check.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>

#include "fairsearch/data.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/ops.hpp"
#include "fairsearch/supernet.hpp"

namespace fairsearch {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

double grad_check(const TensorProgram& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true);
    Var y = f(tape, xv);
    tape.backward(y);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.leaf(at, false)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = eval(probe);
    probe[i] = orig - h;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

namespace {

using Program = std::pair<TensorProgram, Tensor>;

// Contracts an output with a fixed random tensor so that every output
// coordinate reaches the scalar loss with its own weight.
Var project(Var y, std::uint64_t seed) {
  Tensor r = random_tensor(y.shape(), derive_seed(seed, 0x9e0));
  return sum(mul(y, y.tape().constant(std::move(r))));
}

// Distinct values at least 0.05 apart in random order: no ties and no
// entry within 0.025 of zero, so max/relu kinks stay out of reach of h.
Tensor separated_tensor(const Shape& shape, std::uint64_t seed) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = 0.05 * (static_cast<double>(i) - static_cast<double>(n / 2)) + 0.025;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor(shape, std::move(v));
}

GradCheckCase unary(std::string name, Shape shape, std::function<Var(Var)> op,
                    bool separated = false) {
  return {std::move(name), [shape, op, separated](std::uint64_t seed) -> Program {
            Tensor x = separated ? separated_tensor(shape, seed) : random_tensor(shape, seed);
            return {[op, seed](Tape&, Var v) { return project(op(v), seed); }, std::move(x)};
          }};
}

// Checks input `which` of a binary op; the other input is a fixed constant.
GradCheckCase binary(std::string name, Shape a_shape, Shape b_shape, int which,
                     std::function<Var(Var, Var)> op) {
  return {std::move(name), [=](std::uint64_t seed) -> Program {
            Tensor a = random_tensor(a_shape, derive_seed(seed, 1));
            Tensor b = random_tensor(b_shape, derive_seed(seed, 2));
            Tensor x = which == 0 ? a : b;
            Tensor fixed = which == 0 ? b : a;
            return {[op, fixed, which, seed](Tape& t, Var v) {
                      Var c = t.constant(fixed);
                      return project(which == 0 ? op(v, c) : op(c, v), seed);
                    },
                    std::move(x)};
          }};
}

GradCheckCase ternary(std::string name, std::array<Shape, 3> shapes, int which,
                      std::function<Var(Var, Var, Var)> op, std::array<double, 3> offsets = {}) {
  return {std::move(name), [=](std::uint64_t seed) -> Program {
            std::array<Tensor, 3> in;
            for (int k = 0; k < 3; ++k) {
              in[k] = random_tensor(shapes[k], derive_seed(seed, 10 + k));
              for (auto& v : in[k].data()) v += offsets[k];
            }
            Tensor x = in[which];
            return {[op, in, which, seed](Tape& t, Var v) {
                      std::array<Var, 3> args;
                      for (int k = 0; k < 3; ++k) args[k] = k == which ? v : t.constant(in[k]);
                      return project(op(args[0], args[1], args[2]), seed);
                    },
                    std::move(x)};
          }};
}

}  // namespace

std::vector<GradCheckCase> primitive_grad_cases() {
  std::vector<GradCheckCase> cases;
  const Conv2dParams strided{2, 1, 1, 1};
  const Conv2dParams depthwise_dilated{1, 2, 2, 4};
  cases.push_back(binary("conv2d/input", {2, 3, 5, 5}, {4, 3, 3, 3}, 0,
                         [=](Var x, Var w) { return conv2d(x, w, strided); }));
  cases.push_back(binary("conv2d/weight", {2, 3, 5, 5}, {4, 3, 3, 3}, 1,
                         [=](Var x, Var w) { return conv2d(x, w, strided); }));
  cases.push_back(binary("conv2d_depthwise_dilated/input", {2, 4, 6, 6}, {4, 1, 3, 3}, 0,
                         [=](Var x, Var w) { return conv2d(x, w, depthwise_dilated); }));
  cases.push_back(binary("conv2d_depthwise_dilated/weight", {2, 4, 6, 6}, {4, 1, 3, 3}, 1,
                         [=](Var x, Var w) { return conv2d(x, w, depthwise_dilated); }));
  cases.push_back(unary("pool2d_max", {2, 2, 5, 5},
                        [](Var x) { return pool2d(x, PoolKind::max, 3, 2, 1); }, true));
  cases.push_back(unary("pool2d_avg", {2, 2, 5, 5},
                        [](Var x) { return pool2d(x, PoolKind::avg, 3, 1, 1); }));
  const std::array<Shape, 3> bn_shapes{Shape{3, 2, 3, 3}, Shape{2}, Shape{2}};
  auto bn = [](Var x, Var g, Var b) { return batch_norm2d(x, g, b); };
  cases.push_back(ternary("batch_norm2d/input", bn_shapes, 0, bn, {0.0, 1.0, 0.0}));
  cases.push_back(ternary("batch_norm2d/gamma", bn_shapes, 1, bn, {0.0, 1.0, 0.0}));
  cases.push_back(ternary("batch_norm2d/beta", bn_shapes, 2, bn, {0.0, 1.0, 0.0}));
  const std::array<Shape, 3> lin_shapes{Shape{3, 4}, Shape{4, 2}, Shape{2}};
  auto lin = [](Var x, Var w, Var b) { return linear(x, w, b); };
  cases.push_back(ternary("linear/input", lin_shapes, 0, lin));
  cases.push_back(ternary("linear/weight", lin_shapes, 1, lin));
  cases.push_back(ternary("linear/bias", lin_shapes, 2, lin));
  cases.push_back(unary("relu", {3, 7}, [](Var x) { return relu(x); }, true));
  cases.push_back(unary("sigmoid", {3, 7}, [](Var x) { return sigmoid(x); }));
  cases.push_back(unary("softmax_lastdim", {3, 7}, [](Var x) { return softmax(x); }));
  cases.push_back(binary("add", {2, 5}, {2, 5}, 0, [](Var a, Var b) { return add(a, b); }));
  cases.push_back(binary("mul", {2, 5}, {2, 5}, 1, [](Var a, Var b) { return mul(a, b); }));
  cases.push_back(unary("scale", {4}, [](Var x) { return scale(x, -1.7); }));
  cases.push_back(unary("mean", {2, 3}, [](Var x) { return mean(x); }));
  cases.push_back(unary("global_avg_pool", {2, 3, 3, 2}, [](Var x) { return global_avg_pool(x); }));
  cases.push_back(unary("crop_leading", {1, 2, 4, 4}, [](Var x) { return crop_leading(x, 1); }));
  cases.push_back(unary("select_row", {3, 4}, [](Var x) { return select_row(x, 1); }));
  cases.push_back(unary("gather_cols", {3, 4}, [](Var x) {
    const std::array<std::size_t, 2> cols{3, 0};
    return gather_cols(x, cols);
  }));
  cases.push_back(binary("concat_channels", {2, 1, 3, 3}, {2, 2, 3, 3}, 0, [](Var a, Var b) {
    const std::array<Var, 2> parts{a, b};
    return concat_channels(parts);
  }));
  cases.push_back(binary("weighted_sum/gates", {3}, {2, 4}, 0, [](Var g, Var t) {
    // Term 1 is undefined (a zero output); term 2 reuses the same tensor.
    const std::array<Var, 3> terms{t, Var{}, mul(t, t)};
    return weighted_sum(terms, g);
  }));
  cases.push_back(binary("weighted_sum/terms", {3}, {2, 4}, 1, [](Var g, Var t) {
    const std::array<Var, 3> terms{t, Var{}, mul(t, t)};
    return weighted_sum(terms, g);
  }));
  cases.push_back({"cross_entropy", [](std::uint64_t seed) -> Program {
                     const std::vector<int> labels{2, 0, 1, 2};
                     return {[labels](Tape&, Var z) { return cross_entropy(z, labels); },
                             random_tensor({4, 3}, seed, -2.0, 2.0)};
                   }});
  cases.push_back(unary("zero_one_loss", {2, 8}, [](Var a) { return zero_one_loss(a); }, true));
  cases.push_back(binary("cross_correlation/za", {6, 3}, {6, 3}, 0,
                         [](Var a, Var b) { return cross_correlation(a, b, false); }));
  cases.push_back(binary("cross_correlation/zb", {6, 3}, {6, 3}, 1,
                         [](Var a, Var b) { return cross_correlation(a, b, false); }));
  cases.push_back(binary("cross_correlation_centered/za", {6, 3}, {6, 3}, 0,
                         [](Var a, Var b) { return cross_correlation(a, b, true); }));
  cases.push_back({"barlow_twins_loss", [](std::uint64_t seed) -> Program {
                     return {[](Tape&, Var c) { return barlow_twins_loss(c, 5e-3); },
                             random_tensor({4, 4}, seed)};
                   }});
  cases.push_back({"composite_conv_bn_relu_pool_linear", [](std::uint64_t seed) -> Program {
                     const Tensor w = random_tensor({3, 2, 3, 3}, derive_seed(seed, 3));
                     const Tensor gamma = random_tensor({3}, derive_seed(seed, 4), 0.5, 1.5);
                     const Tensor beta = random_tensor({3}, derive_seed(seed, 5));
                     const Tensor lw = random_tensor({3, 2}, derive_seed(seed, 6));
                     const std::vector<int> labels{1, 0};
                     return {[=](Tape& t, Var x) {
                               Var y = conv2d(x, t.constant(w), {1, 1, 1, 1});
                               y = relu(batch_norm2d(y, t.constant(gamma), t.constant(beta)));
                               y = pool2d(y, PoolKind::max, 3, 2, 1);
                               return cross_entropy(linear(global_avg_pool(y), t.constant(lw)), labels);
                             },
                             random_tensor({2, 2, 4, 4}, seed)};
                   }});
  return cases;
}

namespace {

SupernetConfig tiny_config() {
  SupernetConfig cfg;
  cfg.num_cells = 1;
  cfg.init_channels = 2;
  cfg.num_classes = 3;
  cfg.image_size = 4;
  cfg.embedding_dim = 3;
  return cfg;
}

enum class Target { alpha_normal, alpha_reduce, weight };

GradCheckCase network_case(std::string name, Gating gating, Target target, bool projection,
                           std::string param = {}) {
  return {std::move(name), [=](std::uint64_t seed) -> Program {
            SupernetConfig cfg = tiny_config();
            auto net = std::make_shared<NetworkWeights>(build_supernet(cfg, seed));
            ArchParams arch;
            arch.normal = random_tensor(arch.normal.shape(), derive_seed(seed, 21));
            arch.reduce = random_tensor(arch.reduce.shape(), derive_seed(seed, 22));
            const Tensor images = random_tensor({3, 3, 4, 4}, derive_seed(seed, 23));
            const Tensor images_b = random_tensor({3, 3, 4, 4}, derive_seed(seed, 24));
            const std::vector<int> labels{0, 2, 1};
            Tensor x = target == Target::alpha_normal   ? arch.normal
                       : target == Target::alpha_reduce ? arch.reduce
                                                        : net->params.at(param);
            TensorProgram f = [=](Tape& t, Var v) {
              const bool wgrad = target == Target::weight;
              auto run = [&](const Tensor& imgs) {
                Binding b = bind(t, *net, &arch, imgs, false, false);
                if (target == Target::alpha_normal) b.alpha_normal = v;
                if (target == Target::alpha_reduce) b.alpha_reduce = v;
                if (wgrad) b.params[net->params.index_of(param)] = v;
                return projection ? forward_projection(*net, b, gating)
                                  : forward_supervised(*net, b, gating);
              };
              if (!projection) return cross_entropy(run(images), labels);
              return barlow_twins_loss(cross_correlation(run(images), run(images_b)), 5e-3);
            };
            return {std::move(f), std::move(x)};
          }};
}

}  // namespace

std::vector<GradCheckCase> network_grad_cases() {
  // num_cells = 1 puts the only cell at a reduction position.
  return {
      network_case("supernet/alpha_softmax", Gating::softmax, Target::alpha_reduce, false),
      network_case("supernet/alpha_sigmoid", Gating::sigmoid, Target::alpha_reduce, false),
      network_case("supernet/alpha_projection", Gating::sigmoid, Target::alpha_reduce, true),
      network_case("supernet/stem_weight", Gating::softmax, Target::weight, false, "stem.conv"),
      network_case("supernet/sep_conv_weight", Gating::softmax, Target::weight, false,
                   "cells.0.edge4.sep_conv_3x3.pw1"),
      network_case("supernet/projector_weight", Gating::sigmoid, Target::weight, true,
                   "projector.fc1.weight"),
  };
}

std::vector<GradCheckResult> run_grad_checks(const std::vector<GradCheckCase>& cases, int seeds,
                                             double tolerance, double h) {
  std::vector<GradCheckResult> results;
  for (const auto& c : cases) {
    GradCheckResult r;
    r.name = c.name;
    for (int s = 0; s < seeds; ++s) {
      auto [f, x] = c.make(derive_seed(0xc0ffee, static_cast<std::uint64_t>(s)));
      r.max_rel_error = std::max(r.max_rel_error, grad_check(f, x, h));
      ++r.seeds;
    }
    r.passed = r.max_rel_error <= tolerance && std::isfinite(r.max_rel_error);
    results.push_back(r);
  }
  return results;
}

bool print_grad_report(std::ostream& os, const std::vector<GradCheckResult>& results) {
  bool all = true;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(40) << r.name
       << " seeds=" << r.seeds << " max_rel_err=" << std::scientific << std::setprecision(3)
       << r.max_rel_error << std::defaultfloat << "\n";
    all = all && r.passed;
  }
  return all;
}

}  // namespace fairsearch
