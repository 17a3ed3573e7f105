#include <cmath>
#include <random>

#include "doctest.h"
#include "fairsearch/grad_check.hpp"
#include "fairsearch/ops.hpp"
#include "fairsearch/supernet.hpp"

using namespace fairsearch;

namespace {

SupernetConfig tiny(std::size_t cells = 1, bool bn = true) {
  SupernetConfig c;
  c.num_cells = cells;
  c.init_channels = 2;
  c.num_classes = 3;
  c.image_size = 4;
  c.embedding_dim = 3;
  c.batch_norm = bn;
  return c;
}

Tensor images(std::size_t n, const SupernetConfig& cfg, std::uint64_t seed) {
  return random_tensor({n, cfg.in_channels, cfg.image_size, cfg.image_size}, seed);
}

ArchParams random_arch(std::uint64_t seed) {
  ArchParams a;
  a.normal = random_tensor({CellSpec::kNumEdges, kNumOps}, seed);
  a.reduce = random_tensor({CellSpec::kNumEdges, kNumOps}, seed + 1);
  return a;
}

Tensor logits_of(const NetworkWeights& net, const ArchParams* arch, const Tensor& x, Gating g) {
  Tape t;
  Binding b = bind(t, net, arch, x, false, false);
  return forward_supervised(net, b, g).value();
}

}  // namespace

TEST_CASE("reduction positions") {
  auto positions = [](std::size_t n) {
    SupernetConfig c;
    c.num_cells = n;
    return c.reduction_positions();
  };
  CHECK(positions(8) == std::vector<std::size_t>{2, 5});
  CHECK(positions(4) == std::vector<std::size_t>{1, 2});
  CHECK(positions(3) == std::vector<std::size_t>{1, 2});
  CHECK(positions(2) == std::vector<std::size_t>{0, 1});
  CHECK(positions(1) == std::vector<std::size_t>{0});
  CHECK(positions(20) == std::vector<std::size_t>{6, 13});
  SupernetConfig c;
  CHECK(c.is_reduction(2));
  CHECK_FALSE(c.is_reduction(3));
  CHECK(positions(8).size() == 2);
}

TEST_CASE("config validation") {
  SupernetConfig c;
  c.image_size = 2;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("minimum 4"), std::invalid_argument);
  CHECK_THROWS_AS(build_supernet(c, 0), std::invalid_argument);
  c.image_size = 6;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.image_size = 16;
  CHECK_NOTHROW(c.validate());
  c.num_classes = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  SupernetConfig only_none = tiny();
  only_none.candidates = {OperationKind::none};
  CHECK_THROWS_AS(only_none.validate(), std::invalid_argument);
}

TEST_CASE("build_supernet is deterministic per seed") {
  const auto cfg = tiny(2);
  const auto a = build_supernet(cfg, 11);
  const auto b = build_supernet(cfg, 11);
  const auto c = build_supernet(cfg, 12);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == c.params);
  CHECK(a.params.at("stem.bn.gamma") == Tensor(Shape{2}, 1.0));
  CHECK(a.params.at("stem.bn.beta") == Tensor(Shape{2}, 0.0));
}

TEST_CASE("forward shapes for the 8-cell configuration") {
  SupernetConfig cfg;
  cfg.num_cells = 8;
  cfg.init_channels = 8;
  cfg.num_classes = 10;
  cfg.image_size = 16;
  cfg.embedding_dim = 5;
  const auto net = build_supernet(cfg, 1);
  const ArchParams arch = random_arch(2);
  Tape t;
  Binding b = bind(t, net, &arch, images(4, cfg, 3), false, false);
  CHECK(forward_supervised(net, b, Gating::softmax).shape() == Shape{4, 10});
  CHECK(forward_projection(net, b, Gating::sigmoid).shape() == Shape{4, 5});

  // Channels double and extents halve at cells 2 and 5 only.
  const auto trace = trace_cells(net, b, Gating::softmax);
  REQUIRE(trace.size() == 8);
  const std::size_t expect_c[] = {8, 8, 16, 16, 16, 32, 32, 32};
  const std::size_t expect_hw[] = {16, 16, 8, 8, 8, 4, 4, 4};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(trace[i].reduction == (i == 2 || i == 5));
    for (const auto& s : trace[i].node_shapes) CHECK(s == Shape{4, expect_c[i], expect_hw[i], expect_hw[i]});
    CHECK(trace[i].output_shape == Shape{4, 4 * expect_c[i], expect_hw[i], expect_hw[i]});
  }
}

TEST_CASE("forward rejects mismatched images") {
  const auto cfg = tiny();
  const auto net = build_supernet(cfg, 0);
  const auto arch = ArchParams::zeros();
  Tape t;
  Binding b = bind(t, net, &arch, Tensor(Shape{2, 3, 8, 8}), false, false);
  CHECK_THROWS_AS(forward_supervised(net, b, Gating::softmax), ShapeError);
  Tape t2;
  CHECK_THROWS_AS(bind(t2, net, nullptr, images(2, cfg, 0), false, false), std::invalid_argument);
}

TEST_CASE("softmax gating is invariant to a constant alpha shift") {
  const auto cfg = tiny(3);
  const auto net = build_supernet(cfg, 4);
  const Tensor x = images(3, cfg, 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ArchParams a = random_arch(seed);
    ArchParams s = a;
    for (auto* m : {&s.normal, &s.reduce})
      for (auto& v : m->data()) v += 3.75;
    CHECK(max_abs_diff(logits_of(net, &a, x, Gating::softmax), logits_of(net, &s, x, Gating::softmax)) <= 1e-10);
  }
}

TEST_CASE("zero images give equal logits") {
  const auto cfg = tiny(2);
  const auto net = build_supernet(cfg, 6);
  const ArchParams a = random_arch(7);
  const Tensor y = logits_of(net, &a, Tensor(Shape{2, 3, 4, 4}), Gating::sigmoid);
  for (double v : y.data()) CHECK(std::abs(v - y[0]) <= 1e-12);
}

TEST_CASE("projection is deterministic for identical images") {
  const auto cfg = tiny(2);
  const auto net = build_supernet(cfg, 8);
  const ArchParams a = random_arch(9);
  Tensor one = images(1, cfg, 10);
  Tensor pair(Shape{2, 3, 4, 4});
  for (std::size_t i = 0; i < one.size(); ++i) pair[i] = pair[i + one.size()] = one[i];
  Tape t;
  Binding b = bind(t, net, &a, pair, false, false);
  const Tensor z = forward_projection(net, b, Gating::sigmoid).value();
  for (std::size_t j = 0; j < 3; ++j) CHECK(z.at({0, j}) == z.at({1, j}));
}

TEST_CASE("network gradients match central differences") {
  const auto results = run_grad_checks(network_grad_cases(), 3, 1e-4);
  CHECK(results.size() >= 3);
  for (const auto& r : results) {
    INFO(r.name << " max rel err " << r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("alpha gradient flows for generic inputs") {
  const auto cfg = tiny(1);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto net = build_supernet(cfg, seed);
    const ArchParams a = random_arch(seed + 100);
    Tape t;
    Binding b = bind(t, net, &a, images(2, cfg, seed + 200), false, true);
    Var y = forward_supervised(net, b, Gating::softmax);
    t.backward(sum(mul(y, t.constant(random_tensor(y.shape(), seed + 300)))));
    const Tensor& g = t.grad(b.alpha_reduce);
    std::size_t nonzero = 0;
    for (double v : g.data()) nonzero += v != 0.0;
    CHECK(nonzero == g.size());
  }
}

TEST_CASE("derive_child") {
  const auto cfg = tiny(3);
  SUBCASE("empty genotype gives the classifier bias") {
    auto child = derive_child(Genotype{}, cfg, 1);
    auto& bias = child.params.at("classifier.bias");
    bias = Tensor(Shape{3}, std::vector<double>{0.25, -1.5, 3.0});
    const Tensor y = logits_of(child, nullptr, images(2, cfg, 2), Gating::softmax);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 3; ++k) CHECK(y.at({n, k}) == bias[k]);
  }
  SUBCASE("children are strictly smaller than the supernet") {
    const std::size_t full = build_supernet(cfg, 0).params.scalar_count();
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, kNumOps - 1);
    for (int trial = 0; trial < 20; ++trial) {
      Genotype g;
      for (auto& op : g.normal) op = kAllOps[pick(rng)];
      for (auto& op : g.reduce) op = kAllOps[pick(rng)];
      CHECK(derive_child(g, cfg, 0).params.scalar_count() < full);
    }
  }
  SUBCASE("ops outside the candidate set are rejected") {
    SupernetConfig small = cfg;
    small.candidates = {OperationKind::none, OperationKind::avg_pool_3x3};
    Genotype g;
    g.reduce[4] = OperationKind::sep_conv_3x3;
    CHECK_THROWS_WITH_AS(derive_child(g, small, 0), doctest::Contains("reduce edge 4"), std::invalid_argument);
    g.reduce[4] = OperationKind::avg_pool_3x3;
    CHECK_NOTHROW(derive_child(g, small, 0));
  }
  SUBCASE("initialization depends only on the seed") {
    Genotype g;
    g.normal.fill(OperationKind::sep_conv_3x3);
    CHECK(derive_child(g, cfg, 5).params == derive_child(g, cfg, 5).params);
    CHECK_FALSE(derive_child(g, cfg, 5).params == derive_child(g, cfg, 6).params);
  }
}

TEST_CASE("skip chain through one reduction cell") {
  // Single reduction cell with edges 1->2, 2->3, 3->4, 4->5 all skip_connect.
  // Node 2 is the factorized reduction of input 1 and nodes 3..5 copy it, so
  // the pooled features are four copies of the pooled node-2 map.
  const auto cfg = tiny(1, false);
  Genotype g;
  g.reduce[*CellSpec::edge_index(1, 2)] = OperationKind::skip_connect;
  g.reduce[*CellSpec::edge_index(2, 3)] = OperationKind::skip_connect;
  g.reduce[*CellSpec::edge_index(3, 4)] = OperationKind::skip_connect;
  g.reduce[*CellSpec::edge_index(4, 5)] = OperationKind::skip_connect;
  const auto net = derive_child(g, cfg, 21);
  const Tensor x = images(2, cfg, 22);

  Tape t;
  Binding b = bind(t, net, nullptr, x, false, false);
  const Tensor f = forward_features(net, b, Gating::softmax).value();
  REQUIRE(f.shape() == Shape{2, 16});

  Tape o;
  auto P = [&](const std::string& n) { return o.constant(net.params.at(n)); };
  Var stem = conv2d(o.constant(x), P("stem.conv"), {1, 1, 1, 1});
  Var in1 = conv2d(relu(stem), P("cells.0.pre1.conv"));
  Var r = relu(in1);
  const std::string pre = "cells.0.edge" + std::to_string(*CellSpec::edge_index(1, 2)) + ".skip_connect";
  const std::array<Var, 2> halves{conv2d(r, P(pre + ".conv1"), {2, 0, 1, 1}),
                                  conv2d(crop_leading(r, 1), P(pre + ".conv2"), {2, 0, 1, 1})};
  const Tensor node2 = global_avg_pool(concat_channels(halves)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t blk = 0; blk < 4; ++blk)
      for (std::size_t c = 0; c < 4; ++c) CHECK(f.at({n, blk * 4 + c}) == doctest::Approx(node2.at({n, c})).epsilon(1e-12));
}

TEST_CASE("extreme alphas reproduce the child network") {
  const auto cfg = tiny(3, false);
  std::mt19937_64 rng(30);
  std::uniform_int_distribution<std::size_t> pick(0, kNumOps - 1);
  for (int trial = 0; trial < 4; ++trial) {
    Genotype g;
    for (auto& op : g.normal) op = kAllOps[pick(rng)];
    for (auto& op : g.reduce) op = kAllOps[pick(rng)];
    const auto super = build_supernet(cfg, 40 + trial);
    auto child = derive_child(g, cfg, 50 + trial);
    CHECK(copy_matching_params(super.params, child.params) == child.params.size());
    ArchParams a;
    a.normal.fill(-50.0);
    a.reduce.fill(-50.0);
    for (std::size_t e = 0; e < CellSpec::kNumEdges; ++e) {
      a.normal.at({e, op_index(g.normal[e])}) = 50.0;
      a.reduce.at({e, op_index(g.reduce[e])}) = 50.0;
    }
    const Tensor x = images(2, cfg, 60 + trial);
    CHECK(max_abs_diff(logits_of(super, &a, x, Gating::softmax), logits_of(child, nullptr, x, Gating::softmax)) <= 1e-6);
  }
}
