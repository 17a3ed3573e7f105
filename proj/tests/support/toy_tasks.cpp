#include "toy_tasks.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>

#include "fairsearch/grad_check.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/ops.hpp"

namespace fairsearch::testkit {

namespace {

using u128 = unsigned __int128;

// Product of `factors`, or nullopt once it exceeds `limit`.
std::optional<u128> bounded_product(const std::vector<std::uint64_t>& factors, u128 limit) {
  u128 acc = 1;
  for (auto f : factors) {
    if (f != 0 && acc > limit / f) return std::nullopt;
    acc *= f;
  }
  return acc;
}

}  // namespace

std::size_t exact_exponential_count(std::size_t base, std::uint64_t p, std::uint64_t q, std::size_t i,
                                    std::size_t num_classes) {
  const std::size_t k = num_classes - 1;
  std::vector<std::uint64_t> rhs_f(k, base);
  rhs_f.insert(rhs_f.end(), i, p);
  const auto rhs = bounded_product(rhs_f, ~u128{0});
  if (!rhs) throw std::overflow_error("oracle operands exceed 128 bits");
  auto fits = [&](std::uint64_t n) {
    std::vector<std::uint64_t> f(k, n);
    f.insert(f.end(), i, q);
    const auto lhs = bounded_product(f, *rhs);
    return lhs && *lhs <= *rhs;
  };
  std::uint64_t lo = 0, hi = base;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo + 1) / 2;
    if (fits(mid)) lo = mid;
    else hi = mid - 1;
  }
  return std::max<std::size_t>(1, lo);
}

std::vector<double> zero_one_polarization(std::uint64_t seed, int steps) {
  std::mt19937_64 rng(seed);
  ArchParams a;
  std::uniform_real_distribution<double> mag(0.01, 0.1);
  for (auto* m : {&a.normal, &a.reduce})
    for (auto& v : m->data()) v = (rng() & 1) ? mag(rng) : -mag(rng);
  auto spread = [&] {
    double s = 0.0;
    for (auto* m : {&a.normal, &a.reduce})
      for (double v : m->data()) s += std::abs(1.0 / (1.0 + std::exp(-v)) - 0.5);
    return s / static_cast<double>(a.normal.size() + a.reduce.size());
  };
  Adam adam;
  std::vector<double> trace{spread()};
  for (int i = 0; i < steps; ++i) {
    Tape t;
    Var an = t.leaf(a.normal, true), ar = t.leaf(a.reduce, true);
    LossConfig cfg;
    cfg.zero_one_warmup_epochs = 0;
    Var loss = total_arch_loss(t.constant(Tensor(Shape{}, 0.0)), an, ar, cfg, Gating::sigmoid, 0);
    t.backward(loss);
    Tensor gn = t.grad(an), gr = t.grad(ar);
    Tensor* params[] = {&a.normal, &a.reduce};
    const Tensor* grads[] = {&gn, &gr};
    adam.step(params, grads);
    trace.push_back(spread());
  }
  return trace;
}

std::vector<double> linear_barlow_twins(std::uint64_t seed, int steps) {
  const std::size_t batch = 16, in = 6, dim = 4;
  const Tensor x = random_tensor({batch, in}, derive_seed(seed, 1));
  Tensor w = random_tensor({in, dim}, derive_seed(seed, 2));
  SgdMomentum sgd(0.0, 0.0);
  std::vector<double> trace;
  for (int i = 0; i < steps; ++i) {
    Tape t;
    Var wv = t.leaf(w, true);
    Var xv = t.constant(x);
    Var loss = barlow_twins_loss(cross_correlation(linear(xv, wv), linear(xv, wv)), 5e-3);
    trace.push_back(loss.value()[0]);
    t.backward(loss);
    Tensor g = t.grad(wv);
    Tensor* params[] = {&w};
    const Tensor* grads[] = {&g};
    sgd.step(params, grads, 5.0);
  }
  return trace;
}

LabeledDataset brightness_dataset(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 25.0);
  LabeledDataset ds;
  ds.height = ds.width = size;
  ds.num_classes = 2;
  ds.provenance = "brightness";
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    const double base = label == 1 ? 170.0 : 85.0;
    for (std::size_t p = 0; p < ds.image_bytes(); ++p) {
      ds.pixels.push_back(static_cast<std::uint8_t>(std::clamp(base + noise(rng), 0.0, 255.0)));
    }
    ds.labels.push_back(label);
    ds.origin.push_back(i);
  }
  return ds;
}

PoolSanity run_pool_sanity(std::uint64_t seed, int max_steps) {
  const std::size_t size = 8, batch = 16;
  const LabeledDataset ds = brightness_dataset(80, size, derive_seed(seed, 0xb));

  SupernetConfig net;
  net.num_cells = 1;
  net.init_channels = 4;
  net.num_classes = 2;
  net.image_size = size;
  net.embedding_dim = 4;
  net.candidates = {OperationKind::none, OperationKind::avg_pool_3x3};

  SearchSettings settings;
  settings.mode = SearchMode::darts;
  settings.seed = seed;
  settings.optim.batch_size = batch;
  const SearchData data = make_search_data(ds, settings.mode, 0.5, seed, size, AugmentConfig::identity());
  const int per_epoch = static_cast<int>(data.split.weight_indices.size() / batch);
  settings.optim.search_epochs = std::max(1, max_steps / per_epoch);

  SearchState st = SearchState::fresh(net, settings);
  bilevel_search(st, settings, data);

  PoolSanity out;
  out.steps = settings.optim.search_epochs * per_epoch;
  const Tensor gates = gate_values(st.arch.reduce, Gating::softmax);
  for (std::size_t e = 0; e < CellSpec::kNumEdges; ++e) {
    out.pool_gate.push_back(gates.at({e, op_index(OperationKind::avg_pool_3x3)}));
    out.none_gate.push_back(gates.at({e, op_index(OperationKind::none)}));
  }
  return out;
}

}  // namespace fairsearch::testkit
