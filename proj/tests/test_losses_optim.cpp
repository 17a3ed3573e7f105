#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "fairsearch/grad_check.hpp"
#include "fairsearch/losses.hpp"
#include "fairsearch/ops.hpp"
#include "fairsearch/optim.hpp"
#include "fairsearch/train.hpp"
#include "support/toy_tasks.hpp"

using namespace fairsearch;

namespace {

double ce_value(const Tensor& logits, const std::vector<int>& labels) {
  Tape t;
  return cross_entropy(t.constant(logits), labels).value()[0];
}

double z01_value(const Tensor& alpha) {
  Tape t;
  return zero_one_loss(t.constant(alpha)).value()[0];
}

Tensor corr(const Tensor& a, const Tensor& b, bool center = false) {
  Tape t;
  return cross_correlation(t.constant(a), t.constant(b), center).value();
}

double bt_value(const Tensor& c, double lambda) {
  Tape t;
  return barlow_twins_loss(t.constant(c), lambda).value()[0];
}

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor(Shape{r, c}, std::move(v)); }

long double sigmoid_ld(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

void sgd_step(SgdMomentum& opt, Tensor& w, const Tensor& g, double lr) {
  Tensor* p[] = {&w};
  const Tensor* gs[] = {&g};
  opt.step(p, gs, lr);
}

void adam_step(Adam& opt, Tensor& w, const Tensor& g) {
  Tensor* p[] = {&w};
  const Tensor* gs[] = {&g};
  opt.step(p, gs);
}

}  // namespace

TEST_CASE("cross_entropy") {
  CHECK(ce_value(Tensor(Shape{3, 10}, 0.4), {0, 4, 9}) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  CHECK(std::abs(ce_value(Tensor(Shape{3, 10}, 0.0), {1, 2, 3}) - 2.302585) < 1e-6);

  Tensor confident(Shape{2, 4}, 0.0);
  confident.at({0, 2}) = 50.0;
  confident.at({1, 0}) = 50.0;
  CHECK(ce_value(confident, {2, 0}) <= 1e-8);

  Tensor huge = mat(1, 3, {1e4, -1e4, 0.0});
  CHECK(std::isfinite(ce_value(huge, {1})));
  CHECK(ce_value(huge, {1}) == doctest::Approx(2e4));

  SUBCASE("joint permutation of classes and labels") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor({5, 6}, rng(), -4.0, 4.0);
      std::vector<int> labels(5);
      for (auto& l : labels) l = static_cast<int>(rng() % 6);
      std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor xp(x.shape());
      std::vector<int> lp(5);
      for (std::size_t n = 0; n < 5; ++n) {
        for (std::size_t k = 0; k < 6; ++k) xp.at({n, perm[k]}) = x.at({n, k});
        lp[n] = static_cast<int>(perm[static_cast<std::size_t>(labels[n])]);
      }
      CHECK(ce_value(xp, lp) == doctest::Approx(ce_value(x, labels)).epsilon(1e-14));
    }
  }
  SUBCASE("labels outside the class range are rejected") {
    CHECK_THROWS_AS(ce_value(Tensor(Shape{2, 3}), {0, 3}), std::out_of_range);
    CHECK_THROWS_AS(ce_value(Tensor(Shape{2, 3}), {-1, 0}), std::out_of_range);
  }
}

TEST_CASE("zero_one_loss") {
  CHECK(z01_value(Tensor(Shape{14, 8}, 0.0)) == 0.0);
  CHECK(std::abs(z01_value(Tensor(Shape{4}, std::vector<double>{50, -50, 50, -50})) + 0.5) <= 1e-8);

  // sigma = (0.9, 0.5) from extended-precision logits.
  const long double l9 = std::log(0.9L / 0.1L);
  const Tensor a(Shape{2}, std::vector<double>{static_cast<double>(l9), 0.0});
  const long double oracle = -(std::abs(sigmoid_ld(static_cast<double>(l9)) - 0.5L) + 0.0L) / 2.0L;
  CHECK(std::abs(z01_value(a) - static_cast<double>(oracle)) <= 1e-15);
  CHECK(std::abs(z01_value(a) + 0.2) <= 1e-12);

  SUBCASE("bounds on random inputs") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 500; ++trial) {
      const double span = std::uniform_real_distribution<double>(0.01, 60.0)(rng);
      const Tensor x = random_tensor({1 + rng() % 30}, rng(), -span, span);
      const double v = z01_value(x);
      CHECK(v >= -0.5);
      CHECK(v <= 0.0);
    }
  }
  SUBCASE("zero subgradient at the kink and sign elsewhere") {
    Tape t;
    Var x = t.leaf(Tensor(Shape{3}, std::vector<double>{0.0, 1.0, -2.0}), true);
    t.backward(zero_one_loss(x));
    const Tensor& g = t.grad(x);
    CHECK(g[0] == 0.0);
    const double s1 = 1.0 / (1.0 + std::exp(-1.0)), s2 = 1.0 / (1.0 + std::exp(2.0));
    CHECK(g[1] == doctest::Approx(-s1 * (1 - s1) / 3.0).epsilon(1e-13));
    CHECK(g[2] == doctest::Approx(s2 * (1 - s2) / 3.0).epsilon(1e-13));
  }
}

TEST_CASE("total_arch_loss") {
  Tape t;
  Var val = t.constant(Tensor::scalar(2.0));
  Var an = t.constant(random_tensor({14, 8}, 3, -3.0, 3.0));
  Var ar = t.constant(random_tensor({14, 8}, 4, -3.0, 3.0));
  LossConfig cfg;
  cfg.zero_one_warmup_epochs = 2;

  CHECK(total_arch_loss(val, an, ar, cfg, Gating::softmax, 50).value()[0] == 2.0);
  CHECK(total_arch_loss(val, an, ar, cfg, Gating::sigmoid, 1).value()[0] == 2.0);
  LossConfig off = cfg;
  off.lambda_zero_one = 0.0;
  CHECK(total_arch_loss(val, an, ar, off, Gating::sigmoid, 5).value()[0] == 2.0);
  Var zeros = t.constant(Tensor(Shape{14, 8}, 0.0));
  CHECK(total_arch_loss(val, zeros, zeros, cfg, Gating::sigmoid, 5).value()[0] == 2.0);

  cfg.lambda_zero_one = 3.0;
  const double expect = 2.0 + 3.0 * 0.5 * (z01_value(an.value()) + z01_value(ar.value()));
  CHECK(total_arch_loss(val, an, ar, cfg, Gating::sigmoid, 2).value()[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect < 2.0);

  LossConfig bad;
  bad.lambda_bt = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("cross_correlation") {
  const Tensor eye = mat(2, 2, {1, 0, 0, 1});
  CHECK(corr(eye, eye) == eye);
  const Tensor neg = mat(2, 2, {-1, 0, 0, -1});
  CHECK(corr(eye, neg) == neg);

  SUBCASE("entries are cosine similarities of columns") {
    const Tensor a = random_tensor({7, 3}, 5), b = random_tensor({7, 4}, 6);
    const Tensor c = corr(a, b);
    REQUIRE(c.shape() == Shape{3, 4});
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        long double dot = 0, na = 0, nb = 0;
        for (std::size_t r = 0; r < 7; ++r) {
          dot += static_cast<long double>(a.at({r, i})) * b.at({r, j});
          na += static_cast<long double>(a.at({r, i})) * a.at({r, i});
          nb += static_cast<long double>(b.at({r, j})) * b.at({r, j});
        }
        CHECK(std::abs(c.at({i, j}) - static_cast<double>(dot / std::sqrt(na * nb))) <= 1e-14);
      }
    }
  }
  SUBCASE("positive column scaling and the Cauchy-Schwarz bound") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor a = random_tensor({6, 5}, rng()), b = random_tensor({6, 5}, rng());
      Tensor as = a, bs = b;
      for (std::size_t r = 0; r < 6; ++r) {
        as.at({r, 1}) *= 37.5;
        as.at({r, 4}) *= 1e-3;
        bs.at({r, 0}) *= 2.25;
      }
      for (bool center : {false, true}) {
        const Tensor c = corr(a, b, center);
        CHECK(max_abs_diff(c, corr(as, bs, center)) <= 1e-12);
        for (double v : c.data()) CHECK(std::abs(v) <= 1.0 + 1e-12);
      }
    }
  }
  SUBCASE("mean centering subtracts column means first") {
    const Tensor a = random_tensor({8, 2}, 8), b = random_tensor({8, 2}, 9);
    Tensor shifted = a;
    for (std::size_t r = 0; r < 8; ++r) shifted.at({r, 0}) += 5.0;
    CHECK(max_abs_diff(corr(a, b, true), corr(shifted, b, true)) <= 1e-12);
    CHECK(max_abs_diff(corr(a, b, false), corr(shifted, b, false)) > 1e-3);
  }
  SUBCASE("a zero column is reported by index") {
    Tensor a = random_tensor({4, 3}, 10);
    for (std::size_t r = 0; r < 4; ++r) a.at({r, 2}) = 0.0;
    CHECK_THROWS_WITH_AS(corr(a, random_tensor({4, 3}, 11)), doctest::Contains("2"), std::domain_error);
    CHECK_THROWS_AS(corr(random_tensor({4, 3}, 11), a), std::domain_error);
  }
  SUBCASE("gradients reach both embeddings") {
    auto prog = [](Tape& t, Var x) {
      Var b = t.constant(random_tensor({5, 3}, 12));
      return barlow_twins_loss(cross_correlation(x, b), 0.3);
    };
    CHECK(grad_check(prog, random_tensor({5, 3}, 13)) <= 1e-6);
  }
}

TEST_CASE("barlow_twins_loss") {
  CHECK(bt_value(mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.7) == 0.0);
  for (double lambda : {0.0, 5e-3, 1.0, 9.0}) {
    CHECK(std::abs(bt_value(mat(2, 2, {-1, 0, 0, -1}), lambda) - 8.0) <= 1e-9);
  }
  CHECK(std::abs(bt_value(mat(2, 2, {1, 0.5, 0.5, 1}), 5e-3) - 2.5e-3) <= 1e-15);
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor c = random_tensor({4, 4}, rng());
    CHECK(bt_value(c, 5e-3) > 0.0);
  }
}

TEST_CASE("cosine_lr") {
  CHECK(cosine_lr(0, 40) == 0.025);
  CHECK(cosine_lr(40, 40) == 0.001);
  CHECK(cosine_lr(20, 40) == doctest::Approx(0.013).epsilon(1e-14));
  CHECK(cosine_lr(0, 7, 0.1, 0.0) == 0.1);
  CHECK(cosine_lr(7, 7, 0.1, 0.0) == 0.0);
  for (int total : {1, 5, 40, 150}) {
    for (int e = 1; e <= total; ++e) CHECK(cosine_lr(e, total) <= cosine_lr(e - 1, total));
  }
  CHECK(cosine_lr(10, 40) == doctest::Approx(0.001 + 0.012 * (1 + std::cos(std::numbers::pi / 4))).epsilon(1e-14));
}

TEST_CASE("SGD with momentum") {
  SUBCASE("zero gradient, zero decay") {
    SgdMomentum opt(0.9, 0.0);
    Tensor w = random_tensor({3, 2}, 15);
    const Tensor w0 = w;
    for (int i = 0; i < 5; ++i) sgd_step(opt, w, Tensor(w.shape()), 0.1);
    CHECK(w == w0);
  }
  SUBCASE("first step includes weight decay") {
    SgdMomentum opt(0.9, 3e-4);
    Tensor w = random_tensor({4}, 16);
    const Tensor w0 = w, g = random_tensor({4}, 17);
    sgd_step(opt, w, g, 0.025);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(w0[i] - 0.025 * (g[i] + 3e-4 * w0[i])).epsilon(1e-15));
  }
  SUBCASE("two steps with constant gradient") {
    for (double m : {0.0, 0.5, 0.9}) {
      SgdMomentum opt(m, 0.0);
      Tensor w = random_tensor({5}, 18);
      const Tensor w0 = w, g = random_tensor({5}, 19);
      sgd_step(opt, w, g, 0.03);
      sgd_step(opt, w, g, 0.03);
      for (std::size_t i = 0; i < 5; ++i) CHECK(w[i] - w0[i] == doctest::Approx(-0.03 * g[i] * (2 + m)).epsilon(1e-12));
    }
  }
  SUBCASE("mismatched shapes are rejected") {
    SgdMomentum opt;
    Tensor w(Shape{3});
    CHECK_THROWS(sgd_step(opt, w, Tensor(Shape{4}), 0.1));
  }
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient, zero decay") {
    Adam opt(3e-4, 0.5, 0.999, 0.0);
    Tensor a = random_tensor({14, 8}, 20);
    const Tensor a0 = a;
    for (int i = 0; i < 3; ++i) adam_step(opt, a, Tensor(a.shape()));
    CHECK(a == a0);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Adam opt(3e-4, 0.5, 0.999, 0.0);
    Tensor a = random_tensor({6}, 21);
    const Tensor a0 = a, g = random_tensor({6}, 22);
    adam_step(opt, a, g);
    CHECK(opt.steps() == 1);
    for (std::size_t i = 0; i < 6; ++i) {
      const double closed = -3e-4 * g[i] / (std::abs(g[i]) + 1e-8);
      CHECK(a[i] - a0[i] == doctest::Approx(closed).epsilon(1e-9));
      CHECK(std::abs(a[i] - a0[i] + 3e-4 * (g[i] > 0 ? 1 : -1)) <= 1e-10);
    }
  }
  SUBCASE("recurrence oracle with weight decay over several steps") {
    const double lr = 1e-2, b1 = 0.5, b2 = 0.999, wd = 1e-3, eps = 1e-8;
    Adam opt(lr, b1, b2, wd, eps);
    Tensor a = random_tensor({5}, 23);
    std::vector<long double> x(a.data().begin(), a.data().end()), m(5, 0), v(5, 0);
    for (int t = 1; t <= 6; ++t) {
      const Tensor g = random_tensor({5}, 100 + t);
      adam_step(opt, a, g);
      for (std::size_t i = 0; i < 5; ++i) {
        const long double gi = g[i] + wd * x[i];
        m[i] = b1 * m[i] + (1 - b1) * gi;
        v[i] = b2 * v[i] + (1 - b2) * gi * gi;
        const long double mh = m[i] / (1 - std::pow(static_cast<long double>(b1), t));
        const long double vh = v[i] / (1 - std::pow(static_cast<long double>(b2), t));
        x[i] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(a[i] - static_cast<double>(x[i])) <= 1e-13);
  }
}

TEST_CASE("zero-one loss polarizes alpha under Adam") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto trace = testkit::zero_one_polarization(seed, 100);
    REQUIRE(trace.size() == 101);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] > trace[i - 1]);
  }
}

TEST_CASE("Barlow Twins on a linear encoder decreases monotonically") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto trace = testkit::linear_barlow_twins(seed, 51);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] < trace[i - 1]);
    CHECK(trace.back() < 0.5 * trace.front());
  }
}

TEST_CASE("bilevel search steps") {
  const LabeledDataset ds = testkit::brightness_dataset(16, 8, 5);
  SupernetConfig net;
  net.num_cells = 1;
  net.init_channels = 2;
  net.num_classes = 2;
  net.image_size = 8;
  net.embedding_dim = 3;
  net.candidates = {OperationKind::none, OperationKind::max_pool_3x3, OperationKind::sep_conv_3x3};

  for (SearchMode mode : {SearchMode::darts, SearchMode::fairdarts, SearchMode::ssf}) {
    CAPTURE(mode_name(mode));
    SearchSettings s;
    s.mode = mode;
    s.seed = 3;
    s.optim.batch_size = 8;
    s.optim.search_epochs = 1;
    s.loss.zero_one_warmup_epochs = 0;
    const SearchData data = make_search_data(ds, mode, 0.5, 3, 8, AugmentConfig{});
    const std::vector<std::size_t> batch(data.split.arch_indices.begin(), data.split.arch_indices.begin() + 8);

    SUBCASE("weight step leaves alpha alone and the arch step leaves weights alone") {
      SearchState st = SearchState::fresh(net, s);
      st.arch.normal = random_tensor({14, 8}, 30);
      st.arch.reduce = random_tensor({14, 8}, 31);
      const ArchParams a0 = st.arch;
      const ParameterStore w0 = st.net.params;
      weight_step(st, s, data, batch, 0.025, 7);
      CHECK(st.arch == a0);
      CHECK_FALSE(st.net.params == w0);
      const ParameterStore w1 = st.net.params;
      arch_step(st, s, data, batch, 0, 8);
      CHECK(st.net.params == w1);
      CHECK_FALSE(st.arch == a0);
    }
    SUBCASE("zero epochs return the input") {
      SearchState st = SearchState::fresh(net, s);
      st.arch.normal = random_tensor({14, 8}, 32);
      const ArchParams a0 = st.arch;
      const ParameterStore w0 = st.net.params;
      SearchSettings none = s;
      none.optim.search_epochs = 0;
      bilevel_search(st, none, data);
      CHECK(st.arch == a0);
      CHECK(st.net.params == w0);
      CHECK(st.history.empty());
    }
    SUBCASE("empty streams are rejected") {
      SearchState st = SearchState::fresh(net, s);
      SearchData empty = data;
      empty.split.arch_indices.clear();
      CHECK_THROWS_AS(bilevel_search(st, s, empty), std::invalid_argument);
    }
  }
}

TEST_CASE("a first-order arch step is Adam on the plain validation gradient") {
  const LabeledDataset ds = testkit::brightness_dataset(8, 8, 6);
  SupernetConfig net;
  net.num_cells = 1;
  net.init_channels = 2;
  net.num_classes = 2;
  net.image_size = 8;
  SearchSettings s;
  s.mode = SearchMode::fairdarts;
  s.loss.zero_one_warmup_epochs = 100;
  const SearchData data = make_search_data(ds, s.mode, 0.5, 1, 8, AugmentConfig::identity());
  const std::vector<std::size_t> batch = data.split.arch_indices;

  SearchState st = SearchState::fresh(net, s);
  st.arch.normal = random_tensor({14, 8}, 40);
  st.arch.reduce = random_tensor({14, 8}, 41);
  ArchParams expect = st.arch;

  Tape t;
  Binding b = bind(t, st.net, &st.arch, make_batch(ds, batch, data.stats, 8), false, true);
  t.backward(cross_entropy(forward_supervised(st.net, b, Gating::sigmoid), batch_labels(ds, batch)));
  Adam ref(s.optim.alpha_lr, s.optim.alpha_beta1, s.optim.alpha_beta2, s.optim.alpha_weight_decay);
  Tensor* p[] = {&expect.normal, &expect.reduce};
  const Tensor* g[] = {&t.grad(b.alpha_normal), &t.grad(b.alpha_reduce)};
  ref.step(p, g);

  arch_step(st, s, data, batch, 0, 0);
  CHECK(st.arch == expect);
}
