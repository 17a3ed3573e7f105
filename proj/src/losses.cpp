#include "fairsearch/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairsearch/ops.hpp"

namespace fairsearch {

namespace {

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_to_string(z.shape()));
  const std::size_t N = z.dim(0), C = z.dim(1);
  if (labels.size() != N) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch dim 0 = " +
                     std::to_string(N));
  }
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= C) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[n]) + " at index " +
                              std::to_string(n) + " outside [0," + std::to_string(C) + ")");
    }
  }
  Tensor probs(Shape{N, C});
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = z.data().data() + n * C;
    const double mx = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    total += lse - row[labels[n]];
    for (std::size_t c = 0; c < C; ++c) probs[n * C + c] = std::exp(row[c] - lse);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor::scalar(total / static_cast<double>(N)), {logits},
      [probs = std::move(probs), lab = std::move(lab), N, C](const BackwardContext& ctx) {
        Tensor& g = *ctx.input_grad(0);
        const double go = ctx.out_grad()[0] / static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const double target = static_cast<int>(c) == lab[n] ? 1.0 : 0.0;
            g[n * C + c] += go * (probs[n * C + c] - target);
          }
        }
      });
}

Var zero_one_loss(Var alpha) {
  const Tensor& a = alpha.value();
  if (a.empty()) throw ShapeError("zero_one_loss: needs at least one value");
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += std::abs(sigmoid_of(v) - 0.5);
  return alpha.tape().record(Tensor::scalar(-s / n), {alpha}, [n](const BackwardContext& ctx) {
    const auto& a = ctx.input(0);
    Tensor& g = *ctx.input_grad(0);
    const double go = ctx.out_grad()[0];
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double sg = sigmoid_of(a[i]);
      const double d = sg - 0.5;
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      g[i] += go * (-sign * sg * (1.0 - sg) / n);
    }
  });
}

Var cross_correlation(Var za, Var zb, bool mean_center) {
  const Tensor& A0 = za.value();
  const Tensor& B0 = zb.value();
  if (A0.rank() != 2 || B0.rank() != 2) {
    throw ShapeError("cross_correlation: embeddings must be [B,D], got " + shape_to_string(A0.shape()) +
                     " and " + shape_to_string(B0.shape()));
  }
  const std::size_t Bn = A0.dim(0), Da = A0.dim(1), Db = B0.dim(1);
  if (B0.dim(0) != Bn) {
    throw ShapeError("cross_correlation: batch dim 0 differs (" + std::to_string(Bn) + " vs " +
                     std::to_string(B0.dim(0)) + ")");
  }
  if (Bn < 2) throw ShapeError("cross_correlation: batch dim 0 must be >= 2");

  auto prepare = [&](const Tensor& src, const char* which, std::size_t D,
                     std::vector<double>& norm) {
    Tensor t = src;
    if (mean_center) {
      for (std::size_t d = 0; d < D; ++d) {
        double m = 0.0;
        for (std::size_t b = 0; b < Bn; ++b) m += t[b * D + d];
        m /= static_cast<double>(Bn);
        for (std::size_t b = 0; b < Bn; ++b) t[b * D + d] -= m;
      }
    }
    norm.assign(D, 0.0);
    for (std::size_t b = 0; b < Bn; ++b) {
      for (std::size_t d = 0; d < D; ++d) norm[d] += t[b * D + d] * t[b * D + d];
    }
    for (std::size_t d = 0; d < D; ++d) {
      norm[d] = std::sqrt(norm[d]);
      if (norm[d] == 0.0) {
        throw std::domain_error(std::string("cross_correlation: ") + which + " column " +
                                std::to_string(d) + " has zero norm");
      }
    }
    for (std::size_t b = 0; b < Bn; ++b) {
      for (std::size_t d = 0; d < D; ++d) t[b * D + d] /= norm[d];
    }
    return t;  // unit-norm columns
  };
  std::vector<double> na, nb;
  Tensor Ahat = prepare(A0, "zA", Da, na);
  Tensor Bhat = prepare(B0, "zB", Db, nb);

  Tensor C(Shape{Da, Db});
  for (std::size_t b = 0; b < Bn; ++b) {
    for (std::size_t i = 0; i < Da; ++i) {
      const double a = Ahat[b * Da + i];
      for (std::size_t j = 0; j < Db; ++j) C[i * Db + j] += a * Bhat[b * Db + j];
    }
  }
  return za.tape().record(
      std::move(C), {za, zb},
      [Ahat = std::move(Ahat), Bhat = std::move(Bhat), na = std::move(na), nb = std::move(nb), Bn,
       Da, Db, mean_center](const BackwardContext& ctx) {
        const auto& G = ctx.out_grad();
        const auto& C = ctx.output();
        auto center = [&](Tensor& g, std::size_t D) {
          if (!mean_center) return;
          for (std::size_t d = 0; d < D; ++d) {
            double m = 0.0;
            for (std::size_t b = 0; b < Bn; ++b) m += g[b * D + d];
            m /= static_cast<double>(Bn);
            for (std::size_t b = 0; b < Bn; ++b) g[b * D + d] -= m;
          }
        };
        if (Tensor* gA = ctx.input_grad(0)) {
          std::vector<double> gc(Da, 0.0);  // sum_j G_ij C_ij
          for (std::size_t i = 0; i < Da; ++i) {
            for (std::size_t j = 0; j < Db; ++j) gc[i] += G[i * Db + j] * C[i * Db + j];
          }
          Tensor local(Shape{Bn, Da});
          for (std::size_t b = 0; b < Bn; ++b) {
            for (std::size_t i = 0; i < Da; ++i) {
              double acc = 0.0;
              for (std::size_t j = 0; j < Db; ++j) acc += Bhat[b * Db + j] * G[i * Db + j];
              local[b * Da + i] = (acc - Ahat[b * Da + i] * gc[i]) / na[i];
            }
          }
          center(local, Da);
          for (std::size_t k = 0; k < local.size(); ++k) (*gA)[k] += local[k];
        }
        if (Tensor* gB = ctx.input_grad(1)) {
          std::vector<double> gc(Db, 0.0);  // sum_i G_ij C_ij
          for (std::size_t i = 0; i < Da; ++i) {
            for (std::size_t j = 0; j < Db; ++j) gc[j] += G[i * Db + j] * C[i * Db + j];
          }
          Tensor local(Shape{Bn, Db});
          for (std::size_t b = 0; b < Bn; ++b) {
            for (std::size_t j = 0; j < Db; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < Da; ++i) acc += Ahat[b * Da + i] * G[i * Db + j];
              local[b * Db + j] = (acc - Bhat[b * Db + j] * gc[j]) / nb[j];
            }
          }
          center(local, Db);
          for (std::size_t k = 0; k < local.size(); ++k) (*gB)[k] += local[k];
        }
      });
}

Var barlow_twins_loss(Var c, double lambda) {
  const Tensor& C = c.value();
  if (C.rank() != 2 || C.dim(0) != C.dim(1)) {
    throw ShapeError("barlow_twins_loss: expected a square matrix, got " + shape_to_string(C.shape()));
  }
  const std::size_t D = C.dim(0);
  double on = 0.0, off = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      const double v = C[i * D + j];
      if (i == j) {
        on += (1.0 - v) * (1.0 - v);
      } else {
        off += v * v;
      }
    }
  }
  return c.tape().record(Tensor::scalar(on + lambda * off), {c}, [D, lambda](const BackwardContext& ctx) {
    const auto& C = ctx.input(0);
    Tensor& g = *ctx.input_grad(0);
    const double go = ctx.out_grad()[0];
    for (std::size_t i = 0; i < D; ++i) {
      for (std::size_t j = 0; j < D; ++j) {
        const double v = C[i * D + j];
        g[i * D + j] += go * (i == j ? -2.0 * (1.0 - v) : 2.0 * lambda * v);
      }
    }
  });
}

void LossConfig::validate() const {
  if (lambda_zero_one < 0.0 || lambda_bt < 0.0 || zero_one_warmup_epochs < 0) {
    throw std::invalid_argument("loss config: lambda_zero_one, lambda_bt and warm-up must be nonnegative");
  }
}

bool zero_one_active(const LossConfig& cfg, Gating gating, int epoch) {
  return gating == Gating::sigmoid && epoch >= cfg.zero_one_warmup_epochs && cfg.lambda_zero_one != 0.0;
}

Var total_arch_loss(Var val_loss, Var alpha_normal, Var alpha_reduce, const LossConfig& cfg,
                    Gating gating, int epoch) {
  if (!zero_one_active(cfg, gating, epoch)) return val_loss;
  // Both matrices have 14x8 entries, so the mean of the two per-matrix means
  // is the mean over every edge.
  Var z = scale(add(zero_one_loss(alpha_normal), zero_one_loss(alpha_reduce)), 0.5);
  return add(val_loss, scale(z, cfg.lambda_zero_one));
}

}  // namespace fairsearch
