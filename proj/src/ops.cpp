#include "fairsearch/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fairsearch {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

// Half-open range of output positions whose input tap offset+pos*stride-pad
// falls inside [0, extent).
struct TapRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

TapRange tap_range(std::size_t extent, std::size_t out_extent,
                   std::size_t tap_offset, std::size_t stride,
                   std::size_t padding) {
  TapRange r;
  if (tap_offset < padding) {
    r.lo = (padding - tap_offset + stride - 1) / stride;
  }
  if (extent - 1 + padding < tap_offset) {
    r.hi = 0;
  } else {
    r.hi = std::min(out_extent, (extent - 1 + padding - tap_offset) / stride + 1);
  }
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                            std::size_t stride, std::size_t padding,
                            std::size_t dilation, const char* axis) {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < span) {
    throw ShapeError(std::string("output ") + axis +
                     " extent < 1: input " + std::to_string(in) +
                     ", padding " + std::to_string(padding) +
                     ", dilated kernel span " + std::to_string(span));
  }
  return (in + 2 * padding - span) / stride + 1;
}

Var conv2d(Var input, Var weight, const Conv2dParams& p) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (p.stride == 0 || p.dilation == 0 || p.groups == 0) {
    throw std::invalid_argument("conv2d: stride, dilation and groups must be positive");
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (C % p.groups != 0) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(C) +
                     " not divisible by groups " + std::to_string(p.groups));
  }
  if (O % p.groups != 0) {
    throw ShapeError("conv2d: output channels (weight dim 0) = " +
                     std::to_string(O) + " not divisible by groups " +
                     std::to_string(p.groups));
  }
  if (Cg != C / p.groups) {
    throw ShapeError("conv2d: weight dim 1 = " + std::to_string(Cg) +
                     " but input channels / groups = " +
                     std::to_string(C / p.groups));
  }
  const std::size_t OH = conv_out_extent(H, KH, p.stride, p.padding, p.dilation, "height");
  const std::size_t OW = conv_out_extent(W, KW, p.stride, p.padding, p.dilation, "width");
  const std::size_t opg = O / p.groups;

  std::vector<TapRange> rows(KH), cols(KW);
  for (std::size_t k = 0; k < KH; ++k) rows[k] = tap_range(H, OH, k * p.dilation, p.stride, p.padding);
  for (std::size_t k = 0; k < KW; ++k) cols[k] = tap_range(W, OW, k * p.dilation, p.stride, p.padding);

  // Visits every (output cell, input cell, weight) triple once.
  auto sweep = [=](auto&& body) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t g = 0; g < p.groups; ++g) {
        for (std::size_t oc = g * opg; oc < (g + 1) * opg; ++oc) {
          const std::size_t out_plane = (n * O + oc) * OH * OW;
          for (std::size_t ic = 0; ic < Cg; ++ic) {
            const std::size_t in_plane = (n * C + g * Cg + ic) * H * W;
            const std::size_t w_base = (oc * Cg + ic) * KH * KW;
            for (std::size_t kh = 0; kh < KH; ++kh) {
              for (std::size_t oh = rows[kh].lo; oh < rows[kh].hi; ++oh) {
                const std::size_t ih = oh * p.stride + kh * p.dilation - p.padding;
                const std::size_t out_row = out_plane + oh * OW;
                const std::size_t in_row = in_plane + ih * W;
                for (std::size_t kw = 0; kw < KW; ++kw) {
                  const std::size_t wi = w_base + kh * KW + kw;
                  const std::size_t shift = kw * p.dilation;
                  body(out_row, in_row, wi, cols[kw].lo, cols[kw].hi, shift);
                }
              }
            }
          }
        }
      }
    }
  };

  Tensor out(Shape{N, O, OH, OW});
  {
    double* o = out.data().data();
    const double* xi = x.data().data();
    const double* wv = w.data().data();
    const std::size_t s = p.stride, pad = p.padding;
    sweep([&](std::size_t out_row, std::size_t in_row, std::size_t wi,
              std::size_t lo, std::size_t hi, std::size_t shift) {
      if (lo >= hi) return;
      const double k = wv[wi];
      double* orow = o + out_row;
      const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(in_row + shift) -
                                  static_cast<std::ptrdiff_t>(pad);
      if (s == 1) {
        const double* irow = xi + base + static_cast<std::ptrdiff_t>(lo);
        for (std::size_t ow = lo; ow < hi; ++ow) orow[ow] += k * irow[ow - lo];
      } else {
        for (std::size_t ow = lo; ow < hi; ++ow) {
          orow[ow] += k * xi[base + static_cast<std::ptrdiff_t>(ow * s)];
        }
      }
    });
  }

  return input.tape().record(
      std::move(out), {input, weight}, [sweep, p](const BackwardContext& ctx) {
        const double* go = ctx.out_grad().data().data();
        const double* xi = ctx.input(0).data().data();
        const double* wv = ctx.input(1).data().data();
        Tensor* gx = ctx.input_grad(0);
        Tensor* gw = ctx.input_grad(1);
        double* gxi = gx ? gx->data().data() : nullptr;
        double* gwi = gw ? gw->data().data() : nullptr;
        const std::size_t s = p.stride, pad = p.padding;
        sweep([&](std::size_t out_row, std::size_t in_row, std::size_t wi,
                  std::size_t lo, std::size_t hi, std::size_t shift) {
          const double* grow = go + out_row;
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(in_row + shift) -
                                      static_cast<std::ptrdiff_t>(pad);
          if (gxi) {
            const double k = wv[wi];
            for (std::size_t ow = lo; ow < hi; ++ow) {
              gxi[base + static_cast<std::ptrdiff_t>(ow * s)] += k * grow[ow];
            }
          }
          if (gwi) {
            double acc = 0.0;
            for (std::size_t ow = lo; ow < hi; ++ow) {
              acc += xi[base + static_cast<std::ptrdiff_t>(ow * s)] * grow[ow];
            }
            gwi[wi] += acc;
          }
        });
      });
}

Var pool2d(Var input, PoolKind kind, std::size_t window, std::size_t stride,
           std::size_t padding) {
  const Tensor& x = input.value();
  require_rank(x, 4, "pool2d input");
  if (window == 0 || stride == 0) {
    throw std::invalid_argument("pool2d: window and stride must be positive");
  }
  if (2 * padding > window) {
    throw std::invalid_argument("pool2d: padding " + std::to_string(padding) +
                                " exceeds half the window " + std::to_string(window));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = conv_out_extent(H, window, stride, padding, 1, "height");
  const std::size_t OW = conv_out_extent(W, window, stride, padding, 1, "width");
  Tensor out(Shape{N, C, OH, OW});
  const double* xi = x.data().data();
  double* o = out.data().data();

  if (kind == PoolKind::max) {
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t plane = 0; plane < N * C; ++plane) {
      const std::size_t in_base = plane * H * W;
      for (std::size_t oh = 0; oh < OH; ++oh) {
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = in_base;
          for (std::size_t kh = 0; kh < window; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kw = 0; kw < window; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              const std::size_t idx = in_base + static_cast<std::size_t>(ih) * W +
                                      static_cast<std::size_t>(iw);
              if (xi[idx] > best) {
                best = xi[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t oi = (plane * OH + oh) * OW + ow;
          o[oi] = best;
          argmax[oi] = best_idx;
        }
      }
    }
    return input.tape().record(
        std::move(out), {input}, [argmax = std::move(argmax)](const BackwardContext& ctx) {
          Tensor* gx = ctx.input_grad(0);
          if (!gx) return;
          const auto& go = ctx.out_grad();
          for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += go[i];
        });
  }

  const double inv_area = 1.0 / static_cast<double>(window * window);
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t plane = 0; plane < N * C; ++plane) {
      const std::size_t in_base = plane * H * W;
      for (std::size_t oh = 0; oh < OH; ++oh) {
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const std::size_t oi = (plane * OH + oh) * OW + ow;
          for (std::size_t kh = 0; kh < window; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kw = 0; kw < window; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              body(oi, in_base + static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw));
            }
          }
        }
      }
    }
  };
  for_each_tap([&](std::size_t oi, std::size_t ii) { o[oi] += xi[ii]; });
  for (auto& v : out.data()) v *= inv_area;
  return input.tape().record(
      std::move(out), {input}, [for_each_tap, inv_area](const BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const auto& go = ctx.out_grad();
        for_each_tap([&](std::size_t oi, std::size_t ii) { (*gx)[ii] += go[oi] * inv_area; });
      });
}

Var batch_norm2d(Var input, Var gamma, Var beta, double eps) {
  const Tensor& x = input.value();
  require_rank(x, 4, "batch_norm2d input");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.value().shape() != Shape{C} || beta.value().shape() != Shape{C}) {
    throw ShapeError("batch_norm2d: gamma/beta must have shape [" +
                     std::to_string(C) + "] (channel dim 1)");
  }
  const std::size_t m = N * HW;
  if (m < 2) {
    throw ShapeError("batch_norm2d: batch*H*W = " + std::to_string(m) +
                     " < 2 for channel statistics");
  }
  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = x.data().data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) s += p[i];
    }
    mu[c] = s / static_cast<double>(m);
    double v = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = x.data().data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = p[i] - mu[c];
        v += d * d;
      }
    }
    inv_std[c] = 1.0 / std::sqrt(v / static_cast<double>(m) + eps);
  }
  Tensor out(x.shape());
  const auto& g = gamma.value();
  const auto& b = beta.value();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        out[base + i] = g[c] * (x[base + i] - mu[c]) * inv_std[c] + b[c];
      }
    }
  }
  return input.tape().record(
      std::move(out), {input, gamma, beta},
      [mu = std::move(mu), inv_std = std::move(inv_std), N, C, HW, m](const BackwardContext& ctx) {
        const auto& x = ctx.input(0);
        const auto& g = ctx.input(1);
        const auto& go = ctx.out_grad();
        Tensor* gx = ctx.input_grad(0);
        Tensor* gg = ctx.input_grad(1);
        Tensor* gb = ctx.input_grad(2);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              const double xhat = (x[base + i] - mu[c]) * inv_std[c];
              sum_g += go[base + i];
              sum_gx += go[base + i] * xhat;
            }
          }
          if (gg) (*gg)[c] += sum_gx;
          if (gb) (*gb)[c] += sum_g;
          if (gx) {
            const double md = static_cast<double>(m);
            const double k = g[c] * inv_std[c] / md;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * HW;
              for (std::size_t i = 0; i < HW; ++i) {
                const double xhat = (x[base + i] - mu[c]) * inv_std[c];
                (*gx)[base + i] += k * (md * go[base + i] - sum_g - xhat * sum_gx);
              }
            }
          }
        }
      });
}

Var linear(Var input, Var weight, std::optional<Var> bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 2, "linear input");
  require_rank(w, 2, "linear weight");
  const std::size_t N = x.dim(0), D = x.dim(1), K = w.dim(1);
  if (w.dim(0) != D) {
    throw ShapeError("linear: input dim 1 = " + std::to_string(D) +
                     " but weight dim 0 = " + std::to_string(w.dim(0)));
  }
  if (bias && bias->value().shape() != Shape{K}) {
    throw ShapeError("linear: bias shape " + shape_to_string(bias->value().shape()) +
                     " but weight dim 1 = " + std::to_string(K));
  }
  Tensor out(Shape{N, K});
  for (std::size_t n = 0; n < N; ++n) {
    double* orow = out.data().data() + n * K;
    if (bias) {
      const auto& b = bias->value();
      for (std::size_t k = 0; k < K; ++k) orow[k] = b[k];
    }
    for (std::size_t d = 0; d < D; ++d) {
      const double xv = x[n * D + d];
      const double* wrow = w.data().data() + d * K;
      for (std::size_t k = 0; k < K; ++k) orow[k] += xv * wrow[k];
    }
  }
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return input.tape().record(
      std::move(out), std::move(inputs), [N, D, K](const BackwardContext& ctx) {
        const auto& x = ctx.input(0);
        const auto& w = ctx.input(1);
        const auto& go = ctx.out_grad();
        Tensor* gx = ctx.input_grad(0);
        Tensor* gw = ctx.input_grad(1);
        Tensor* gb = ctx.num_inputs() > 2 ? ctx.input_grad(2) : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          const double* grow = go.data().data() + n * K;
          for (std::size_t d = 0; d < D; ++d) {
            const double* wrow = w.data().data() + d * K;
            if (gx) {
              double acc = 0.0;
              for (std::size_t k = 0; k < K; ++k) acc += grow[k] * wrow[k];
              (*gx)[n * D + d] += acc;
            }
            if (gw) {
              const double xv = x[n * D + d];
              double* gwrow = gw->data().data() + d * K;
              for (std::size_t k = 0; k < K; ++k) gwrow[k] += xv * grow[k];
            }
          }
          if (gb) {
            for (std::size_t k = 0; k < K; ++k) (*gb)[k] += grow[k];
          }
        }
      });
}

Var activation(Var input, Activation kind) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
      return input.tape().record(std::move(out), {input}, [](const BackwardContext& ctx) {
        const auto& x = ctx.input(0);
        const auto& go = ctx.out_grad();
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > 0.0) gx[i] += go[i];
        }
      });
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
      return input.tape().record(std::move(out), {input}, [](const BackwardContext& ctx) {
        const auto& y = ctx.output();
        const auto& go = ctx.out_grad();
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
      });
    case Activation::softmax_lastdim: {
      if (x.rank() == 0) throw ShapeError("softmax: scalar input");
      const std::size_t K = x.shape().back();
      const std::size_t rows = x.size() / K;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * K;
        double* yr = out.data().data() + r * K;
        const double mx = *std::max_element(xr, xr + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          yr[k] = std::exp(xr[k] - mx);
          z += yr[k];
        }
        for (std::size_t k = 0; k < K; ++k) yr[k] /= z;
      }
      return input.tape().record(std::move(out), {input}, [K, rows](const BackwardContext& ctx) {
        const auto& y = ctx.output();
        const auto& go = ctx.out_grad();
        Tensor& gx = *ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t k = 0; k < K; ++k) dot += go[r * K + k] * y[r * K + k];
          for (std::size_t k = 0; k < K; ++k) {
            gx[r * K + k] += y[r * K + k] * (go[r * K + k] - dot);
          }
        }
      });
    }
  }
  throw std::invalid_argument("activation: unknown kind");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    const auto& go = ctx.out_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = ctx.input_grad(k)) {
        for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i];
      }
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    const auto& go = ctx.out_grad();
    if (Tensor* g = ctx.input_grad(0)) {
      const auto& other = ctx.input(1);
      for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * other[i];
    }
    if (Tensor* g = ctx.input_grad(1)) {
      const auto& other = ctx.input(0);
      for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i] * other[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [factor](const BackwardContext& ctx) {
    const auto& go = ctx.out_grad();
    Tensor& g = *ctx.input_grad(0);
    for (std::size_t i = 0; i < go.size(); ++i) g[i] += factor * go[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [](const BackwardContext& ctx) {
    const double go = ctx.out_grad()[0];
    Tensor& g = *ctx.input_grad(0);
    for (auto& v : g.data()) v += go;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var weighted_sum(std::span<const Var> terms, Var gates) {
  const Tensor& gv = gates.value();
  if (gv.rank() != 1 || gv.size() != terms.size()) {
    throw ShapeError("weighted_sum: gates shape " + shape_to_string(gv.shape()) +
                     " does not match " + std::to_string(terms.size()) + " terms");
  }
  std::vector<Var> inputs{gates};
  std::vector<std::size_t> slot;  // term index for each input after the gates
  const Shape* shape = nullptr;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (!terms[k].defined()) continue;
    const Shape& s = terms[k].shape();
    if (shape && s != *shape) {
      throw ShapeError("weighted_sum: term " + std::to_string(k) + " has shape " +
                       shape_to_string(s) + ", expected " + shape_to_string(*shape));
    }
    shape = &s;
    inputs.push_back(terms[k]);
    slot.push_back(k);
  }
  if (!shape) throw ShapeError("weighted_sum: no defined terms");
  Tensor out(*shape);
  for (std::size_t j = 0; j < slot.size(); ++j) {
    const double g = gv[slot[j]];
    const auto& t = inputs[j + 1].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += g * t[i];
  }
  return gates.tape().record(
      std::move(out), std::move(inputs), [slot = std::move(slot)](const BackwardContext& ctx) {
        const auto& go = ctx.out_grad();
        const auto& gv = ctx.input(0);
        Tensor* ggates = ctx.input_grad(0);
        for (std::size_t j = 0; j < slot.size(); ++j) {
          const auto& t = ctx.input(j + 1);
          if (ggates) {
            double acc = 0.0;
            for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * t[i];
            (*ggates)[slot[j]] += acc;
          }
          if (Tensor* gt = ctx.input_grad(j + 1)) {
            const double g = gv[slot[j]];
            for (std::size_t i = 0; i < go.size(); ++i) (*gt)[i] += g * go[i];
          }
        }
      });
}

Var select_row(Var matrix, std::size_t row) {
  const Tensor& m = matrix.value();
  require_rank(m, 2, "select_row");
  if (row >= m.dim(0)) {
    throw ShapeError("select_row: row " + std::to_string(row) + " out of range for dim 0 = " +
                     std::to_string(m.dim(0)));
  }
  const std::size_t K = m.dim(1);
  std::vector<double> data(m.data().begin() + static_cast<std::ptrdiff_t>(row * K),
                           m.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * K));
  return matrix.tape().record(Tensor(Shape{K}, std::move(data)), {matrix},
                              [row, K](const BackwardContext& ctx) {
                                const auto& go = ctx.out_grad();
                                Tensor& g = *ctx.input_grad(0);
                                for (std::size_t k = 0; k < K; ++k) g[row * K + k] += go[k];
                              });
}

Var gather_cols(Var matrix, std::span<const std::size_t> cols) {
  const Tensor& m = matrix.value();
  require_rank(m, 2, "gather_cols");
  const std::size_t R = m.dim(0), K = m.dim(1);
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  if (idx.empty()) throw ShapeError("gather_cols: no columns selected");
  for (auto c : idx) {
    if (c >= K) {
      throw ShapeError("gather_cols: column " + std::to_string(c) +
                       " out of range for dim 1 = " + std::to_string(K));
    }
  }
  const std::size_t J = idx.size();
  Tensor out(Shape{R, J});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < J; ++j) out[r * J + j] = m[r * K + idx[j]];
  }
  return matrix.tape().record(
      std::move(out), {matrix}, [idx = std::move(idx), R, K, J](const BackwardContext& ctx) {
        const auto& go = ctx.out_grad();
        Tensor& g = *ctx.input_grad(0);
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t j = 0; j < J; ++j) g[r * K + idx[j]] += go[r * J + j];
        }
      });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts[0].value();
  require_rank(first, 4, "concat_channels");
  const std::size_t N = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    require_rank(t, 4, "concat_channels");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
      throw ShapeError("concat_channels: part " + std::to_string(k) + " has shape " +
                       shape_to_string(t.shape()) + ", expected N,H,W of " +
                       shape_to_string(first.shape()));
    }
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  const std::size_t HW = H * W;
  Tensor out(Shape{N, total, H, W});
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(t.data().data() + n * channels[k] * HW, channels[k] * HW,
                  out.data().data() + (n * total + c0) * HW);
    }
    c0 += channels[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), std::move(inputs),
      [channels = std::move(channels), N, total, HW](const BackwardContext& ctx) {
        const auto& go = ctx.out_grad();
        std::size_t c0 = 0;
        for (std::size_t k = 0; k < channels.size(); ++k) {
          if (Tensor* g = ctx.input_grad(k)) {
            for (std::size_t n = 0; n < N; ++n) {
              const double* src = go.data().data() + (n * total + c0) * HW;
              double* dst = g->data().data() + n * channels[k] * HW;
              for (std::size_t i = 0; i < channels[k] * HW; ++i) dst[i] += src[i];
            }
          }
          c0 += channels[k];
        }
      });
}

Var global_avg_pool(Var input) {
  const Tensor& x = input.value();
  require_rank(x, 4, "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor out(Shape{N, C});
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < HW; ++j) s += x[i * HW + j];
    out[i] = s / static_cast<double>(HW);
  }
  return input.tape().record(std::move(out), {input}, [N, C, HW](const BackwardContext& ctx) {
    const auto& go = ctx.out_grad();
    Tensor& g = *ctx.input_grad(0);
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t i = 0; i < N * C; ++i) {
      for (std::size_t j = 0; j < HW; ++j) g[i * HW + j] += go[i] * inv;
    }
  });
}

Var crop_leading(Var input, std::size_t offset) {
  const Tensor& x = input.value();
  require_rank(x, 4, "crop_leading");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (offset >= H || offset >= W) {
    throw ShapeError("crop_leading: offset " + std::to_string(offset) +
                     " leaves no spatial extent in " + shape_to_string(x.shape()));
  }
  const std::size_t OH = H - offset, OW = W - offset;
  Tensor out(Shape{N, C, OH, OW});
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    for (std::size_t h = 0; h < OH; ++h) {
      std::copy_n(x.data().data() + (plane * H + h + offset) * W + offset, OW,
                  out.data().data() + (plane * OH + h) * OW);
    }
  }
  return input.tape().record(
      std::move(out), {input}, [N, C, H, W, OH, OW, offset](const BackwardContext& ctx) {
        const auto& go = ctx.out_grad();
        Tensor& g = *ctx.input_grad(0);
        for (std::size_t plane = 0; plane < N * C; ++plane) {
          for (std::size_t h = 0; h < OH; ++h) {
            for (std::size_t w = 0; w < OW; ++w) {
              g[(plane * H + h + offset) * W + w + offset] += go[(plane * OH + h) * OW + w];
            }
          }
        }
      });
}

}  // namespace fairsearch
