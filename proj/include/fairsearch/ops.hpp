#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fairsearch/tape.hpp"

namespace fairsearch {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// NCHW convolution, weight [out_c, in_c/groups, kh, kw].
Var conv2d(Var input, Var weight, const Conv2dParams& p = {});

enum class PoolKind { max, avg };

/// Square-window pooling. Max routes the gradient to the first maximum in
/// row-major window order; avg always divides by window*window, padded
/// cells included.
Var pool2d(Var input, PoolKind kind, std::size_t window, std::size_t stride,
           std::size_t padding);

/// Batch-statistics normalization per channel followed by gamma/beta.
Var batch_norm2d(Var input, Var gamma, Var beta, double eps = 1e-5);

/// input [N,D] * weight [D,K] (+ bias [K]).
Var linear(Var input, Var weight, std::optional<Var> bias = std::nullopt);

enum class Activation { relu, sigmoid, softmax_lastdim };

Var activation(Var input, Activation kind);
inline Var relu(Var x) { return activation(x, Activation::relu); }
inline Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }
inline Var softmax(Var x) { return activation(x, Activation::softmax_lastdim); }

Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Sum of all elements, as a scalar.
Var sum(Var a);
Var mean(Var a);

/// Sum_k gates[k] * terms[k]. Undefined terms stand for zero tensors of
/// the common shape and contribute nothing; at least one term must be
/// defined.
Var weighted_sum(std::span<const Var> terms, Var gates);

/// Row `row` of a matrix, as a vector.
Var select_row(Var matrix, std::size_t row);
/// Columns `cols` (in the given order) of a matrix.
Var gather_cols(Var matrix, std::span<const std::size_t> cols);

/// Concatenation along the channel axis of NCHW tensors.
Var concat_channels(std::span<const Var> parts);
/// Mean over H and W: [N,C,H,W] -> [N,C].
Var global_avg_pool(Var input);
/// Drops the first `offset` rows and columns of every feature map.
Var crop_leading(Var input, std::size_t offset);

/// Plain (tape-free) conv output extent; throws ShapeError when < 1.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel,
                            std::size_t stride, std::size_t padding,
                            std::size_t dilation, const char* axis);

}  // namespace fairsearch
