#pragma once

#include <span>

#include "fairsearch/search_space.hpp"
#include "fairsearch/tape.hpp"

namespace fairsearch {

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
/// Throws std::out_of_range for a label outside [0, C).
Var cross_entropy(Var logits, std::span<const int> labels);

/// -(1/N) sum |sigmoid(alpha_i) - 0.5| over every entry of `alpha`.
/// The subgradient at sigmoid(alpha_i) == 0.5 is 0.
Var zero_one_loss(Var alpha);

/// C_ij = sum_b zA_bi zB_bj / (||zA_:i|| ||zB_:j||), optionally after
/// per-column mean subtraction. Throws std::domain_error naming the
/// dimension when a column has zero norm.
Var cross_correlation(Var za, Var zb, bool mean_center = false);

/// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2.
Var barlow_twins_loss(Var c, double lambda);

struct LossConfig {
  double lambda_zero_one = 1.0;
  double lambda_bt = 5e-3;
  int zero_one_warmup_epochs = 10;
  bool bt_mean_center = false;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Whether the zero-one term contributes at `epoch`.
bool zero_one_active(const LossConfig& cfg, Gating gating, int epoch);

/// val_loss + lambda * mean-over-edges zero-one loss of both alpha matrices
/// when the term is active; val_loss otherwise.
Var total_arch_loss(Var val_loss, Var alpha_normal, Var alpha_reduce, const LossConfig& cfg,
                    Gating gating, int epoch);

}  // namespace fairsearch
