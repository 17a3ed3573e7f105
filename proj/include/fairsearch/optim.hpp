#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fairsearch/tensor.hpp"

namespace fairsearch {

struct OptimConfig {
  double w_lr = 0.025;
  double w_lr_min = 0.001;
  double w_momentum = 0.9;
  double w_weight_decay = 3e-4;
  double alpha_lr = 3e-4;
  double alpha_beta1 = 0.5;
  double alpha_beta2 = 0.999;
  double alpha_weight_decay = 1e-3;
  std::size_t batch_size = 64;
  int search_epochs = 40;
  int retrain_epochs = 150;
  /// Unrolled inner step size. Only the first-order scheme (0) exists.
  double xi = 0.0;

  void validate() const;
  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2.
double cosine_lr(int epoch, int total_epochs, double lr_max = 0.025, double lr_min = 0.001);

/// v <- momentum * v + (g + wd * w);  w <- w - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double momentum = 0.9, double weight_decay = 3e-4)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr);

  std::vector<Tensor>& velocity() { return velocity_; }
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

/// Adam with L2 folded into the gradient (g + wd * p) and bias correction.
class Adam {
 public:
  Adam(double lr = 3e-4, double beta1 = 0.5, double beta2 = 0.999, double weight_decay = 1e-3,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  std::size_t steps() const noexcept { return steps_; }
  void set_steps(std::size_t t) noexcept { steps_ = t; }
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }

 private:
  double lr_, beta1_, beta2_, weight_decay_, eps_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace fairsearch
