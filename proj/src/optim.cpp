#include "fairsearch/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fairsearch {

void OptimConfig::validate() const {
  if (!(w_lr > 0.0) || !(w_lr_min > 0.0) || !(alpha_lr > 0.0)) {
    throw std::invalid_argument("optim config: learning rates must be positive");
  }
  if (w_lr_min > w_lr) throw std::invalid_argument("optim config: w_lr_min exceeds w_lr");
  if (w_momentum < 0.0 || w_weight_decay < 0.0 || alpha_weight_decay < 0.0) {
    throw std::invalid_argument("optim config: momentum and weight decay must be nonnegative");
  }
  if (batch_size == 0) throw std::invalid_argument("optim config: batch_size must be positive");
  if (search_epochs < 0 || retrain_epochs < 0) {
    throw std::invalid_argument("optim config: epoch counts must be nonnegative");
  }
  if (xi != 0.0) {
    throw std::invalid_argument("optim config: xi = " + std::to_string(xi) +
                                " requested, only the first-order scheme (xi = 0) is implemented");
  }
}

double cosine_lr(int epoch, int total_epochs, double lr_max, double lr_min) {
  if (total_epochs <= 0) return lr_max;
  if (epoch < 0 || epoch > total_epochs) {
    throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                            std::to_string(total_epochs) + "]");
  }
  if (epoch == total_epochs) return lr_min;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

void check_lists(std::size_t np, std::size_t ng, const char* who) {
  if (np != ng) {
    throw std::invalid_argument(std::string(who) + ": " + std::to_string(np) + " params vs " +
                                std::to_string(ng) + " grads");
  }
}

void check_pair(const Tensor& p, const Tensor& g, std::size_t i, const char* who) {
  if (p.shape() != g.shape()) {
    throw ShapeError(std::string(who) + ": param " + std::to_string(i) + " has shape " +
                     shape_to_string(p.shape()) + ", grad " + shape_to_string(g.shape()));
  }
}

}  // namespace

void SgdMomentum::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                       double lr) {
  check_lists(params.size(), grads.size(), "sgd");
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (auto* p : params) velocity_.push_back(Tensor::zeros_like(*p));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    const Tensor& g = *grads[i];
    check_pair(w, g, i, "sgd");
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + (g[k] + weight_decay_ * w[k]);
      w[k] -= lr * v[k];
    }
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  check_lists(params.size(), grads.size(), "adam");
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (auto* p : params) {
      m_.push_back(Tensor::zeros_like(*p));
      v_.push_back(Tensor::zeros_like(*p));
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    check_pair(p, g, i, "adam");
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] + weight_decay_ * p[k];
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * gk;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * gk * gk;
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace fairsearch
