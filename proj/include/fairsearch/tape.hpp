#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "fairsearch/tensor.hpp"

namespace fairsearch {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
 public:
  Var() = default;

  bool defined() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

/// View handed to a backward rule. Input gradient buffers are null for
/// inputs that do not require gradients; rules must accumulate (+=) into
/// the non-null ones.
class BackwardContext {
 public:
  const Tensor& out_grad() const { return *out_grad_; }
  const Tensor& output() const { return *output_; }
  const Tensor& input(std::size_t i) const { return *inputs_[i]; }
  Tensor* input_grad(std::size_t i) const { return input_grads_[i]; }
  std::size_t num_inputs() const noexcept { return inputs_.size(); }

 private:
  friend class Tape;
  const Tensor* out_grad_ = nullptr;
  const Tensor* output_ = nullptr;
  std::vector<const Tensor*> inputs_;
  std::vector<Tensor*> input_grads_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Linear record of executed primitives. backward() replays the record
/// in exact reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records a primitive. The node requires a gradient iff any input does;
  /// `backward` is dropped otherwise.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar root. Clears gradients from any earlier
  /// sweep first.
  void backward(Var root);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Gradient of the last backward root with respect to leaf `v`. Zero
  /// tensor when `v` was not reached. Interior nodes release their adjoints
  /// during the sweep and always report zero.
  const Tensor& grad(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace fairsearch
