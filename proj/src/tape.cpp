#include "fairsearch/tape.hpp"

#include <stdexcept>

namespace fairsearch {

const Tensor& Var::value() const { return tape_->value(*this); }

bool Var::requires_grad() const { return tape_->requires_grad(*this); }

void Tape::check_owned(Var v) const {
  if (&v.tape() != this || v.id() >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id()].requires_grad;
}

const Tensor& Tape::grad(Var v) {
  check_owned(v);
  auto& node = nodes_[v.id()];
  if (node.grad.shape() != node.value.shape() || node.grad.empty()) {
    node.grad = Tensor::zeros_like(node.value);
  }
  return node.grad;
}

void Tape::backward(Var root) {
  check_owned(root);
  const auto& root_value = nodes_[root.id()].value;
  if (root_value.size() != 1) {
    throw ShapeError("backward root must be scalar, got shape " +
                     shape_to_string(root_value.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  auto& rn = nodes_[root.id()];
  rn.grad = Tensor(rn.value.shape(), 1.0);

  BackwardContext ctx;
  for (std::size_t k = root.id() + 1; k-- > 0;) {
    auto& node = nodes_[k];
    if (!node.backward || node.grad.empty()) continue;
    ctx.out_grad_ = &node.grad;
    ctx.output_ = &node.value;
    ctx.inputs_.clear();
    ctx.input_grads_.clear();
    for (auto in : node.inputs) {
      auto& src = nodes_[in];
      ctx.inputs_.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor::zeros_like(src.value);
        ctx.input_grads_.push_back(&src.grad);
      } else {
        ctx.input_grads_.push_back(nullptr);
      }
    }
    node.backward(ctx);
    // Interior adjoints are not observable after the sweep.
    node.grad = Tensor();
  }
}

}  // namespace fairsearch
