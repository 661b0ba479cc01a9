#include "rawdrift/tape.hpp"

#include <algorithm>

#include "rawdrift/error.hpp"

namespace rawdrift {

const Tensor& Gradients::operator[](Var leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) fail(ErrorCode::Config, "no gradient for node " + std::to_string(leaf.id()));
  return it->second;
}

const Tensor* Gradients::find(Var leaf) const {
  auto it = grads_.find(leaf.id());
  return it == grads_.end() ? nullptr : &it->second;
}

void Tape::check_owned(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    fail(ErrorCode::Config, "variable does not belong to this tape");
  }
}

Var Tape::leaf(Tensor value, bool trainable) {
  Node node;
  node.value = value.as(dtype_);
  node.op = "leaf";
  node.trainable = trainable;
  node.requires_grad = trainable;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  Node node;
  node.value = value.as(dtype_);
  node.op = op;
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::inject_adjoint_fault(std::string op, double factor) {
  fault_ = std::make_pair(std::move(op), factor);
}

Gradients Tape::backward(Var loss) const {
  check_owned(loss);
  Gradients out;
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    fail(ErrorCode::Shape, "backward needs a scalar loss, got " + shape_string(root.value.shape()));
  }
  if (!root.value.all_finite()) fail(ErrorCode::NonFinite, "backward on a non-finite loss");
  if (!root.requires_grad) return out;

  std::vector<std::optional<Tensor>> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::filled(root.value.shape(), 1.0, dtype_);

  std::vector<Tensor*> grad_in;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || !node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t j = node.inputs[k];
      if (!nodes_[j].requires_grad) continue;
      if (!grads[j]) grads[j] = Tensor(nodes_[j].value.shape(), dtype_);
      grad_in[k] = &*grads[j];
    }
    if (fault_ && node.op == fault_->first) {
      Tensor scaled = *grads[i];
      for (auto& g : scaled.values()) g *= fault_->second;
      node.backward(scaled, grad_in);
    } else {
      node.backward(*grads[i], grad_in);
    }
    for (Tensor* g : grad_in) {
      if (g) g->round_to_dtype();
    }
    grads[i].reset();
  }

  for (std::size_t i = 0; i <= loss.id(); ++i) {
    if (nodes_[i].trainable && grads[i]) out.grads_.emplace(i, std::move(*grads[i]));
  }
  return out;
}

}  // namespace rawdrift
