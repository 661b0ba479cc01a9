#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rawdrift/tensor.hpp"

namespace rawdrift {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of one backward pass, keyed by trainable leaf.
class Gradients {
 public:
  bool contains(Var leaf) const { return grads_.count(leaf.id()) != 0; }
  const Tensor& operator[](Var leaf) const;
  const Tensor* find(Var leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }
  bool empty() const noexcept { return grads_.empty(); }

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> grads_;
};

/// Adjoint of one recorded op. `grad_in[k]` is null when input k does not
/// need a gradient; otherwise the op adds its contribution into it.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

/// Single-owner record of operations for reverse-mode differentiation.
/// Nodes are appended in evaluation order, so reverse index order is a
/// valid topological order for the backward sweep.
class Tape {
 public:
  explicit Tape(DType dtype = DType::F64) : dtype_(dtype) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DType dtype() const noexcept { return dtype_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var leaf(Tensor value, bool trainable = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op output. The adjoint is kept only if some input needs a
  /// gradient; outputs are rounded to the tape dtype.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);

  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }

  /// Reverse sweep from a scalar loss. Only trainable leaves reachable from
  /// the loss appear in the result.
  Gradients backward(Var loss) const;

  /// Scales the adjoint of every node recorded under `op` by `factor`.
  /// Exists to give gradient checks a negative control.
  void inject_adjoint_fault(std::string op, double factor);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string_view op;
    bool trainable = false;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  DType dtype_;
  std::deque<Node> nodes_;  // stable element addresses across appends
  std::optional<std::pair<std::string, double>> fault_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace rawdrift
