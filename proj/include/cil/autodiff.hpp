#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

class Tape;

// Lightweight handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records a derived node; requires_grad is inherited from the parents.
  Var record(std::string op, std::vector<std::size_t> parents, Tensor value, Backprop backprop);

  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  std::vector<double>& grad_buffer(std::size_t id) { return nodes_[id].grad.mutable_data(); }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

enum class UnaryOp { relu, sigmoid, square };
enum class BinaryOp { add, sub, mul };

Var elementwise(UnaryOp op, Var a);
Var elementwise(BinaryOp op, Var a, Var b);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var scale(Var a, double factor);
// a[n×k] plus a [1×k] row broadcast down every row.
Var add_row(Var a, Var row);
Var sum(Var a);
Var mean(Var a);
Var select_rows(Var a, std::span<const std::size_t> rows);
Var concat_cols(Var a, Var b);
// Repeats a scalar into a rows×cols block.
Var broadcast(Var scalar, std::size_t rows, std::size_t cols);
// Stacks scalars into a k×1 column.
Var stack(std::span<const Var> scalars);
Var detach(Var a);

// Mean binary cross-entropy on logits; labels must be 0 or 1.
Var loss_bce(Var logits, const Tensor& labels);
// Mean softmax cross-entropy; logits n×k, labels in [0, k).
Var loss_softmax_ce(Var logits, std::span<const std::uint32_t> labels);
// Mean over rows of the squared Euclidean row distance.
Var loss_mse(Var pred, Var target);

}  // namespace cil
