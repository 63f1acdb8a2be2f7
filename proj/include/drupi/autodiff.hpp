/*
 * Copyright 2026 The drupi Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drupi/tensor.hpp"

namespace drupi {

using NodeId = std::uint32_t;

/// Primitive operations a tape can record.
enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Scale,  // x * alpha
  Shift,  // x + alpha
  Pow,    // x ^ alpha
  Exp,
  Log,
  Relu,
  ReluMask,  // g * [x > 0]; the mask is constant under differentiation
  Sigmoid,
  MatMul,
  Conv2d,
  Conv2dBackInput,
  Conv2dBackWeight,
  AvgPool,
  AvgPoolBack,
  MaxPool,
  MaxPoolScatter,  // argmax routing of a max-pool is constant under differentiation
  MaxPoolGather,
  Softmax,
  LogSoftmax,
  Reshape,
  BroadcastTo,
  SumTo,
  Concat,
  Slice,
  SlicePad,
};

std::string_view op_name(Op op);

class Tape;

/// Handle to a node of a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradient tensors keyed by leaf name.
using GradMap = std::map<std::string, Tensor>;

/// Attributes of a recorded primitive; which fields matter depends on the op.
struct OpAttrs {
  float alpha = 0.0f;
  Shape shape;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t kernel = 0;
  bool trans_a = false;
  bool trans_b = false;
  NodeId ref = 0;
};

/// Append-only record of primitive ops evaluated eagerly. Gradients are
/// recorded as further nodes, so any gradient can be differentiated again.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Bindable input. Unnamed leaves are reported as "leaf<id>".
  Var leaf(Tensor value, std::string name = {});
  Var constant(Tensor value);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::string leaf_name(NodeId id) const;

  Var record(Op op, std::vector<NodeId> inputs, OpAttrs attrs = {});

  /// d(root)/d(w) for each w, as new tape nodes. Root must hold one element.
  /// Leaves that do not influence root get zero constants.
  std::vector<Var> gradients(Var root, std::span<const Var> wrt);

  /// Rebind leaves and recompute every node in order; returns the new root value.
  /// Throws ShapeError if a bound value changes shape, NumericError on NaN/Inf.
  const Tensor& forward(const std::map<NodeId, Tensor>& leaves, Var root);

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    std::vector<std::uint32_t> argmax;
    std::string name;
  };

  void evaluate(NodeId id);

  std::vector<Node> nodes_;
};

/// First-order gradients of a scalar root, as values keyed by leaf name.
GradMap backward(Var root, std::span<const Var> wrt);

using OuterFn = std::function<Var(std::span<const Var> inner_grads)>;

/// d outer(d root / d inner_wrt) / d outer_wrt via double backprop.
GradMap grad_of_grad(Var root, std::span<const Var> inner_wrt, const OuterFn& outer,
                     std::span<const Var> outer_wrt);

/// theta <- theta - lr * grad for every entry of `params`; each needs a gradient.
std::map<std::string, Tensor> sgd_step(const std::map<std::string, Tensor>& params,
                                       const GradMap& grads, float lr);

// Elementwise ops broadcast numpy-style.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var scale(Var x, float alpha);
Var shift(Var x, float alpha);
Var pow(Var x, float exponent);
Var exp(Var x);
Var log(Var x);
Var relu(Var x);
Var sigmoid(Var x);

Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
/// Stride 1, zero "same" padding, odd square kernel. x: NxCxHxW, w: OxCxKxK.
Var conv2d(Var x, Var w);
Var avg_pool2d(Var x, std::size_t kernel = 2);
Var max_pool2d(Var x, std::size_t kernel = 2);
/// Per-example, per-channel normalization over H x W (no affine).
Var instance_norm(Var x, float eps = 1e-5f);
Var softmax(Var x);
Var log_softmax(Var x);

Var reshape(Var x, Shape shape);
/// Collapse all but the leading axis.
Var flatten(Var x);
Var broadcast_to(Var x, Shape shape);
Var sum_to(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);
/// Sum over the given axes, keeping them as size 1.
Var sum_axes(Var x, std::span<const std::size_t> axes);
Var concat(std::span<const Var> xs, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);

/// Mean squared error over all elements.
Var mse(Var a, Var b);
/// Mean cross-entropy of row logits against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Mean cross-entropy of row logits against row-stochastic targets.
Var soft_cross_entropy(Var logits, const Tensor& targets);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace drupi
