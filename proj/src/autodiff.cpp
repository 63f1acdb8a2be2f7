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

#include "drupi/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "drupi/error.hpp"
#include "kernels.hpp"

namespace drupi {

namespace {

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor y(x.shape());
  const float* src = x.data().data();
  float* dst = y.data().data();
  for (std::size_t i = 0, n = x.numel(); i < n; ++i) dst[i] = f(src[i]);
  return y;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape())
    throw ShapeError("elementwise operands differ: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  Tensor y(a.shape());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* dst = y.data().data();
  for (std::size_t i = 0, n = a.numel(); i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return y;
}

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw InvalidArgument("operands live on different tapes");
  return a.tape();
}

Var prim(Op op, std::initializer_list<Var> in, OpAttrs attrs = {}) {
  Tape& t = in.begin()->tape();
  std::vector<NodeId> ids;
  for (Var v : in) {
    if (&v.tape() != &t) throw InvalidArgument("operands live on different tapes");
    ids.push_back(v.id());
  }
  return t.record(op, std::move(ids), std::move(attrs));
}

// Bring both operands to their common broadcast shape.
std::pair<Var, Var> broadcast_pair(Var a, Var b) {
  same_tape(a, b);
  if (a.shape() == b.shape()) return {a, b};
  const Shape s = kernels::broadcast_shape(a.shape(), b.shape());
  if (a.shape() != s) a = broadcast_to(a, s);
  if (b.shape() != s) b = broadcast_to(b, s);
  return {a, b};
}

Shape last_axis_kept(const Shape& s) {
  Shape r = s;
  r.back() = 1;
  return r;
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Pow: return "pow";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Relu: return "relu";
    case Op::ReluMask: return "relu_mask";
    case Op::Sigmoid: return "sigmoid";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::Conv2dBackInput: return "conv2d_back_input";
    case Op::Conv2dBackWeight: return "conv2d_back_weight";
    case Op::AvgPool: return "avg_pool";
    case Op::AvgPoolBack: return "avg_pool_back";
    case Op::MaxPool: return "max_pool";
    case Op::MaxPoolScatter: return "max_pool_scatter";
    case Op::MaxPoolGather: return "max_pool_gather";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Reshape: return "reshape";
    case Op::BroadcastTo: return "broadcast_to";
    case Op::SumTo: return "sum_to";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::SlicePad: return "slice_pad";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }

std::string Tape::leaf_name(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.name.empty() ? "leaf" + std::to_string(id) : n.name;
}

Var Tape::leaf(Tensor value, std::string name) {
  if (!value.all_finite()) throw NumericError("non-finite leaf value", nodes_.size());
  nodes_.push_back(Node{Op::Leaf, {}, {}, std::move(value), {}, std::move(name)});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant", nodes_.size());
  nodes_.push_back(Node{Op::Constant, {}, {}, std::move(value), {}, {}});
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Op op, std::vector<NodeId> inputs, OpAttrs attrs) {
  for (NodeId in : inputs)
    if (in >= nodes_.size()) throw InvalidArgument("input refers to a later node");
  nodes_.push_back(Node{op, std::move(inputs), std::move(attrs), Tensor(), {}, {}});
  const auto id = static_cast<NodeId>(nodes_.size() - 1);
  try {
    evaluate(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var(this, id);
}

void Tape::evaluate(NodeId id) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
  const OpAttrs& at = n.attrs;
  try {
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        return;
      case Op::Add: n.value = map_binary(in(0), in(1), [](float a, float b) { return a + b; }); break;
      case Op::Sub: n.value = map_binary(in(0), in(1), [](float a, float b) { return a - b; }); break;
      case Op::Mul: n.value = map_binary(in(0), in(1), [](float a, float b) { return a * b; }); break;
      case Op::Div: n.value = map_binary(in(0), in(1), [](float a, float b) { return a / b; }); break;
      case Op::Scale: {
        const float s = at.alpha;
        n.value = map_unary(in(0), [s](float v) { return v * s; });
        break;
      }
      case Op::Shift: {
        const float s = at.alpha;
        n.value = map_unary(in(0), [s](float v) { return v + s; });
        break;
      }
      case Op::Pow: {
        const float p = at.alpha;
        if (p == 2.0f)
          n.value = map_unary(in(0), [](float v) { return v * v; });
        else
          n.value = map_unary(in(0), [p](float v) { return std::pow(v, p); });
        break;
      }
      case Op::Exp: n.value = map_unary(in(0), [](float v) { return std::exp(v); }); break;
      case Op::Log: n.value = map_unary(in(0), [](float v) { return std::log(v); }); break;
      case Op::Relu: n.value = map_unary(in(0), [](float v) { return v > 0.0f ? v : 0.0f; }); break;
      case Op::ReluMask:
        n.value = map_binary(in(0), in(1), [](float g, float x) { return x > 0.0f ? g : 0.0f; });
        break;
      case Op::Sigmoid:
        n.value = map_unary(in(0), [](float v) { return 1.0f / (1.0f + std::exp(-v)); });
        break;
      case Op::MatMul: n.value = kernels::matmul(in(0), in(1), at.trans_a, at.trans_b); break;
      case Op::Conv2d: n.value = kernels::conv2d(in(0), in(1)); break;
      case Op::Conv2dBackInput: n.value = kernels::conv2d_back_input(in(0), in(1), at.shape); break;
      case Op::Conv2dBackWeight: n.value = kernels::conv2d_back_weight(in(0), in(1), at.shape); break;
      case Op::AvgPool: n.value = kernels::avg_pool(in(0), at.kernel); break;
      case Op::AvgPoolBack: n.value = kernels::avg_pool_back(in(0), at.kernel, at.shape); break;
      case Op::MaxPool: n.value = kernels::max_pool(in(0), at.kernel, n.argmax); break;
      case Op::MaxPoolScatter:
        n.value = kernels::max_pool_scatter(in(0), nodes_[at.ref].argmax, at.shape);
        break;
      case Op::MaxPoolGather:
        n.value = kernels::max_pool_gather(in(0), nodes_[at.ref].argmax, nodes_[at.ref].value.shape());
        break;
      case Op::Softmax: n.value = kernels::softmax_last(in(0)); break;
      case Op::LogSoftmax: n.value = kernels::log_softmax_last(in(0)); break;
      case Op::Reshape:
        if (numel(at.shape) != in(0).numel())
          throw ShapeError("cannot reshape " + to_string(in(0).shape()) + " to " + to_string(at.shape));
        n.value = in(0).reshaped(at.shape);
        break;
      case Op::BroadcastTo: n.value = kernels::broadcast_to(in(0), at.shape); break;
      case Op::SumTo: n.value = kernels::sum_to(in(0), at.shape); break;
      case Op::Concat: {
        std::vector<const Tensor*> xs;
        for (NodeId i : n.inputs) xs.push_back(&nodes_[i].value);
        n.value = kernels::concat(xs, at.axis);
        break;
      }
      case Op::Slice: n.value = kernels::slice(in(0), at.axis, at.begin, at.end); break;
      case Op::SlicePad: n.value = kernels::slice_pad(in(0), at.axis, at.begin, at.shape); break;
    }
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(op_name(n.op)) + ": " + e.what(), id);
  }
  if (!n.value.all_finite())
    throw NumericError(std::string(op_name(n.op)) + " produced a non-finite value", id);
}

const Tensor& Tape::forward(const std::map<NodeId, Tensor>& leaves, Var root) {
  if (&root.tape() != this) throw InvalidArgument("root is not on this tape");
  for (const auto& [id, value] : leaves) {
    if (id >= nodes_.size() || nodes_[id].op != Op::Leaf)
      throw InvalidArgument("node " + std::to_string(id) + " is not a leaf");
    if (value.shape() != nodes_[id].value.shape())
      throw ShapeError("leaf rebound from " + to_string(nodes_[id].value.shape()) + " to " +
                           to_string(value.shape()),
                       id);
    if (!value.all_finite()) throw NumericError("non-finite leaf value", id);
    nodes_[id].value = value;
  }
  for (NodeId id = 0; id < nodes_.size(); ++id) evaluate(id);
  return nodes_[root.id()].value;
}

std::vector<Var> Tape::gradients(Var root, std::span<const Var> wrt) {
  if (&root.tape() != this) throw InvalidArgument("root is not on this tape");
  if (root.value().numel() != 1)
    throw ShapeError("gradient root must be scalar, got " + to_string(root.shape()), root.id());
  const NodeId r = root.id();

  std::vector<char> needs(r + 1, 0);
  for (Var w : wrt) {
    if (&w.tape() != this) throw InvalidArgument("gradient target is not on this tape");
    if (w.id() <= r) needs[w.id()] = 1;
  }
  for (NodeId i = 0; i <= r; ++i)
    for (NodeId j : nodes_[i].inputs)
      if (needs[j]) needs[i] = 1;

  std::vector<Var> adj(r + 1);
  auto acc = [&](NodeId target, Var g) {
    if (!needs[target]) return;
    adj[target] = adj[target].valid() ? prim(Op::Add, {adj[target], g}) : g;
  };
  if (needs[r]) adj[r] = constant(Tensor(root.shape(), 1.0f));

  for (NodeId i = r + 1; i-- > 0;) {
    if (!adj[i].valid()) continue;
    // Copy what we need: recording new nodes may reallocate nodes_.
    const Op op = nodes_[i].op;
    const std::vector<NodeId> in = nodes_[i].inputs;
    const OpAttrs at = nodes_[i].attrs;
    const Var g = adj[i];
    const Var out(this, i);
    auto x = [&](std::size_t k) { return Var(this, in[k]); };
    auto shape_of = [&](std::size_t k) { return nodes_[in[k]].value.shape(); };

    switch (op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::Add:
        acc(in[0], g);
        acc(in[1], g);
        break;
      case Op::Sub:
        acc(in[0], g);
        if (needs[in[1]]) acc(in[1], scale(g, -1.0f));
        break;
      case Op::Mul:
        if (needs[in[0]]) acc(in[0], prim(Op::Mul, {g, x(1)}));
        if (needs[in[1]]) acc(in[1], prim(Op::Mul, {g, x(0)}));
        break;
      case Op::Div:
        if (needs[in[0]]) acc(in[0], prim(Op::Div, {g, x(1)}));
        if (needs[in[1]]) acc(in[1], scale(prim(Op::Div, {prim(Op::Mul, {g, out}), x(1)}), -1.0f));
        break;
      case Op::Scale:
        acc(in[0], scale(g, at.alpha));
        break;
      case Op::Shift:
        acc(in[0], g);
        break;
      case Op::Pow: {
        const float p = at.alpha;
        Var d = p == 2.0f ? scale(x(0), 2.0f) : scale(pow(x(0), p - 1.0f), p);
        acc(in[0], prim(Op::Mul, {g, d}));
        break;
      }
      case Op::Exp:
        acc(in[0], prim(Op::Mul, {g, out}));
        break;
      case Op::Log:
        acc(in[0], prim(Op::Div, {g, x(0)}));
        break;
      case Op::Relu:
        acc(in[0], prim(Op::ReluMask, {g, x(0)}));
        break;
      case Op::ReluMask:
        acc(in[0], prim(Op::ReluMask, {g, x(1)}));
        break;
      case Op::Sigmoid: {
        Var dsig = prim(Op::Mul, {out, shift(scale(out, -1.0f), 1.0f)});
        acc(in[0], prim(Op::Mul, {g, dsig}));
        break;
      }
      case Op::MatMul: {
        const bool ta = at.trans_a, tb = at.trans_b;
        if (needs[in[0]]) {
          Var da = !ta ? matmul(g, x(1), false, !tb) : matmul(x(1), g, tb, true);
          acc(in[0], da);
        }
        if (needs[in[1]]) {
          Var db = !tb ? matmul(x(0), g, !ta, false) : matmul(g, x(0), true, ta);
          acc(in[1], db);
        }
        break;
      }
      case Op::Conv2d:
        if (needs[in[0]])
          acc(in[0], prim(Op::Conv2dBackInput, {g, x(1)}, OpAttrs{.shape = shape_of(0)}));
        if (needs[in[1]])
          acc(in[1], prim(Op::Conv2dBackWeight, {x(0), g}, OpAttrs{.shape = shape_of(1)}));
        break;
      case Op::Conv2dBackInput:  // out = BI(gy = in0, w = in1), shaped like the conv input
        if (needs[in[0]]) acc(in[0], prim(Op::Conv2d, {g, x(1)}));
        if (needs[in[1]])
          acc(in[1], prim(Op::Conv2dBackWeight, {g, x(0)}, OpAttrs{.shape = shape_of(1)}));
        break;
      case Op::Conv2dBackWeight:  // out = BW(x = in0, gy = in1), shaped like the weight
        if (needs[in[0]])
          acc(in[0], prim(Op::Conv2dBackInput, {x(1), g}, OpAttrs{.shape = shape_of(0)}));
        if (needs[in[1]]) acc(in[1], prim(Op::Conv2d, {x(0), g}));
        break;
      case Op::AvgPool:
        acc(in[0], prim(Op::AvgPoolBack, {g}, OpAttrs{.shape = shape_of(0), .kernel = at.kernel}));
        break;
      case Op::AvgPoolBack:
        acc(in[0], prim(Op::AvgPool, {g}, OpAttrs{.kernel = at.kernel}));
        break;
      case Op::MaxPool:
        acc(in[0], prim(Op::MaxPoolScatter, {g}, OpAttrs{.shape = shape_of(0), .ref = i}));
        break;
      case Op::MaxPoolScatter:
        acc(in[0], prim(Op::MaxPoolGather, {g}, OpAttrs{.ref = at.ref}));
        break;
      case Op::MaxPoolGather:
        acc(in[0], prim(Op::MaxPoolScatter, {g}, OpAttrs{.shape = shape_of(0), .ref = at.ref}));
        break;
      case Op::Softmax: {
        const Shape s = nodes_[i].value.shape();
        Var dot = broadcast_to(sum_to(prim(Op::Mul, {g, out}), last_axis_kept(s)), s);
        acc(in[0], prim(Op::Mul, {out, prim(Op::Sub, {g, dot})}));
        break;
      }
      case Op::LogSoftmax: {
        const Shape s = nodes_[i].value.shape();
        Var total = broadcast_to(sum_to(g, last_axis_kept(s)), s);
        acc(in[0], prim(Op::Sub, {g, prim(Op::Mul, {exp(out), total})}));
        break;
      }
      case Op::Reshape:
        acc(in[0], reshape(g, shape_of(0)));
        break;
      case Op::BroadcastTo:
        acc(in[0], sum_to(g, shape_of(0)));
        break;
      case Op::SumTo:
        acc(in[0], broadcast_to(g, shape_of(0)));
        break;
      case Op::Concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t len = nodes_[in[k]].value.dim(at.axis);
          if (needs[in[k]]) acc(in[k], slice(g, at.axis, off, off + len));
          off += len;
        }
        break;
      }
      case Op::Slice:
        acc(in[0], prim(Op::SlicePad, {g}, OpAttrs{.shape = shape_of(0), .axis = at.axis, .begin = at.begin}));
        break;
      case Op::SlicePad: {
        const std::size_t len = shape_of(0)[at.axis];
        acc(in[0], slice(g, at.axis, at.begin, at.begin + len));
        break;
      }
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var w : wrt) {
    if (w.id() <= r && adj[w.id()].valid())
      out.push_back(adj[w.id()]);
    else
      out.push_back(constant(Tensor(w.shape(), 0.0f)));
  }
  return out;
}

GradMap backward(Var root, std::span<const Var> wrt) {
  Tape& t = root.tape();
  auto grads = t.gradients(root, wrt);
  GradMap m;
  for (std::size_t i = 0; i < wrt.size(); ++i) m[t.leaf_name(wrt[i].id())] = grads[i].value();
  return m;
}

GradMap grad_of_grad(Var root, std::span<const Var> inner_wrt, const OuterFn& outer,
                     std::span<const Var> outer_wrt) {
  Tape& t = root.tape();
  auto inner = t.gradients(root, inner_wrt);
  Var s = outer(inner);
  if (s.value().numel() != 1)
    throw ShapeError("outer function must return a scalar, got " + to_string(s.shape()), s.id());
  return backward(s, outer_wrt);
}

std::map<std::string, Tensor> sgd_step(const std::map<std::string, Tensor>& params,
                                       const GradMap& grads, float lr) {
  if (!(lr > 0.0f)) throw InvalidArgument("sgd_step: learning rate must be positive");
  std::map<std::string, Tensor> out;
  for (const auto& [name, theta] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw InvalidArgument("sgd_step: no gradient for " + name);
    if (it->second.shape() != theta.shape())
      throw ShapeError("sgd_step: gradient shape mismatch for " + name);
    Tensor next = theta;
    const float* g = it->second.data().data();
    float* p = next.data().data();
    for (std::size_t i = 0; i < next.numel(); ++i) p[i] -= lr * g[i];
    out.emplace(name, std::move(next));
  }
  return out;
}

Var add(Var a, Var b) {
  auto [x, y] = broadcast_pair(a, b);
  return prim(Op::Add, {x, y});
}

Var sub(Var a, Var b) {
  auto [x, y] = broadcast_pair(a, b);
  return prim(Op::Sub, {x, y});
}

Var mul(Var a, Var b) {
  auto [x, y] = broadcast_pair(a, b);
  return prim(Op::Mul, {x, y});
}

Var div(Var a, Var b) {
  auto [x, y] = broadcast_pair(a, b);
  return prim(Op::Div, {x, y});
}

Var scale(Var x, float alpha) { return prim(Op::Scale, {x}, OpAttrs{.alpha = alpha}); }
Var shift(Var x, float alpha) { return prim(Op::Shift, {x}, OpAttrs{.alpha = alpha}); }
Var pow(Var x, float exponent) { return prim(Op::Pow, {x}, OpAttrs{.alpha = exponent}); }
Var exp(Var x) { return prim(Op::Exp, {x}); }
Var log(Var x) { return prim(Op::Log, {x}); }
Var relu(Var x) { return prim(Op::Relu, {x}); }
Var sigmoid(Var x) { return prim(Op::Sigmoid, {x}); }

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  return prim(Op::MatMul, {a, b}, OpAttrs{.trans_a = trans_a, .trans_b = trans_b});
}

Var conv2d(Var x, Var w) { return prim(Op::Conv2d, {x, w}); }
Var avg_pool2d(Var x, std::size_t kernel) { return prim(Op::AvgPool, {x}, OpAttrs{.kernel = kernel}); }
Var max_pool2d(Var x, std::size_t kernel) { return prim(Op::MaxPool, {x}, OpAttrs{.kernel = kernel}); }

Var instance_norm(Var x, float eps) {
  if (x.shape().size() != 4) throw ShapeError("instance_norm expects NCHW input", x.id());
  const Shape& s = x.shape();
  const Shape stat{s[0], s[1], 1, 1};
  const float inv_hw = 1.0f / static_cast<float>(s[2] * s[3]);
  Var centered = x - scale(sum_to(x, stat), inv_hw);
  Var var = scale(sum_to(prim(Op::Mul, {centered, centered}), stat), inv_hw);
  return centered * pow(shift(var, eps), -0.5f);
}

Var softmax(Var x) { return prim(Op::Softmax, {x}); }
Var log_softmax(Var x) { return prim(Op::LogSoftmax, {x}); }

Var reshape(Var x, Shape shape) { return prim(Op::Reshape, {x}, OpAttrs{.shape = std::move(shape)}); }

Var flatten(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("flatten of a scalar", x.id());
  return reshape(x, Shape{s[0], numel(s) / s[0]});
}

Var broadcast_to(Var x, Shape shape) {
  if (x.shape() == shape) return x;
  return prim(Op::BroadcastTo, {x}, OpAttrs{.shape = std::move(shape)});
}

Var sum_to(Var x, Shape shape) {
  if (x.shape() == shape) return x;
  return prim(Op::SumTo, {x}, OpAttrs{.shape = std::move(shape)});
}

Var sum(Var x) { return prim(Op::SumTo, {x}, OpAttrs{.shape = Shape{}}); }

Var mean(Var x) { return scale(sum(x), 1.0f / static_cast<float>(x.value().numel())); }

Var sum_axes(Var x, std::span<const std::size_t> axes) {
  Shape s = x.shape();
  for (auto a : axes) {
    if (a >= s.size()) throw ShapeError("sum_axes axis out of range", x.id());
    s[a] = 1;
  }
  return sum_to(x, s);
}

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw InvalidArgument("concat of zero tensors");
  Tape& t = xs.front().tape();
  std::vector<NodeId> ids;
  for (Var v : xs) {
    if (&v.tape() != &t) throw InvalidArgument("operands live on different tapes");
    ids.push_back(v.id());
  }
  return t.record(Op::Concat, std::move(ids), OpAttrs{.axis = axis});
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  return prim(Op::Slice, {x}, OpAttrs{.axis = axis, .begin = begin, .end = end});
}

Var mse(Var a, Var b) {
  Var d = a - b;
  return mean(prim(Op::Mul, {d, d}));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range");
    t[i * classes + labels[i]] = 1.0f;
  }
  return t;
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size())
    throw ShapeError("cross_entropy expects N x C logits for N labels", logits.id());
  return soft_cross_entropy(logits, one_hot(labels, s[1]));
}

Var soft_cross_entropy(Var logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("soft_cross_entropy targets " + to_string(targets.shape()) +
                         " do not match logits " + to_string(logits.shape()),
                     logits.id());
  Var t = logits.tape().constant(targets);
  Var picked = prim(Op::Mul, {t, log_softmax(logits)});
  return scale(sum(picked), -1.0f / static_cast<float>(logits.shape()[0]));
}

}  // namespace drupi
