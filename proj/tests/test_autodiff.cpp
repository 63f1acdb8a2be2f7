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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "drupi/autodiff.hpp"
#include "drupi/error.hpp"
#include "support/gradcheck.hpp"
#include "support/primitive_cases.hpp"

using namespace drupi;
using namespace drupi::testing;

TEST_CASE("forward evaluates recorded primitives") {
  Tape t;
  Var a = t.leaf(Tensor::from({1, 2}));
  Var b = t.leaf(Tensor::from({3, 4}));
  CHECK((a + b).value() == Tensor::from({4, 6}));

  Tensor m({3, 3});
  for (std::size_t i = 0; i < 9; ++i) m[i] = static_cast<float>(i) * 0.5f - 1.0f;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 4] = 1.0f;
  CHECK(matmul(t.constant(eye), t.leaf(m)).value() == m);

  CHECK(relu(t.leaf(Tensor::from({-1, 0, 2}))).value() == Tensor::from({0, 0, 2}));
}

TEST_CASE("forward rejects shape mismatches and non-finite values with the node id") {
  Tape t;
  Var a = t.leaf(Tensor::from({1, 2}));
  Var b = t.leaf(Tensor::from({1, 2, 3}));
  CHECK_THROWS_AS(a + b, ShapeError);
  try {
    matmul(t.leaf(Tensor({2, 3})), t.leaf(Tensor({2, 3})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.node() >= 0);
  }

  Var x = t.leaf(Tensor::from({1, 2}));
  Var lx = log(x);
  try {
    t.forward({{x.id(), Tensor::from({-1, 2})}}, lx);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.node() == static_cast<std::int64_t>(lx.id()));
  }
  CHECK_THROWS_AS(t.forward({{x.id(), Tensor::from({1, 2, 3})}}, lx), ShapeError);
}

TEST_CASE("backward closed forms") {
  Tape t;
  Var x = t.leaf(Tensor::from({1, 2, 3}), "x");
  std::vector<Var> wrt{x};
  auto g = backward(sum(x * x), wrt);
  CHECK(g.at("x") == Tensor::from({2, 4, 6}));

  auto z = backward(mse(x, x), wrt);
  for (float v : z.at("x").data()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(backward(x * x, wrt), ShapeError);

  Var unused = t.leaf(Tensor::from({5}), "unused");
  std::vector<Var> both{x, unused};
  auto g2 = backward(sum(x), both);
  CHECK(g2.at("unused") == Tensor::from({0}));
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  Rng rng(11);
  for (int c = 0; c < 5; ++c) {
    Tape t;
    Var z = t.leaf(random_tensor(rng, {1, 4}, -2.0f, 2.0f));
    std::vector<int> label{static_cast<int>(rng.below(4))};
    Var loss = cross_entropy(z, label);
    std::vector<Var> wrt{z};
    Tensor analytic = t.gradients(loss, wrt)[0].value();
    auto numeric = numeric_gradient(t, loss, z, 1e-3);
    CHECK(relative_error(to_doubles(analytic), numeric) < 1e-3);

    Tensor expected = softmax(z).value();
    expected[label[0]] -= 1.0f;
    CHECK(max_abs_diff(analytic, expected) < 1e-6f);
  }
}

TEST_CASE("every primitive matches central finite differences") {
  for (const auto& pc : primitive_cases()) {
    Rng rng(derive_seed(7, pc.name));
    for (int trial = 0; trial < 20; ++trial) {
      auto inputs = pc.inputs(rng);
      const double err = check_gradients(inputs, [&](Tape& t, std::vector<Var>& v) {
        return pc.build(t, v, rng);
      });
      INFO(pc.name << " trial " << trial);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("grad_of_grad closed form: d/dx (d(theta*x)/dtheta)^2 = 2x") {
  Tape t;
  Var theta = t.leaf(Tensor::scalar(0.7f), "theta");
  Var x = t.leaf(Tensor::scalar(3.0f), "x");
  std::vector<Var> inner{theta}, outer{x};
  auto g = grad_of_grad(theta * x, inner, [](std::span<const Var> gr) { return gr[0] * gr[0]; }, outer);
  CHECK(g.at("x").item() == doctest::Approx(6.0f));
}

TEST_CASE("grad_of_grad on a 2-parameter linear model matches finite differences") {
  Tape t;
  Var x = t.leaf(Tensor::from({0.4f, -1.3f}), "x");
  Var w = t.leaf(Tensor::from({0.9f, 0.2f}), "w");
  Var target = t.constant(Tensor::from({0.5f, -0.25f}));
  Var loss = pow(shift(sum(w * x), -1.0f), 2.0f);
  std::vector<Var> inner{w}, outer_wrt{x};
  auto inner_grads = t.gradients(loss, inner);
  Var d = inner_grads[0] - target;
  Var outer = sum(d * d);
  std::vector<Var> xs{x};
  Tensor analytic = t.gradients(outer, xs)[0].value();
  auto numeric = numeric_gradient(t, outer, x);
  CHECK(relative_error(to_doubles(analytic), numeric) < 1e-3);
}

TEST_CASE("grad_of_grad of a constant outer function is zero") {
  Tape t;
  Var x = t.leaf(Tensor::from({1, 2}), "x");
  Var w = t.leaf(Tensor::from({3, 4}), "w");
  std::vector<Var> inner{w}, outer{x};
  Var c = t.constant(Tensor::scalar(2.0f));
  auto g = grad_of_grad(sum(w * x), inner, [&](std::span<const Var>) { return c; }, outer);
  CHECK(g.at("x") == Tensor::from({0, 0}));
  CHECK_THROWS_AS(grad_of_grad(sum(w * x), inner, [](std::span<const Var> gr) { return gr[0]; }, outer),
                  ShapeError);
}

TEST_CASE("grad_of_grad on small conv models matches finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const bool use_max = trial % 2 == 1;
    auto in = tiny_model_inputs(rng, use_max);
    Tape t;
    std::vector<Var> leaves;
    for (auto& v : in.inputs) leaves.push_back(t.leaf(v));
    Var loss = tiny_model_loss(leaves, use_max);
    std::vector<Var> params{leaves[1], leaves[2]};
    auto grads = t.gradients(loss, params);
    Var outer = sum(grads[0] * grads[0]) + sum(grads[1] * t.constant(random_tensor(rng, {8, 2})));
    std::vector<Var> wrt{leaves[0], leaves[1]};
    auto second = t.gradients(outer, wrt);
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      auto numeric = numeric_gradient(t, outer, wrt[i]);
      INFO("trial " << trial << " wrt " << i);
      CHECK(relative_error(to_doubles(second[i].value()), numeric) < 1e-3);
    }
  }
}

TEST_CASE("replaying a tape is bit-identical") {
  Rng rng(5);
  auto in = tiny_model_inputs(rng);
  Tape t;
  std::vector<Var> leaves;
  for (auto& v : in.inputs) leaves.push_back(t.leaf(v));
  Var loss = tiny_model_loss(leaves, false);
  std::vector<Var> params{leaves[1]};
  Var g = t.gradients(loss, params)[0];
  const Tensor first_loss = loss.value(), first_grad = g.value();
  std::map<NodeId, Tensor> same;
  for (std::size_t i = 0; i < leaves.size(); ++i) same[leaves[i].id()] = in.inputs[i];
  t.forward(same, g);
  CHECK(loss.value() == first_loss);
  CHECK(g.value() == first_grad);
}

TEST_CASE("gradient of a batch sum equals the sum of per-example gradients") {
  Rng rng(9);
  Tensor w = random_tensor(rng, {3, 2});
  Tensor x = random_tensor(rng, {4, 3});
  auto grad_for = [&](const Tensor& batch) {
    Tape t;
    Var wv = t.leaf(w, "w");
    Var out = sum(pow(matmul(t.constant(batch), wv), 2.0f));
    std::vector<Var> wrt{wv};
    return backward(out, wrt).at("w");
  };
  Tensor total = grad_for(x);
  Tensor acc({3, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor gi = grad_for(x.rows(i, i + 1));
    for (std::size_t k = 0; k < acc.numel(); ++k) acc[k] += gi[k];
  }
  CHECK(max_abs_diff(total, acc) < 1e-5f);
}

TEST_CASE("sgd_step") {
  std::map<std::string, Tensor> p{{"theta", Tensor::from({1})}};
  CHECK(sgd_step(p, {{"theta", Tensor::from({2})}}, 0.5f).at("theta") == Tensor::from({0}));
  CHECK(sgd_step(p, {{"theta", Tensor::from({0})}}, 0.5f).at("theta") == Tensor::from({1}));
  CHECK_THROWS_AS(sgd_step(p, {{"theta", Tensor::from({0})}}, 0.0f), InvalidArgument);
  CHECK_THROWS_AS(sgd_step(p, {}, 0.1f), InvalidArgument);

  for (int i = 0; i < 10; ++i) {
    Tape t;
    Var th = t.leaf(p.at("theta"), "theta");
    std::vector<Var> wrt{th};
    p = sgd_step(p, backward(sum(th * th), wrt), 0.1f);
  }
  CHECK(p.at("theta").item() == doctest::Approx(std::pow(0.8, 10)).epsilon(1e-5));
}
