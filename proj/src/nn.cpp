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

#include "drupi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "drupi/error.hpp"
#include "drupi/rng.hpp"

namespace drupi::nn {

namespace {

std::string weight_name(std::size_t layer) { return "block" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "block" + std::to_string(layer) + ".bias"; }

bool is_conv(Family f) { return f == Family::ConvNet || f == Family::LeNet; }

// Parameter shapes in initialization order.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelSpec& s) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in_ch = s.input[0];
  std::size_t in_dim = numel(s.input);
  for (std::size_t l = 1; l <= s.depth; ++l) {
    if (is_conv(s.family)) {
      out.emplace_back(weight_name(l), Shape{s.width, in_ch, 3, 3});
      in_ch = s.width;
    } else {
      out.emplace_back(weight_name(l), Shape{in_dim, s.width});
      in_dim = s.width;
    }
    out.emplace_back(bias_name(l), Shape{s.width});
  }
  out.emplace_back("classifier.weight", Shape{numel(s.feature_shape(s.depth)), s.classes});
  out.emplace_back("classifier.bias", Shape{s.classes});
  return out;
}

std::size_t fan_in(const Shape& w) { return numel(w) / (w.size() == 4 ? w[0] : w[1]); }

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::ConvNet: return "convnet";
    case Family::Mlp: return "mlp";
    case Family::LeNet: return "lenet";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "convnet") return Family::ConvNet;
  if (name == "mlp") return Family::Mlp;
  if (name == "lenet" || name == "lenet-like") return Family::LeNet;
  throw InvalidArgument("unknown model family '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
  if (depth < 1) throw InvalidArgument("model depth must be >= 1");
  if (width < 1) throw InvalidArgument("model width must be >= 1");
  if (classes < 2) throw InvalidArgument("model needs at least 2 classes");
  if (input.size() != 3 || numel(input) == 0)
    throw InvalidArgument("model input must be Ch x H x W, got " + to_string(input));
  if (is_conv(family)) {
    const std::size_t f = std::size_t{1} << depth;
    if (input[1] % f != 0 || input[2] % f != 0)
      throw InvalidArgument("input " + to_string(input) + " is not divisible by 2^depth = " +
                            std::to_string(f));
  }
}

Shape ModelSpec::feature_shape(std::size_t layer) const {
  if (layer < 1 || layer > depth) throw InvalidArgument("feature layer out of range");
  if (!is_conv(family)) return {width};
  return {width, input[1] >> layer, input[2] >> layer};
}

std::string describe(const ModelSpec& s) {
  return std::string(family_name(s.family)) + "-d" + std::to_string(s.depth) + "-w" +
         std::to_string(s.width);
}

void FeatureTap::validate(const ModelSpec& spec) const {
  if (layer < 1 || layer > spec.depth)
    throw InvalidArgument("feature tap " + std::to_string(layer) + " outside 1.." +
                          std::to_string(spec.depth));
}

ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelState m{spec, {}, seed};
  Rng rng(seed);
  for (auto& [name, shape] : param_layout(spec)) {
    Tensor t(shape);
    if (shape.size() > 1) {
      const float bound = std::sqrt(6.0f / static_cast<float>(fan_in(shape)));
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    }
    m.params.emplace(name, std::move(t));
  }
  return m;
}

std::string param_hash(const ModelState& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : model.params) {
    for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int k = 0; k < 4; ++k) h = (h ^ ((bits >> (8 * k)) & 0xff)) * 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BoundModel::BoundModel(Tape& tape, const ModelState& state) : spec_(state.spec) {
  for (auto& [name, shape] : param_layout(spec_)) {
    auto it = state.params.find(name);
    if (it == state.params.end()) throw InvalidArgument("model state lacks parameter " + name);
    if (it->second.shape() != shape)
      throw ShapeError(name + " has shape " + to_string(it->second.shape()) + ", expected " +
                       to_string(shape));
    names_.push_back(name);
    leaves_.push_back(tape.leaf(it->second, name));
  }
}

Var BoundModel::param(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return leaves_[i];
  throw InvalidArgument("no parameter " + name);
}

Var BoundModel::block(std::size_t layer, Var h) const {
  Var w = param(weight_name(layer));
  Var b = param(bias_name(layer));
  switch (spec_.family) {
    case Family::ConvNet: {
      Var c = conv2d(h, w) + reshape(b, {spec_.width, 1, 1});
      return avg_pool2d(relu(instance_norm(c)));
    }
    case Family::LeNet: {
      Var c = conv2d(h, w) + reshape(b, {spec_.width, 1, 1});
      return max_pool2d(relu(c));
    }
    case Family::Mlp:
      return relu(matmul(h, w) + b);
  }
  throw InvalidArgument("unknown family");
}

BoundModel::Output BoundModel::forward(Var x, FeatureTap tap) const {
  tap.validate(spec_);
  const Shape& s = x.shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != spec_.input)
    throw ShapeError("model expects N x " + to_string(spec_.input) + " input, got " + to_string(s));
  Var h = is_conv(spec_.family) ? x : flatten(x);
  Var features;
  for (std::size_t l = 1; l <= spec_.depth; ++l) {
    h = block(l, h);
    if (l == tap.layer) features = h;
  }
  return {features, classify(h)};
}

Var BoundModel::classify(Var features) const {
  const Shape& s = features.shape();
  const Shape expect = spec_.feature_shape(spec_.depth);
  if (s.empty() || Shape(s.begin() + 1, s.end()) != expect)
    throw ShapeError("classifier expects N x " + to_string(expect) + " features, got " + to_string(s));
  return matmul(flatten(features), param("classifier.weight")) + param("classifier.bias");
}

Var BoundModel::head_from(Var features, FeatureTap tap) const {
  tap.validate(spec_);
  const Shape& s = features.shape();
  const Shape expect = spec_.feature_shape(tap.layer);
  if (s.empty() || Shape(s.begin() + 1, s.end()) != expect)
    throw ShapeError("layer " + std::to_string(tap.layer) + " expects N x " + to_string(expect) +
                     " features, got " + to_string(s));
  Var h = features;
  for (std::size_t l = tap.layer + 1; l <= spec_.depth; ++l) h = block(l, h);
  return classify(h);
}

SplitOutput forward_split(const ModelState& model, const Tensor& x, FeatureTap tap) {
  Tape t;
  BoundModel m(t, model);
  auto out = m.forward(t.constant(x), tap);
  return {out.features.value(), out.logits.value()};
}

Tensor classify_feature(const ModelState& model, const Tensor& features, FeatureTap tap) {
  tap.validate(model.spec);
  if (tap.layer != model.spec.depth)
    throw InvalidArgument("classify_feature needs final-layer features (tap " +
                          std::to_string(model.spec.depth) + "), got tap " +
                          std::to_string(tap.layer));
  Tape t;
  BoundModel m(t, model);
  return m.classify(t.constant(features)).value();
}

ModelState sgd_step(const ModelState& model, const GradMap& grads, float lr) {
  return ModelState{model.spec, drupi::sgd_step(model.params, grads, lr), model.seed};
}

std::vector<int> predict(const ModelState& model, const Tensor& images) {
  constexpr std::size_t kChunk = 256;
  std::vector<int> out;
  const std::size_t n = images.dim(0);
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += kChunk) {
    Tensor logits = forward_split(model, images.rows(b, std::min(n, b + kChunk)),
                                  FeatureTap::final_layer(model.spec)).logits;
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
      const float* row = logits.data().data() + i * c;
      out.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

}  // namespace drupi::nn
