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

#include "drupi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "drupi/error.hpp"

namespace drupi {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor() : data_(1, 0.0f) {}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("zero-sized dimension in " + to_string(shape_));
  data_.assign(drupi::numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("zero-sized dimension in " + to_string(shape_));
  if (drupi::numel(shape_) != data_.size())
    throw ShapeError("shape " + to_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor(Shape{values.size()}, std::vector<float>(values));
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0])
    throw ShapeError("row range out of bounds for " + to_string(shape_));
  const std::size_t stride = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + begin * stride,
                                                 data_.begin() + end * stride));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape s{items.size()};
  const Shape& inner = items.front().shape();
  s.insert(s.end(), inner.begin(), inner.end());
  std::vector<float> data;
  data.reserve(numel(s));
  for (const auto& t : items) {
    if (t.shape() != inner) throw ShapeError("stack of mismatched shapes");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(s), std::move(data));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  if (t.rank() == 0 || rows.empty()) throw ShapeError("gather_rows needs rows and rank >= 1");
  const std::size_t stride = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = rows.size();
  std::vector<float> data;
  data.reserve(rows.size() * stride);
  for (auto r : rows) {
    if (r >= t.dim(0)) throw ShapeError("row index out of range");
    data.insert(data.end(), t.data().begin() + r * stride, t.data().begin() + (r + 1) * stride);
  }
  return Tensor(std::move(s), std::move(data));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff of mismatched shapes");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace drupi
