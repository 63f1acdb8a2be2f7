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
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace drupi {

/// Dimensions of a tensor, outermost first. An empty shape is a scalar.
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of 32-bit reals.
class Tensor {
 public:
  /// Scalar zero.
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value);
  static Tensor from(std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& vec() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Value of a one-element tensor.
  float item() const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Rows [begin, end) along the leading axis.
  Tensor rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

/// Gather rows of the leading axis.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace drupi
