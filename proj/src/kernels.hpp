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

// Dense kernels behind the tape primitives. Internal to the library.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "drupi/tensor.hpp"

namespace drupi::kernels {

/// C = op(A) * op(B); A is m x k (k x m when trans_a), B is k x n (n x k when trans_b).
/// Reductions longer than 4096 accumulate in double.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float* c);

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b);

// Stride-1 convolution, zero "same" padding, odd square kernels.
Tensor conv2d(const Tensor& x, const Tensor& w);
Tensor conv2d_back_input(const Tensor& gy, const Tensor& w, const Shape& x_shape);
Tensor conv2d_back_weight(const Tensor& x, const Tensor& gy, const Shape& w_shape);

Tensor avg_pool(const Tensor& x, std::size_t k);
Tensor avg_pool_back(const Tensor& g, std::size_t k, const Shape& x_shape);
Tensor max_pool(const Tensor& x, std::size_t k, std::vector<std::uint32_t>& argmax);
Tensor max_pool_scatter(const Tensor& g, const std::vector<std::uint32_t>& argmax,
                        const Shape& x_shape);
Tensor max_pool_gather(const Tensor& x, const std::vector<std::uint32_t>& argmax,
                       const Shape& y_shape);

Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);

/// Numpy-style broadcast of two shapes; throws ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sum `x` down to `shape`, which must broadcast to x's shape. Accumulates in double.
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor concat(const std::vector<const Tensor*>& xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor slice_pad(const Tensor& g, std::size_t axis, std::size_t begin, const Shape& full);

}  // namespace drupi::kernels
