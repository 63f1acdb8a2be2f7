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
#include <span>
#include <vector>

#include "drupi/autodiff.hpp"
#include "drupi/tensor.hpp"

namespace drupi::metrics {

/// Lloyd's algorithm with k-means++ seeding on rows of an N x D matrix. Ties go to the lower cluster index.
std::vector<int> kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t iterations = 50);

/// Plug-in mutual information in nats between two discrete labelings.
double mutual_information(std::span<const int> a, std::span<const int> b);

/// Held-in accuracy of softmax regression on z-scored rows, trained by full-batch gradient descent.
double linear_probe_accuracy(const Tensor& points, std::span<const int> labels, std::size_t classes,
                             std::size_t steps = 200, double lr = 0.5);

struct DiversityReport {
  double diversity = 0;        // -I(cluster; label)
  double discriminability = 0; // probe accuracy
  double mutual_information = 0;
  bool degenerate = false;     // all feature labels identical
};

/// Feature labels M x n_feat x (shape) are averaged over n_feat and flattened.
/// Needs >= 2 classes and >= 2 examples per class.
DiversityReport diversity_discriminability(const Tensor& feature_sets, std::span<const int> labels,
                                           std::size_t classes, std::uint64_t seed);

struct Cosine {
  double value = 0;
  bool degenerate = false;  // a zero-norm side; value reported as 0
};

/// Cosine between two gradient maps flattened in key order. Keys must agree.
Cosine gradient_cosine(const GradMap& a, const GradMap& b);

}  // namespace drupi::metrics
