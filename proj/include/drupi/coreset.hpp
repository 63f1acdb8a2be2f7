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
#include <string_view>
#include <vector>

#include "drupi/data.hpp"
#include "drupi/nn.hpp"
#include "drupi/train.hpp"

namespace drupi::coreset {

enum class Method { Random, Herding, KCenter, Forgetting };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct SelectionScore {
  std::vector<double> score;
  Method method = Method::Random;
};

/// Uniform per-class sample without replacement. Output is class-major.
std::vector<std::size_t> select_random(const data::LabeledDataset& ds, std::size_t ipc, std::uint64_t seed);

/// Per class, greedily add the point that brings the running mean closest to the class mean.
std::vector<std::size_t> select_herding(const Tensor& features, std::span<const int> labels,
                                        std::size_t classes, std::size_t ipc);

/// Per class, start from the point nearest the class mean, then add the farthest point from the chosen set.
std::vector<std::size_t> select_kcenter(const Tensor& features, std::span<const int> labels,
                                        std::size_t classes, std::size_t ipc);

/// Correct -> incorrect transitions per example; rows of `correct` are consecutive epochs.
/// Examples never classified correctly score +infinity.
std::vector<double> forgetting_events(const std::vector<std::vector<bool>>& correct);

/// Highest `ipc` scores within each class, ties to the lowest index.
std::vector<std::size_t> top_per_class(std::span<const double> score, std::span<const int> labels,
                                       std::size_t classes, std::size_t ipc);

struct ProxyOptions {
  nn::ModelSpec spec;
  nn::TrainOptions train{10, 0.01f, 64, 0};
};

/// Trains a proxy for `opts.train.epochs` epochs (>= 2) and counts forgetting events.
SelectionScore forgetting_scores(const data::LabeledDataset& ds, const ProxyOptions& opts, std::uint64_t seed);

std::vector<std::size_t> select_forgetting(const data::LabeledDataset& ds, std::size_t ipc,
                                           const ProxyOptions& opts, std::uint64_t seed);

/// Flattened final-layer features of a model, N x d.
Tensor embed(const nn::ModelState& model, const Tensor& images);

/// Largest distance from any class member to its nearest selected member of the same class.
double covering_radius(const Tensor& features, std::span<const int> labels, std::span<const std::size_t> selected);

}  // namespace drupi::coreset
