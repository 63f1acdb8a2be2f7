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
#include <optional>
#include <string_view>
#include <vector>

#include "drupi/autodiff.hpp"
#include "drupi/data.hpp"
#include "drupi/nn.hpp"
#include "drupi/rng.hpp"

namespace drupi::privileged {

using data::AttentionKind;

/// How the n_feat members of a feature-label set are consumed.
enum class Aggregation { Average, Random };

std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

struct DrupiLossConfig {
  float lambda_reg = 0.5f;
  float lambda_task = 0.1f;
  float lambda_soft = 0.0f;
  Aggregation aggregation = Aggregation::Average;
  /// When set, regression compares pooled model features to attention labels.
  std::optional<AttentionKind> attention;
  /// Optional contrastive term between feature labels and model features.
  float lambda_nce = 0.0f;
  float nce_temperature = 0.1f;

  void validate() const;
  bool privileged_off() const noexcept {
    return lambda_reg == 0.0f && lambda_task == 0.0f && lambda_soft == 0.0f && lambda_nce == 0.0f;
  }
};

/// Inputs to the shared loss. Optional channels are left invalid when absent.
struct LossInputs {
  Var images;                 // B x Ch x H x W
  std::span<const int> labels;
  Var features;               // B x n_feat x (feature shape)
  Var attention;              // B x (pooled shape)
  const Tensor* soft = nullptr;  // B x C
};

/// Weighted contributions; they sum to the total.
struct LossComponents {
  double cls = 0, reg = 0, task = 0, soft = 0, nce = 0;
  double sum() const noexcept { return cls + reg + task + soft + nce; }
};

/// Which pooling met which tensors when attention supervision was active.
struct PoolingTrace {
  AttentionKind kind;
  Shape model_features;  // tap output before pooling
  Shape model_pooled;
  Shape label;
};

struct LossResult {
  Var total;
  LossComponents components;
  std::optional<PoolingTrace> pooling;
};

/// Optional map from stored feature labels to the model's tap shape (see lupi::Aligner).
using AlignFn = std::function<Var(Var stored)>;

/// L_cls + lambda_reg * L_reg + lambda_task * L_task + lambda_soft * KL (+ lambda_nce * InfoNCE).
/// Terms with zero weight are not evaluated. `rng` is needed for random-pick aggregation.
LossResult drupi_loss(const nn::BoundModel& model, const LossInputs& in, const DrupiLossConfig& cfg,
                      nn::FeatureTap tap, Rng* rng = nullptr, const AlignFn& align = {});

/// Feature-label set reduced to one label per example, B x (feature shape).
Var aggregate_features(Var features, Aggregation mode, Rng* rng);

/// Mean over channels (spatial, -> 1 x H x W) or over H x W (channel, -> Ch x 1 x 1).
/// Accepts Ch x H x W or a batch B x Ch x H x W.
Tensor pool_attention(const Tensor& features, AttentionKind kind);
Var pool_attention(Var features, AttentionKind kind);
Shape pooled_shape(const Shape& feature_shape, AttentionKind kind);

/// f_i = psi(x_i) at `tap`; result is M x 1 x (feature shape).
Tensor assign_features(const Tensor& images, const nn::ModelState& extractor, nn::FeatureTap tap);

enum class FeatureInit { Noise, WeakModel };

struct FeatureInitOptions {
  FeatureInit mode = FeatureInit::WeakModel;
  std::size_t n_feat = 1;
  float noise_std = 0.1f;     // Noise mode draw
  float symmetry_std = 0.01f; // per-copy perturbation
};

/// Noise mode needs `feature_shape`; weak-model mode needs `extractor` (and `tap`).
Tensor init_features(const Tensor& images, const FeatureInitOptions& opts, std::uint64_t seed,
                     const Shape& feature_shape, const nn::ModelState* extractor = nullptr,
                     nn::FeatureTap tap = {});

/// Rows softmax(logits / temperature). Rejects temperature <= 0.
Tensor soft_labels(const Tensor& images, const nn::ModelState& teacher, float temperature = 4.0f);

}  // namespace drupi::privileged
