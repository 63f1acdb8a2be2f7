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
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drupi/autodiff.hpp"
#include "drupi/tensor.hpp"

namespace drupi::nn {

enum class Family { ConvNet, Mlp, LeNet };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

/// Architecture g = kappa o psi: `depth` feature blocks followed by a linear classifier.
///
/// ConvNet block: conv3x3 -> instance-norm -> relu -> avg-pool 2x2.
/// LeNet block:   conv3x3 -> relu -> max-pool 2x2.
/// Mlp block:     linear(width) -> relu, on the flattened input.
struct ModelSpec {
  Family family = Family::ConvNet;
  std::size_t depth = 2;
  std::size_t width = 32;
  Shape input{1, 16, 16};  // Ch x H x W
  std::size_t classes = 10;

  /// Throws InvalidArgument on inconsistent dimensions.
  void validate() const;
  /// Per-example output shape of block `layer` (1-based).
  Shape feature_shape(std::size_t layer) const;
  bool operator==(const ModelSpec&) const = default;
};

std::string describe(const ModelSpec& spec);

using ParamMap = std::map<std::string, Tensor>;

struct ModelState {
  ModelSpec spec;
  ParamMap params;
  std::uint64_t seed = 0;
};

/// Which block's output psi emits, 1..depth.
struct FeatureTap {
  std::size_t layer = 0;

  static FeatureTap final_layer(const ModelSpec& spec) { return FeatureTap{spec.depth}; }
  void validate(const ModelSpec& spec) const;
};

/// Fan-in scaled (He) uniform weights, zero biases; deterministic per seed.
ModelState init_model(const ModelSpec& spec, std::uint64_t seed);

/// Short hex digest of the parameter bytes.
std::string param_hash(const ModelState& model);

/// A model's parameters bound as named leaves on a tape.
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelState& state);

  struct Output {
    Var features;
    Var logits;
  };

  Output forward(Var x, FeatureTap tap) const;
  /// kappa alone; `features` must have the final block's shape.
  Var classify(Var features) const;
  /// Remaining blocks after `tap`, then kappa.
  Var head_from(Var features, FeatureTap tap) const;

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<Var>& params() const noexcept { return leaves_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  Var param(const std::string& name) const;
  Var block(std::size_t layer, Var h) const;

  ModelSpec spec_;
  std::vector<std::string> names_;
  std::vector<Var> leaves_;
};

struct SplitOutput {
  Tensor features;
  Tensor logits;
};

/// psi at `tap` and the logits, for a batch N x Ch x H x W.
SplitOutput forward_split(const ModelState& model, const Tensor& x, FeatureTap tap);

/// kappa(f) for final-layer shaped features (batch-leading). Rejects tap != depth.
Tensor classify_feature(const ModelState& model, const Tensor& features, FeatureTap tap);

ModelState sgd_step(const ModelState& model, const GradMap& grads, float lr);

/// Class predictions, evaluated in chunks.
std::vector<int> predict(const ModelState& model, const Tensor& images);

}  // namespace drupi::nn
