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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drupi/autodiff.hpp"
#include "drupi/data.hpp"
#include "drupi/nn.hpp"
#include "drupi/privileged.hpp"
#include "drupi/rng.hpp"

namespace drupi::distill {

enum class Backend { DC, DM };

std::string_view backend_name(Backend b);
Backend parse_backend(std::string_view name);

struct BiLevelConfig {
  std::size_t outer_steps = 20;    // K, each with a fresh model
  std::size_t inner_steps = 10;    // T model updates on the reduced set per round
  std::size_t match_rounds = 1;    // matching rounds per outer step
  float model_lr = 0.01f;
  float data_lr = 0.1f;            // feature labels and images
  std::size_t real_batch = 64;     // per class
  std::size_t synthetic_batch = 0; // per class, 0 = whole class
  Backend backend = Backend::DC;
  bool update_images = false;
  nn::ModelSpec model;
  nn::FeatureTap tap;              // layer 0 selects the final layer
  privileged::DrupiLossConfig loss;

  void validate() const;
  nn::FeatureTap resolved_tap() const;
};

struct DistanceDiagnostics {
  std::size_t rows = 0;
  std::size_t zero_rows = 0;  // rows where either side has zero norm; each contributes 1
};

/// Sum over weight tensors and output rows of 1 - cosine. Rank-1 tensors (biases) are skipped.
/// Conv weights O x C x K x K have rows along axis 0; linear weights [in, out] along axis 1.
double grad_distance(const GradMap& a, const GradMap& b, DistanceDiagnostics* diag = nullptr);

/// The same distance recorded on a tape, differentiable with respect to `a`.
Var grad_distance(std::span<const Var> a, std::span<const Tensor> b, DistanceDiagnostics* diag = nullptr);

/// Cross-entropy gradient of the model on a batch, keyed by parameter name.
GradMap real_gradients(const nn::ModelState& model, const Tensor& images, std::span<const int> labels);

struct MatchGradient {
  double distance = 0;
  std::optional<Tensor> feature_grad;  // rows of the class subset
  std::optional<Tensor> image_grad;
  DistanceDiagnostics diagnostics;
};

/// Gradient-matching distance for one class subset of the reduced set against fixed real gradients,
/// with its gradient with respect to the learnable channels.
MatchGradient match_gradient(const nn::ModelState& model, const GradMap& real_grads,
                             const data::ReducedDataset& syn, const BiLevelConfig& cfg, Rng* rng = nullptr);

struct StepResult {
  data::ReducedDataset ds;
  nn::ModelState model;
  std::vector<double> distances;  // per class, before the update
};

/// One matching round per class, then `inner_steps` model updates on the reduced set.
StepResult dc_outer_step(const data::LabeledDataset& real, const data::ReducedDataset& syn,
                         const nn::ModelState& model, const BiLevelConfig& cfg, Rng& rng);

/// Plain gradient matching on images with cross-entropy only; reference for the degenerate configuration.
StepResult classic_dc_step(const data::LabeledDataset& real, const data::ReducedDataset& syn,
                           const nn::ModelState& model, const BiLevelConfig& cfg, Rng& rng);

using Embedder = std::function<Var(Var images)>;

/// ||mean psi(syn) - mean psi(real)||^2 + lambda_reg ||mean f - mean psi(real)||^2, per class.
/// `features` may be invalid; `images` may be a constant.
Var dm_objective(const Embedder& embed, const Tensor& real_images, Var images, Var features,
                 const privileged::DrupiLossConfig& loss, Rng* rng = nullptr);

/// First-order descent on the DM objective per class with a random embedder from `model`.
StepResult dm_outer_step(const data::LabeledDataset& real, const data::ReducedDataset& syn,
                         const nn::ModelState& model, const BiLevelConfig& cfg, Rng& rng);

struct SynthesisResult {
  data::ReducedDataset ds;
  std::vector<std::string> model_hashes;  // fresh initial model per outer step
  std::vector<double> distance_trace;     // mean per-class objective per outer step
};

/// K outer steps, each from a fresh model; deterministic per seed.
SynthesisResult run_synthesis(const data::LabeledDataset& real, const data::ReducedDataset& init,
                              const BiLevelConfig& cfg, std::uint64_t seed, const std::string& config_hash = {});

/// Row indices of class c in a reduced dataset.
std::vector<std::size_t> rows_of_class(const data::ReducedDataset& ds, int c);

}  // namespace drupi::distill
