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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "drupi/data.hpp"
#include "drupi/metrics.hpp"
#include "drupi/nn.hpp"
#include "drupi/privileged.hpp"

namespace drupi::lupi {

struct LupiOptions {
  std::size_t epochs = 100;
  float lr = 0.01f;
  std::size_t batch_size = 0;  // 0 means full batch
  nn::FeatureTap tap{};        // layer 0 means the final layer
  bool allow_aligner = true;
};

/// Fully connected map from stored feature labels to the model's tap features.
struct Aligner {
  Shape stored;
  Shape model;
  nn::ParamMap params;  // aligner.weight [stored, model], aligner.bias [1, model]

  static Aligner init(const Shape& stored, const Shape& model, std::uint64_t seed);
  /// B x stored -> B x model.
  Var apply(Var labels, const Var& weight, const Var& bias) const;
};

struct LupiResult {
  nn::ModelState model;
  std::optional<Aligner> aligner;
  std::vector<privileged::LossComponents> trace;  // per-epoch mean of the weighted components
  std::optional<privileged::PoolingTrace> pooling;
};

/// Initial parameters used by train_lupi for `seed`.
nn::ModelState initial_model(const nn::ModelSpec& spec, std::uint64_t seed);

/// SGD on the LUPI objective from a fresh model. Inserts an aligner when stored feature labels
/// do not match the tap shape, or rejects that case when aligners are disabled.
LupiResult train_lupi(const data::ReducedDataset& ds, const nn::ModelSpec& spec,
                      const privileged::DrupiLossConfig& cfg, const LupiOptions& opts, std::uint64_t seed);

/// Fraction of argmax-correct predictions. Rejects an empty set.
double evaluate(const nn::ModelState& model, const data::LabeledDataset& test);

struct Alignment {
  metrics::Cosine with_pi;
  metrics::Cosine without_pi;
};

/// Cosine between probe gradients of the LUPI loss on the reduced set (with and without the
/// privileged terms) and the cross-entropy gradient on the real set.
Alignment gradient_alignment(const data::ReducedDataset& ds, const data::LabeledDataset& real,
                             const nn::ModelState& probe, const privileged::DrupiLossConfig& cfg,
                             nn::FeatureTap tap = {});

struct EvalReport {
  double mean = 0;
  double std = 0;  // sample standard deviation
  std::vector<double> accuracies;
  std::vector<std::vector<privileged::LossComponents>> traces;
  std::vector<double> grad_cosines;
};

/// Mean and sample standard deviation; needs at least two values.
EvalReport summarize(std::vector<double> accuracies);

EvalReport evaluate_seeds(const data::ReducedDataset& ds, const nn::ModelSpec& spec,
                          const privileged::DrupiLossConfig& cfg, const LupiOptions& opts,
                          const data::LabeledDataset& test, std::span<const std::uint64_t> seeds);

struct CrossArchCell {
  nn::ModelSpec spec;
  bool aligned = false;
  EvalReport report;
};

std::vector<CrossArchCell> cross_arch_matrix(const data::ReducedDataset& ds, std::span<const nn::ModelSpec> specs,
                                             const privileged::DrupiLossConfig& cfg, const LupiOptions& opts,
                                             const data::LabeledDataset& test,
                                             std::span<const std::uint64_t> seeds);

}  // namespace drupi::lupi
