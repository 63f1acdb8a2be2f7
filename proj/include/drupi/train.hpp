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
#include <vector>

#include "drupi/data.hpp"
#include "drupi/nn.hpp"
#include "drupi/rng.hpp"

namespace drupi::nn {

struct TrainOptions {
  std::size_t epochs = 10;
  float lr = 0.01f;
  std::size_t batch_size = 64;  // 0 means full batch
  std::uint64_t seed = 0;
};

/// Mini-batch index lists for one epoch. Full batch keeps dataset order and draws nothing from `rng`.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng);

using EpochHook = std::function<void(std::size_t epoch, const ModelState& model)>;

/// Plain cross-entropy SGD. `hook` runs after every epoch.
ModelState train_supervised(ModelState model, const data::LabeledDataset& ds, const TrainOptions& opts,
                            const EpochHook& hook = {});

/// Fraction of argmax-correct predictions. Rejects an empty set.
double accuracy(const ModelState& model, const data::LabeledDataset& ds);

}  // namespace drupi::nn
