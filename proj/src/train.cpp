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

#include "drupi/train.hpp"

#include <algorithm>
#include <numeric>

#include "drupi/error.hpp"

namespace drupi::nn {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (batch_size == 0 || batch_size >= n) return {order};
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  return out;
}

ModelState train_supervised(ModelState model, const data::LabeledDataset& ds, const TrainOptions& opts,
                            const EpochHook& hook) {
  ds.validate(false);
  Rng rng(derive_seed(opts.seed, "batching"));
  const FeatureTap tap = FeatureTap::final_layer(model.spec);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(ds.size(), opts.batch_size, rng)) {
      const auto batch = ds.subset(idx);
      Tape t;
      BoundModel bm(t, model);
      Var loss = cross_entropy(bm.forward(t.constant(batch.images), tap).logits, batch.labels);
      model = sgd_step(model, backward(loss, bm.params()), opts.lr);
    }
    if (hook) hook(epoch, model);
  }
  return model;
}

double accuracy(const ModelState& model, const data::LabeledDataset& ds) {
  if (ds.size() == 0) throw InvalidArgument("cannot evaluate on an empty dataset");
  const auto pred = predict(model, ds.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace drupi::nn
