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


#include "drupi/lupi.hpp"

#include <cmath>

#include "drupi/distill.hpp"
#include "drupi/error.hpp"
#include "drupi/train.hpp"

namespace drupi::lupi {

namespace {

using privileged::DrupiLossConfig;
using privileged::LossComponents;

bool uses_feature_labels(const DrupiLossConfig& cfg, const data::ReducedDataset& ds) {
  const bool reg_from_features = cfg.lambda_reg > 0 && !(cfg.attention && ds.attention);
  return ds.features && (reg_from_features || cfg.lambda_task > 0 || cfg.lambda_nce > 0);
}

void accumulate(LossComponents& sum, const LossComponents& c, double w) {
  sum.cls += w * c.cls;
  sum.reg += w * c.reg;
  sum.task += w * c.task;
  sum.soft += w * c.soft;
  sum.nce += w * c.nce;
}

Var optional_constant(Tape& t, const std::optional<Tensor>& v) { return v ? t.constant(*v) : Var{}; }

}  // namespace

Aligner Aligner::init(const Shape& stored, const Shape& model, std::uint64_t seed) {
  const std::size_t in = numel(stored), out = numel(model);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w({in, out});
  for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  Aligner a{stored, model, {}};
  a.params.emplace("aligner.weight", std::move(w));
  a.params.emplace("aligner.bias", Tensor({1, out}, 0.0f));
  return a;
}

Var Aligner::apply(Var labels, const Var& weight, const Var& bias) const {
  const std::size_t b = labels.shape().at(0);
  Shape out = model;
  out.insert(out.begin(), b);
  return reshape(matmul(flatten(labels), weight) + bias, out);
}

nn::ModelState initial_model(const nn::ModelSpec& spec, std::uint64_t seed) {
  return nn::init_model(spec, derive_seed(seed, "model-init"));
}

LupiResult train_lupi(const data::ReducedDataset& ds, const nn::ModelSpec& spec, const DrupiLossConfig& cfg,
                      const LupiOptions& opts, std::uint64_t seed) {
  ds.validate();
  cfg.validate();
  spec.validate();
  if (!(opts.lr > 0.0f)) throw InvalidArgument("learning rate must be > 0");
  if (ds.as_labeled().image_shape() != spec.input)
    throw ShapeError("model input " + to_string(spec.input) + " does not match images " +
                     to_string(ds.as_labeled().image_shape()));
  if (ds.classes != spec.classes) throw InvalidArgument("model and reduced set disagree on the class count");
  const nn::FeatureTap tap = opts.tap.layer == 0 ? nn::FeatureTap::final_layer(spec) : opts.tap;
  tap.validate(spec);

  LupiResult res{initial_model(spec, seed), std::nullopt, {}, std::nullopt};
  const Shape model_shape = spec.feature_shape(tap.layer);
  if (uses_feature_labels(cfg, ds) && ds.feature_shape() != model_shape) {
    if (!opts.allow_aligner)
      throw ShapeError("feature labels " + to_string(ds.feature_shape()) + " do not match tap shape " +
                       to_string(model_shape) + " and aligners are disabled");
    res.aligner = Aligner::init(ds.feature_shape(), model_shape, derive_seed(seed, "aligner"));
  }

  Rng batching(derive_seed(seed, "batching"));
  Rng aggregation(derive_seed(seed, "aggregation"));
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    LossComponents mean;
    for (const auto& idx : nn::epoch_batches(ds.size(), opts.batch_size, batching)) {
      const auto batch = ds.subset(idx);
      Tape t;
      nn::BoundModel bm(t, res.model);
      privileged::LossInputs in{t.constant(batch.images), batch.labels, optional_constant(t, batch.features),
                                optional_constant(t, batch.attention),
                                batch.soft_labels ? &*batch.soft_labels : nullptr};
      std::vector<Var> wrt = bm.params();
      privileged::AlignFn align;
      if (res.aligner) {
        Var w = t.leaf(res.aligner->params.at("aligner.weight"), "aligner.weight");
        Var b = t.leaf(res.aligner->params.at("aligner.bias"), "aligner.bias");
        wrt.push_back(w);
        wrt.push_back(b);
        align = [&, w, b](Var label) { return res.aligner->apply(label, w, b); };
      }
      auto r = privileged::drupi_loss(bm, in, cfg, tap, &aggregation, align);
      if (r.pooling && !res.pooling) res.pooling = r.pooling;
      const GradMap grads = backward(r.total, wrt);
      res.model = nn::sgd_step(res.model, grads, opts.lr);
      if (res.aligner) res.aligner->params = sgd_step(res.aligner->params, grads, opts.lr);
      accumulate(mean, r.components, static_cast<double>(idx.size()) / static_cast<double>(ds.size()));
    }
    res.trace.push_back(mean);
  }
  return res;
}

double evaluate(const nn::ModelState& model, const data::LabeledDataset& test) { return nn::accuracy(model, test); }

Alignment gradient_alignment(const data::ReducedDataset& ds, const data::LabeledDataset& real,
                             const nn::ModelState& probe, const DrupiLossConfig& cfg, nn::FeatureTap tap) {
  ds.validate();
  real.validate();
  if (tap.layer == 0) tap = nn::FeatureTap::final_layer(probe.spec);
  const GradMap target = distill::real_gradients(probe, real.images, real.labels);
  auto reduced_grads = [&](const DrupiLossConfig& c) {
    Tape t;
    nn::BoundModel bm(t, probe);
    privileged::LossInputs in{t.constant(ds.images), ds.labels, optional_constant(t, ds.features),
                              optional_constant(t, ds.attention), ds.soft_labels ? &*ds.soft_labels : nullptr};
    Rng rng(derive_seed(probe.seed, "aggregation"));
    return backward(privileged::drupi_loss(bm, in, c, tap, &rng).total, bm.params());
  };
  DrupiLossConfig off = cfg;
  off.lambda_reg = off.lambda_task = off.lambda_soft = off.lambda_nce = 0.0f;
  return {metrics::gradient_cosine(reduced_grads(cfg), target), metrics::gradient_cosine(reduced_grads(off), target)};
}

EvalReport summarize(std::vector<double> accuracies) {
  if (accuracies.size() < 2) throw InvalidArgument("a spread needs at least two seeds");
  EvalReport r;
  double sum = 0;
  for (double a : accuracies) sum += a;
  r.mean = sum / static_cast<double>(accuracies.size());
  double ss = 0;
  for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
  r.accuracies = std::move(accuracies);
  return r;
}

EvalReport evaluate_seeds(const data::ReducedDataset& ds, const nn::ModelSpec& spec, const DrupiLossConfig& cfg,
                          const LupiOptions& opts, const data::LabeledDataset& test,
                          std::span<const std::uint64_t> seeds) {
  std::vector<double> accs;
  std::vector<std::vector<LossComponents>> traces;
  for (auto seed : seeds) {
    auto r = train_lupi(ds, spec, cfg, opts, seed);
    accs.push_back(evaluate(r.model, test));
    traces.push_back(std::move(r.trace));
  }
  EvalReport report = summarize(std::move(accs));
  report.traces = std::move(traces);
  return report;
}

std::vector<CrossArchCell> cross_arch_matrix(const data::ReducedDataset& ds, std::span<const nn::ModelSpec> specs,
                                             const DrupiLossConfig& cfg, const LupiOptions& opts,
                                             const data::LabeledDataset& test,
                                             std::span<const std::uint64_t> seeds) {
  if (specs.empty()) throw InvalidArgument("cross-architecture grid needs at least one model");
  std::vector<CrossArchCell> out;
  for (const auto& spec : specs) {
    LupiOptions o = opts;
    o.tap = {};
    const bool aligned = uses_feature_labels(cfg, ds) && ds.feature_shape() != spec.feature_shape(spec.depth);
    out.push_back({spec, aligned, evaluate_seeds(ds, spec, cfg, o, test, seeds)});
  }
  return out;
}

}  // namespace drupi::lupi
