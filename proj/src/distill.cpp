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

#include "drupi/distill.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "drupi/error.hpp"

namespace drupi::distill {

namespace {

using data::ReducedDataset;

// dst[rows[i]] -= lr * grad[i], row-wise.
void descend_rows(Tensor& dst, std::span<const std::size_t> rows, const Tensor& grad, float lr) {
  const std::size_t stride = dst.numel() / dst.dim(0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < stride; ++j) dst[rows[i] * stride + j] -= lr * grad[i * stride + j];
}

std::vector<std::size_t> sample_class(const data::LabeledDataset& real, int c, std::size_t batch, Rng& rng) {
  const auto members = real.class_indices(c);
  if (members.empty()) throw InvalidArgument("real data has no examples of class " + std::to_string(c));
  std::vector<std::size_t> idx;
  for (auto k : rng.sample(members.size(), std::min(batch, members.size()))) idx.push_back(members[k]);
  return idx;
}

std::vector<std::size_t> syn_rows(const ReducedDataset& ds, int c, std::size_t batch, Rng& rng) {
  auto rows = rows_of_class(ds, c);
  if (rows.empty()) throw InvalidArgument("reduced set has no examples of class " + std::to_string(c));
  if (batch == 0 || batch >= rows.size()) return rows;
  std::vector<std::size_t> out;
  for (auto k : rng.sample(rows.size(), batch)) out.push_back(rows[k]);
  return out;
}

Var optional_constant(Tape& t, const std::optional<Tensor>& v) { return v ? t.constant(*v) : Var{}; }

nn::ModelState inner_updates(nn::ModelState model, const ReducedDataset& ds, const BiLevelConfig& cfg, Rng& rng) {
  for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
    Tape t;
    nn::BoundModel bm(t, model);
    privileged::LossInputs in{t.constant(ds.images), ds.labels, optional_constant(t, ds.features),
                              optional_constant(t, ds.attention), ds.soft_labels ? &*ds.soft_labels : nullptr};
    auto r = privileged::drupi_loss(bm, in, cfg.loss, cfg.resolved_tap(), &rng);
    model = nn::sgd_step(model, backward(r.total, bm.params()), cfg.model_lr);
  }
  return model;
}

void check_shapes(const data::LabeledDataset& real, const ReducedDataset& syn, const BiLevelConfig& cfg) {
  cfg.validate();
  real.validate();
  syn.validate();
  if (cfg.loss.lambda_reg > 0.0f && !syn.features)
    throw InvalidArgument("nonzero feature-label weight but the reduced set carries no feature labels");
  if (real.image_shape() != cfg.model.input || syn.as_labeled().image_shape() != cfg.model.input)
    throw ShapeError("model input " + to_string(cfg.model.input) + " does not match the data");
  if (real.classes != syn.classes || real.classes != cfg.model.classes)
    throw InvalidArgument("class counts of real data, reduced data and model disagree");
  if (syn.features) {
    const Shape expect = cfg.model.feature_shape(cfg.resolved_tap().layer);
    if (syn.feature_shape() != expect)
      throw ShapeError("feature labels " + to_string(syn.feature_shape()) + " do not match tap shape " +
                       to_string(expect));
  }
}

std::string config_digest(const BiLevelConfig& c) {
  std::ostringstream s;
  s << backend_name(c.backend) << ';' << c.outer_steps << ';' << c.inner_steps << ';' << c.match_rounds << ';'
    << c.model_lr << ';' << c.data_lr << ';' << c.real_batch << ';' << c.synthetic_batch << ';' << c.update_images
    << ';' << nn::describe(c.model) << ';' << c.resolved_tap().layer << ';' << c.loss.lambda_reg << ';'
    << c.loss.lambda_task << ';' << c.loss.lambda_soft << ';' << static_cast<int>(c.loss.aggregation);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s.str()) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string_view backend_name(Backend b) { return b == Backend::DC ? "dc" : "dm"; }

Backend parse_backend(std::string_view name) {
  if (name == "dc") return Backend::DC;
  if (name == "dm") return Backend::DM;
  throw InvalidArgument("unknown synthesis backend '" + std::string(name) + "'");
}

void BiLevelConfig::validate() const {
  if (inner_steps < 1) throw InvalidArgument("inner steps T must be >= 1");
  if (match_rounds < 1) throw InvalidArgument("match rounds must be >= 1");
  if (!(model_lr > 0.0f) || !(data_lr > 0.0f)) throw InvalidArgument("learning rates must be > 0");
  if (real_batch < 1) throw InvalidArgument("real batch must be >= 1");
  model.validate();
  resolved_tap().validate(model);
  loss.validate();
}

nn::FeatureTap BiLevelConfig::resolved_tap() const {
  return tap.layer == 0 ? nn::FeatureTap::final_layer(model) : tap;
}

std::vector<std::size_t> rows_of_class(const ReducedDataset& ds, int c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] == c) out.push_back(i);
  return out;
}

namespace {

// Rows of a weight gradient for the per-output cosine: reduction axes and row count.
struct RowLayout {
  std::vector<std::size_t> axes;
  Shape view;
  std::size_t rows;
};

RowLayout row_layout(const Shape& s) {
  if (s.size() == 2) return {{0}, s, s[1]};
  const std::size_t rows = s[0];
  return {{1}, {rows, numel(s) / rows}, rows};
}

constexpr double kCosEps = 1e-12;

}  // namespace

double grad_distance(const GradMap& a, const GradMap& b, DistanceDiagnostics* diag) {
  if (a.size() != b.size()) throw InvalidArgument("gradient maps have different keys");
  double total = 0;
  DistanceDiagnostics d;
  for (const auto& [name, ga] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw InvalidArgument("gradient map lacks " + name);
    const Tensor& gb = it->second;
    if (gb.shape() != ga.shape()) throw ShapeError(name + ": gradient shapes " + to_string(ga.shape()) + " vs " +
                                                   to_string(gb.shape()));
    if (ga.rank() == 1) continue;
    const auto layout = row_layout(ga.shape());
    const std::size_t rows = layout.rows, len = ga.numel() / rows;
    const bool by_column = ga.rank() == 2;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = by_column ? k * rows + r : r * len + k;
        dot += static_cast<double>(ga[i]) * gb[i];
        na += static_cast<double>(ga[i]) * ga[i];
        nb += static_cast<double>(gb[i]) * gb[i];
      }
      ++d.rows;
      if (na == 0 || nb == 0) ++d.zero_rows;
      total += 1.0 - dot / std::sqrt(na * nb + kCosEps);
    }
  }
  if (diag) *diag = d;
  return total;
}

Var grad_distance(std::span<const Var> a, std::span<const Tensor> b, DistanceDiagnostics* diag) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("gradient lists differ in length");
  Tape& t = a[0].tape();
  Var total;
  DistanceDiagnostics d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape())
      throw ShapeError("gradient shapes " + to_string(a[i].shape()) + " vs " + to_string(b[i].shape()));
    if (a[i].shape().size() == 1) continue;
    const auto layout = row_layout(a[i].shape());
    Var ga = reshape(a[i], layout.view);
    Tensor gb_t = b[i].reshaped(layout.view);
    Var gb = t.constant(gb_t);
    Var dot = sum_axes(ga * gb, layout.axes);
    Var na = sum_axes(ga * ga, layout.axes);
    Var nb = sum_axes(gb * gb, layout.axes);
    Var cos = dot * pow(shift(na * nb, static_cast<float>(kCosEps)), -0.5f);
    Var term = shift(scale(sum(cos), -1.0f), static_cast<float>(layout.rows));
    total = total.valid() ? total + term : term;
    d.rows += layout.rows;
    for (std::size_t r = 0; r < layout.rows; ++r)
      if (na.value()[r] == 0.0f || nb.value()[r] == 0.0f) ++d.zero_rows;
  }
  if (!total.valid()) throw InvalidArgument("no weight tensors to match");
  if (diag) *diag = d;
  return total;
}

GradMap real_gradients(const nn::ModelState& model, const Tensor& images, std::span<const int> labels) {
  Tape t;
  nn::BoundModel bm(t, model);
  Var loss = cross_entropy(bm.forward(t.constant(images), nn::FeatureTap::final_layer(model.spec)).logits, labels);
  return backward(loss, bm.params());
}

MatchGradient match_gradient(const nn::ModelState& model, const GradMap& real_grads, const ReducedDataset& syn,
                             const BiLevelConfig& cfg, Rng* rng) {
  Tape t;
  nn::BoundModel bm(t, model);
  Var x = cfg.update_images ? t.leaf(syn.images, "images") : t.constant(syn.images);
  Var f = syn.features ? t.leaf(*syn.features, "features") : Var{};
  privileged::LossInputs in{x, syn.labels, f, optional_constant(t, syn.attention),
                            syn.soft_labels ? &*syn.soft_labels : nullptr};
  auto r = privileged::drupi_loss(bm, in, cfg.loss, cfg.resolved_tap(), rng);
  auto grads = t.gradients(r.total, bm.params());
  std::vector<Tensor> target;
  for (const auto& name : bm.names()) target.push_back(real_grads.at(name));

  MatchGradient out;
  Var dist = grad_distance(grads, target, &out.diagnostics);
  out.distance = dist.value().item();
  std::vector<Var> wrt;
  if (f.valid()) wrt.push_back(f);
  if (cfg.update_images) wrt.push_back(x);
  if (wrt.empty()) return out;
  auto g = t.gradients(dist, wrt);
  std::size_t k = 0;
  if (f.valid()) out.feature_grad = g[k++].value();
  if (cfg.update_images) out.image_grad = g[k].value();
  return out;
}

StepResult dc_outer_step(const data::LabeledDataset& real, const ReducedDataset& syn, const nn::ModelState& model,
                         const BiLevelConfig& cfg, Rng& rng) {
  check_shapes(real, syn, cfg);
  StepResult res{syn, model, {}};
  for (std::size_t round = 0; round < cfg.match_rounds; ++round) {
    for (std::size_t c = 0; c < syn.classes; ++c) {
      const auto idx = sample_class(real, static_cast<int>(c), cfg.real_batch, rng);
      const auto batch = real.subset(idx);
      const GradMap rg = real_gradients(res.model, batch.images, batch.labels);
      const auto rows = syn_rows(res.ds, static_cast<int>(c), cfg.synthetic_batch, rng);
      const auto mg = match_gradient(res.model, rg, res.ds.subset(rows), cfg, &rng);
      if (round == 0) res.distances.push_back(mg.distance);
      if (mg.feature_grad) descend_rows(*res.ds.features, rows, *mg.feature_grad, cfg.data_lr);
      if (mg.image_grad) descend_rows(res.ds.images, rows, *mg.image_grad, cfg.data_lr);
    }
    res.model = inner_updates(res.model, res.ds, cfg, rng);
  }
  return res;
}

StepResult classic_dc_step(const data::LabeledDataset& real, const ReducedDataset& syn, const nn::ModelState& model,
                           const BiLevelConfig& cfg, Rng& rng) {
  check_shapes(real, syn, cfg);
  const nn::FeatureTap tap = cfg.resolved_tap();
  StepResult res{syn, model, {}};
  for (std::size_t round = 0; round < cfg.match_rounds; ++round) {
    for (std::size_t c = 0; c < syn.classes; ++c) {
      const auto idx = sample_class(real, static_cast<int>(c), cfg.real_batch, rng);
      const auto batch = real.subset(idx);
      const GradMap rg = real_gradients(res.model, batch.images, batch.labels);
      const auto rows = syn_rows(res.ds, static_cast<int>(c), cfg.synthetic_batch, rng);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(res.ds.labels[r]);

      Tape t;
      nn::BoundModel bm(t, res.model);
      Var x = t.leaf(gather_rows(res.ds.images, rows), "images");
      Var loss = cross_entropy(bm.forward(x, tap).logits, labels);
      auto g = t.gradients(loss, bm.params());
      std::vector<Tensor> target;
      for (const auto& name : bm.names()) target.push_back(rg.at(name));
      Var dist = grad_distance(g, target);
      if (round == 0) res.distances.push_back(dist.value().item());
      const Var wrt[] = {x};
      descend_rows(res.ds.images, rows, t.gradients(dist, wrt)[0].value(), cfg.data_lr);
    }
    for (std::size_t step = 0; step < cfg.inner_steps; ++step) {
      Tape t;
      nn::BoundModel bm(t, res.model);
      Var loss = cross_entropy(bm.forward(t.constant(res.ds.images), tap).logits, res.ds.labels);
      res.model = nn::sgd_step(res.model, backward(loss, bm.params()), cfg.model_lr);
    }
  }
  return res;
}

Var dm_objective(const Embedder& embed, const Tensor& real_images, Var images, Var features,
                 const privileged::DrupiLossConfig& loss, Rng* rng) {
  Tape& t = images.tape();
  const std::size_t batch_axis[] = {0};
  auto batch_mean = [&](Var e) {
    return scale(sum_axes(flatten(e), batch_axis), 1.0f / static_cast<float>(e.shape()[0]));
  };
  Var real_mean = batch_mean(embed(t.constant(real_images)));
  Var diff = batch_mean(embed(images)) - real_mean;
  Var objective = sum(diff * diff);
  if (loss.lambda_reg > 0.0f && features.valid()) {
    Var fd = batch_mean(privileged::aggregate_features(features, loss.aggregation, rng));
    if (fd.shape() != real_mean.shape())
      throw ShapeError("feature labels flatten to " + to_string(fd.shape()) + ", embeddings to " +
                       to_string(real_mean.shape()));
    Var d2 = fd - real_mean;
    objective = objective + scale(sum(d2 * d2), loss.lambda_reg);
  }
  return objective;
}

StepResult dm_outer_step(const data::LabeledDataset& real, const ReducedDataset& syn, const nn::ModelState& model,
                         const BiLevelConfig& cfg, Rng& rng) {
  check_shapes(real, syn, cfg);
  const nn::FeatureTap tap = cfg.resolved_tap();
  StepResult res{syn, model, {}};
  for (std::size_t round = 0; round < cfg.match_rounds; ++round) {
    for (std::size_t c = 0; c < syn.classes; ++c) {
      const auto idx = sample_class(real, static_cast<int>(c), cfg.real_batch, rng);
      const auto rows = syn_rows(res.ds, static_cast<int>(c), cfg.synthetic_batch, rng);
      Tape t;
      nn::BoundModel bm(t, model);
      Var x = cfg.update_images ? t.leaf(gather_rows(res.ds.images, rows), "images")
                                : t.constant(gather_rows(res.ds.images, rows));
      Var f = res.ds.features ? t.leaf(gather_rows(*res.ds.features, rows), "features") : Var{};
      Embedder embed = [&](Var v) { return bm.forward(v, tap).features; };
      Var objective = dm_objective(embed, gather_rows(real.images, idx), x, f, cfg.loss, &rng);
      if (cfg.loss.lambda_task > 0.0f && f.valid()) {
        std::vector<int> labels;
        for (auto r : rows) labels.push_back(res.ds.labels[r]);
        Var agg = privileged::aggregate_features(f, cfg.loss.aggregation, &rng);
        Var logits = tap.layer == cfg.model.depth ? bm.classify(agg) : bm.head_from(agg, tap);
        objective = objective + scale(cross_entropy(logits, labels), cfg.loss.lambda_task);
      }
      if (round == 0) res.distances.push_back(objective.value().item());
      std::vector<Var> wrt;
      if (f.valid()) wrt.push_back(f);
      if (cfg.update_images) wrt.push_back(x);
      if (wrt.empty()) continue;
      auto g = t.gradients(objective, wrt);
      std::size_t k = 0;
      if (f.valid()) descend_rows(*res.ds.features, rows, g[k++].value(), cfg.data_lr);
      if (cfg.update_images) descend_rows(res.ds.images, rows, g[k].value(), cfg.data_lr);
    }
  }
  return res;
}

SynthesisResult run_synthesis(const data::LabeledDataset& real, const ReducedDataset& init, const BiLevelConfig& cfg,
                              std::uint64_t seed, const std::string& config_hash) {
  check_shapes(real, init, cfg);
  SynthesisResult out{init, {}, {}};
  if (cfg.outer_steps == 0) return out;
  Rng rng(derive_seed(seed, "batching"));
  for (std::size_t k = 0; k < cfg.outer_steps; ++k) {
    const auto theta0 = nn::init_model(cfg.model, derive_seed(seed, "model-init", k));
    out.model_hashes.push_back(nn::param_hash(theta0));
    auto step = cfg.backend == Backend::DC ? dc_outer_step(real, out.ds, theta0, cfg, rng)
                                           : dm_outer_step(real, out.ds, theta0, cfg, rng);
    out.ds = std::move(step.ds);
    out.distance_trace.push_back(std::accumulate(step.distances.begin(), step.distances.end(), 0.0) /
                                 static_cast<double>(step.distances.size()));
  }
  out.ds.provenance.backend = std::string(backend_name(cfg.backend));
  out.ds.provenance.config_hash = config_hash.empty() ? config_digest(cfg) : config_hash;
  out.ds.provenance.seed = seed;
  if (out.ds.features) out.ds.provenance.feature_layer = cfg.resolved_tap().layer;
  return out;
}

}  // namespace drupi::distill
