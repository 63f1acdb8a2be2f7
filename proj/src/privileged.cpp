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

#include "drupi/privileged.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drupi/error.hpp"

namespace drupi::privileged {

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::Average ? "average" : "random"; }

Aggregation parse_aggregation(std::string_view name) {
  if (name == "average" || name == "mean") return Aggregation::Average;
  if (name == "random" || name == "random-pick") return Aggregation::Random;
  throw InvalidArgument("unknown aggregation '" + std::string(name) + "'");
}

void DrupiLossConfig::validate() const {
  for (float w : {lambda_reg, lambda_task, lambda_soft, lambda_nce})
    if (!std::isfinite(w) || w < 0.0f) throw InvalidArgument("loss weights must be finite and >= 0");
  if (!(nce_temperature > 0.0f)) throw InvalidArgument("InfoNCE temperature must be > 0");
}

Shape pooled_shape(const Shape& fs, AttentionKind kind) {
  if (fs.size() != 3)
    throw InvalidArgument("attention labels need Ch x H x W features, got " + to_string(fs));
  return kind == AttentionKind::Spatial ? Shape{1, fs[1], fs[2]} : Shape{fs[0], 1, 1};
}

Var pool_attention(Var f, AttentionKind kind) {
  const Shape& s = f.shape();
  if (s.size() != 4)
    throw InvalidArgument("attention pooling needs B x Ch x H x W features, got " + to_string(s));
  if (kind == AttentionKind::Spatial) {
    const std::size_t axes[] = {1};
    return scale(sum_axes(f, axes), 1.0f / static_cast<float>(s[1]));
  }
  const std::size_t axes[] = {2, 3};
  return scale(sum_axes(f, axes), 1.0f / static_cast<float>(s[2] * s[3]));
}

Tensor pool_attention(const Tensor& f, AttentionKind kind) {
  if (f.rank() == 3) {
    const Shape& s = f.shape();
    return pool_attention(f.reshaped({1, s[0], s[1], s[2]}), kind).reshaped(pooled_shape(s, kind));
  }
  Tape t;
  return pool_attention(t.constant(f), kind).value();
}

Var aggregate_features(Var features, Aggregation mode, Rng* rng) {
  const Shape& s = features.shape();
  if (s.size() < 3) throw ShapeError("feature labels must be B x n_feat x shape, got " + to_string(s));
  const std::size_t b = s[0], n = s[1];
  Shape member(s.begin() + 2, s.end());
  Shape out = member;
  out.insert(out.begin(), b);
  if (n == 1) return reshape(features, out);

  Shape wshape(s.size(), 1);
  wshape[0] = b;
  wshape[1] = n;
  Tensor w(wshape);
  if (mode == Aggregation::Average) {
    std::fill(w.data().begin(), w.data().end(), 1.0f / static_cast<float>(n));
  } else {
    if (!rng) throw InvalidArgument("random-pick aggregation needs a random stream");
    for (std::size_t i = 0; i < b; ++i) w[i * n + rng->below(n)] = 1.0f;
  }
  const std::size_t axes[] = {1};
  return reshape(sum_axes(features * features.tape().constant(std::move(w)), axes), out);
}

namespace {

void require_same(const Shape& label, const Shape& model, const char* what) {
  if (label != model)
    throw ShapeError(std::string(what) + " shape " + to_string(label) + " does not match model features " +
                     to_string(model) + "; enable an aligner");
}

double entropy_mean(const Tensor& p) {
  const std::size_t b = p.dim(0), c = p.dim(1);
  double h = 0;
  for (std::size_t i = 0; i < b * c; ++i)
    if (p[i] > 0.0f) h -= static_cast<double>(p[i]) * std::log(static_cast<double>(p[i]));
  return h / static_cast<double>(b);
}

Var normalize_rows(Var x) {
  const std::size_t axes[] = {1};
  return x * pow(shift(sum_axes(x * x, axes), 1e-8f), -0.5f);
}

}  // namespace

LossResult drupi_loss(const nn::BoundModel& model, const LossInputs& in, const DrupiLossConfig& cfg,
                      nn::FeatureTap tap, Rng* rng, const AlignFn& align) {
  cfg.validate();
  auto out = model.forward(in.images, tap);
  LossResult r;
  Var cls = cross_entropy(out.logits, in.labels);
  r.total = cls;
  r.components.cls = cls.value().item();

  auto add_term = [&](Var term, float weight, double& slot) {
    Var w = scale(term, weight);
    slot = w.value().item();
    r.total = r.total + w;
  };

  const bool needs_features = (cfg.lambda_reg > 0 && !(cfg.attention && in.attention.valid())) ||
                              cfg.lambda_task > 0 || cfg.lambda_nce > 0;
  Var label;
  if (needs_features) {
    if (!in.features.valid())
      throw InvalidArgument("nonzero feature-label weight but the batch carries no feature labels");
    if (in.features.shape().at(0) != in.labels.size())
      throw ShapeError("feature labels cover " + std::to_string(in.features.shape()[0]) + " examples, batch has " +
                       std::to_string(in.labels.size()));
    label = aggregate_features(in.features, cfg.aggregation, rng);
    if (align) label = align(label);
  }

  if (cfg.lambda_reg > 0) {
    if (cfg.attention) {
      Var pooled = pool_attention(out.features, *cfg.attention);
      Var target = in.attention.valid() ? in.attention : pool_attention(label, *cfg.attention);
      require_same(target.shape(), pooled.shape(), "attention label");
      r.pooling = PoolingTrace{*cfg.attention, out.features.shape(), pooled.shape(), target.shape()};
      add_term(mse(target, pooled), cfg.lambda_reg, r.components.reg);
    } else {
      require_same(label.shape(), out.features.shape(), "feature label");
      add_term(mse(label, out.features), cfg.lambda_reg, r.components.reg);
    }
  }
  if (cfg.lambda_task > 0) {
    require_same(label.shape(), out.features.shape(), "feature label");
    Var logits = tap.layer == model.spec().depth ? model.classify(label) : model.head_from(label, tap);
    add_term(cross_entropy(logits, in.labels), cfg.lambda_task, r.components.task);
  }
  if (cfg.lambda_soft > 0) {
    if (!in.soft) throw InvalidArgument("nonzero soft-label weight but the batch carries no soft labels");
    Var kl = shift(soft_cross_entropy(out.logits, *in.soft), static_cast<float>(-entropy_mean(*in.soft)));
    add_term(kl, cfg.lambda_soft, r.components.soft);
  }
  if (cfg.lambda_nce > 0) {
    require_same(label.shape(), out.features.shape(), "feature label");
    Var sim = scale(matmul(normalize_rows(flatten(out.features)), normalize_rows(flatten(label)), false, true),
                    1.0f / cfg.nce_temperature);
    std::vector<int> diag(in.labels.size());
    std::iota(diag.begin(), diag.end(), 0);
    add_term(cross_entropy(sim, diag), cfg.lambda_nce, r.components.nce);
  }
  return r;
}

Tensor assign_features(const Tensor& images, const nn::ModelState& extractor, nn::FeatureTap tap) {
  Tensor f = nn::forward_split(extractor, images, tap).features;
  Shape s = f.shape();
  s.insert(s.begin() + 1, 1);
  return f.reshaped(s);
}

Tensor init_features(const Tensor& images, const FeatureInitOptions& opts, std::uint64_t seed,
                     const Shape& feature_shape, const nn::ModelState* extractor, nn::FeatureTap tap) {
  if (opts.n_feat < 1) throw InvalidArgument("n_feat must be >= 1");
  if (images.rank() != 4) throw ShapeError("images must be M x Ch x H x W, got " + to_string(images.shape()));
  const std::size_t m = images.dim(0);
  Rng rng(derive_seed(seed, "noise"));
  Shape member = feature_shape;
  if (opts.mode == FeatureInit::WeakModel) {
    if (!extractor) throw InvalidArgument("weak-model feature initialization needs an extractor");
    Tensor base = assign_features(images, *extractor, tap);
    member = Shape(base.shape().begin() + 2, base.shape().end());
    const std::size_t d = numel(member);
    Shape s = member;
    s.insert(s.begin(), {m, opts.n_feat});
    Tensor out(s);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < opts.n_feat; ++k)
        for (std::size_t j = 0; j < d; ++j) {
          float v = base[i * d + j];
          if (opts.symmetry_std > 0.0f) v += opts.symmetry_std * rng.normal();
          out[(i * opts.n_feat + k) * d + j] = v;
        }
    return out;
  }
  if (member.empty()) throw InvalidArgument("noise feature initialization needs a feature shape");
  Shape s = member;
  s.insert(s.begin(), {m, opts.n_feat});
  Tensor out(s);
  for (auto& v : out.data()) v = opts.noise_std * rng.normal();
  if (opts.symmetry_std > 0.0f)
    for (auto& v : out.data()) v += opts.symmetry_std * rng.normal();
  return out;
}

Tensor soft_labels(const Tensor& images, const nn::ModelState& teacher, float temperature) {
  if (!(temperature > 0.0f) || !std::isfinite(temperature))
    throw InvalidArgument("soft-label temperature must be > 0");
  Tensor logits = nn::forward_split(teacher, images, nn::FeatureTap::final_layer(teacher.spec)).logits;
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  Tensor out({b, c});
  std::vector<double> row(c);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -INFINITY, z = 0;
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, static_cast<double>(logits[i * c + k]) / temperature);
    for (std::size_t k = 0; k < c; ++k) z += row[k] = std::exp(static_cast<double>(logits[i * c + k]) / temperature - mx);
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = static_cast<float>(row[k] / z);
  }
  return out;
}

}  // namespace drupi::privileged
