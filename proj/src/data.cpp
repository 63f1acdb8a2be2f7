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

#include "drupi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "drupi/error.hpp"
#include "drupi/rng.hpp"

namespace drupi::data {

Shape LabeledDataset::image_shape() const {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("dataset images must be N x Ch x H x W, got " + to_string(s));
  return {s[1], s[2], s[3]};
}

void LabeledDataset::validate(bool all_classes) const {
  if (labels.empty()) throw InvalidArgument("dataset is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size())
    throw InvalidArgument("images " + to_string(images.shape()) + " do not match " +
                          std::to_string(labels.size()) + " labels");
  if (classes < 2) throw InvalidArgument("dataset needs at least 2 classes");
  std::vector<std::size_t> seen(classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    ++seen[static_cast<std::size_t>(y)];
  }
  if (all_classes) {
    for (std::size_t c = 0; c < classes; ++c)
      if (seen[c] == 0) throw InvalidArgument("class " + std::to_string(c) + " has no examples");
  }
}

std::vector<std::size_t> LabeledDataset::class_indices(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == c) out.push_back(i);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out{gather_rows(images, indices), {}, classes};
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

std::string_view attention_name(AttentionKind k) {
  return k == AttentionKind::Spatial ? "spatial" : "channel";
}

AttentionKind parse_attention(std::string_view name) {
  if (name == "spatial") return AttentionKind::Spatial;
  if (name == "channel") return AttentionKind::Channel;
  throw InvalidArgument("unknown attention kind '" + std::string(name) + "'");
}

Shape ReducedDataset::feature_shape() const {
  if (!features) return {};
  const Shape& s = features->shape();
  return Shape(s.begin() + 2, s.end());
}

void ReducedDataset::validate() const {
  const std::size_t m = labels.size();
  LabeledDataset{images, labels, classes}.validate(false);
  if (m < classes)
    throw InvalidArgument("reduced dataset has " + std::to_string(m) + " examples for " +
                          std::to_string(classes) + " classes");
  if (!images.all_finite()) throw InvalidArgument("images contain non-finite values");
  if (soft_labels) {
    if (soft_labels->shape() != Shape{m, classes})
      throw InvalidArgument("soft labels must be " + to_string({m, classes}) + ", got " +
                            to_string(soft_labels->shape()));
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        const float p = (*soft_labels)[i * classes + c];
        if (!(p >= 0.0f)) throw InvalidArgument("soft label row " + std::to_string(i) + " has a negative entry");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-5)
        throw InvalidArgument("soft label row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  if (features) {
    if (features->rank() < 3 || features->dim(0) != m)
      throw InvalidArgument("feature labels must be M x n_feat x shape, got " + to_string(features->shape()));
    if (!features->all_finite()) throw InvalidArgument("feature labels contain non-finite values");
  }
  if (attention.has_value() != attention_kind.has_value())
    throw InvalidArgument("attention labels and attention kind must be present together");
  if (attention) {
    const Shape& s = attention->shape();
    if (s.size() != 4 || s[0] != m)
      throw InvalidArgument("attention labels must be M x pooled shape, got " + to_string(s));
    if (*attention_kind == AttentionKind::Spatial ? s[1] != 1 : (s[2] != 1 || s[3] != 1))
      throw InvalidArgument(std::string(attention_name(*attention_kind)) +
                            " attention has wrong pooled shape " + to_string(s));
    if (!attention->all_finite()) throw InvalidArgument("attention labels contain non-finite values");
  }
}

ReducedDataset ReducedDataset::subset(std::span<const std::size_t> rows) const {
  ReducedDataset out;
  out.images = gather_rows(images, rows);
  for (auto r : rows) out.labels.push_back(labels.at(r));
  out.classes = classes;
  if (soft_labels) out.soft_labels = gather_rows(*soft_labels, rows);
  if (features) out.features = gather_rows(*features, rows);
  out.attention_kind = attention_kind;
  if (attention) out.attention = gather_rows(*attention, rows);
  out.provenance = provenance;
  return out;
}

ReducedDataset reduce(const LabeledDataset& source, std::span<const std::size_t> indices) {
  auto sub = source.subset(indices);
  ReducedDataset out;
  out.images = std::move(sub.images);
  out.labels = std::move(sub.labels);
  out.classes = source.classes;
  return out;
}

std::vector<std::size_t> counts_from_fraction(double fraction, std::size_t n, std::size_t classes) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must be in (0, 1]");
  if (classes == 0) throw InvalidArgument("classes must be positive");
  const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  std::vector<std::size_t> out(classes, total / classes);
  for (std::size_t c = 0; c < total % classes; ++c) ++out[c];
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& what) {
  if (b.size() < at + 4) throw FormatError(what + ": truncated header", b.size());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t classes) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  if (be32(ib, 0, "images") != 0x00000803) throw FormatError("images: bad IDX magic", 0);
  if (be32(lb, 0, "labels") != 0x00000801) throw FormatError("labels: bad IDX magic", 0);
  const std::size_t n = be32(ib, 4, "images");
  const std::size_t rows = be32(ib, 8, "images");
  const std::size_t cols = be32(ib, 12, "images");
  const std::size_t nl = be32(lb, 4, "labels");
  if (nl != n)
    throw FormatError("labels: count " + std::to_string(nl) + " does not match " +
                      std::to_string(n) + " images", 4);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("images: empty dimensions", 4);
  const std::size_t need = 16 + n * rows * cols;
  if (ib.size() < need)
    throw FormatError("images: truncated payload, expected " + std::to_string(need) + " bytes, got " +
                      std::to_string(ib.size()), ib.size());
  if (lb.size() < 8 + n)
    throw FormatError("labels: truncated payload, expected " + std::to_string(8 + n) + " bytes, got " +
                      std::to_string(lb.size()), lb.size());

  LabeledDataset ds{Tensor({n, 1, rows, cols}), std::vector<int>(n), classes};
  auto px = ds.images.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lb[8 + i];
    if (static_cast<std::size_t>(lb[8 + i]) >= classes)
      throw FormatError("labels: value " + std::to_string(lb[8 + i]) + " outside class range", 8 + i);
  }
  return ds;
}

void BlobSpec::validate() const {
  if (classes < 2) throw InvalidArgument("blobs need at least 2 classes");
  if (per_class < 1) throw InvalidArgument("blobs need at least 1 sample per class");
  if (channels < 1 || size < 1) throw InvalidArgument("blob image dimensions must be positive");
  if (!(noise >= 0.0f) || !std::isfinite(noise)) throw InvalidArgument("blob noise must be >= 0");
  if (!(contrast > 0.0f) || !std::isfinite(contrast)) throw InvalidArgument("blob contrast must be > 0");
}

Tensor blob_templates(const BlobSpec& spec) {
  spec.validate();
  const std::size_t hw = spec.size * spec.size;
  const std::size_t plane = spec.channels * hw;
  Tensor out({spec.classes, spec.channels, spec.size, spec.size});
  const double two_pi = 2.0 * std::numbers::pi;
  const double n = static_cast<double>(spec.size);

  // Shared low-frequency background plus a class-specific pattern of unit peak amplitude.
  auto wave_field = [&](Rng& rng, std::vector<double>& field, int terms) {
    std::fill(field.begin(), field.end(), 0.0);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      for (int k = 0; k < terms; ++k) {
        const double fy = 1.0 + static_cast<double>(rng.below(3));
        const double fx = 1.0 + static_cast<double>(rng.below(3));
        const double phase = two_pi * rng.uniform();
        const double amp = rng.uniform(0.5f, 1.0f);
        for (std::size_t i = 0; i < spec.size; ++i)
          for (std::size_t j = 0; j < spec.size; ++j)
            field[ch * hw + i * spec.size + j] +=
                amp * std::cos(two_pi * (fy * static_cast<double>(i) + fx * static_cast<double>(j)) / n + phase);
      }
    }
    double mean = 0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(field.size());
    double peak = 0;
    for (double& v : field) peak = std::max(peak, std::abs(v -= mean));
    if (peak > 0)
      for (double& v : field) v /= peak;
  };

  std::vector<double> background(plane), pattern(plane);
  Rng bg_rng(derive_seed(spec.template_seed, "background"));
  wave_field(bg_rng, background, 2);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Rng rng(derive_seed(spec.template_seed, "template", c));
    wave_field(rng, pattern, 3);
    for (std::size_t p = 0; p < plane; ++p) {
      const double v = 0.5 + 0.2 * background[p] + spec.contrast * pattern[p];
      out[c * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  const Tensor templates = blob_templates(spec);
  const std::size_t plane = spec.channels * spec.size * spec.size;
  const std::size_t n = spec.classes * spec.per_class;
  LabeledDataset ds{Tensor({n, spec.channels, spec.size, spec.size}), std::vector<int>(n), spec.classes};
  Rng rng(derive_seed(seed, "noise"));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      const std::size_t i = c * spec.per_class + k;
      ds.labels[i] = static_cast<int>(c);
      for (std::size_t p = 0; p < plane; ++p) {
        float v = templates[c * plane + p];
        if (spec.noise > 0.0f) v = std::clamp(v + spec.noise * rng.normal(), 0.0f, 1.0f);
        ds.images[i * plane + p] = v;
      }
    }
  }
  return ds;
}

}  // namespace drupi::data
