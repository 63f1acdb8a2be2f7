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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drupi/tensor.hpp"

namespace drupi::data {

/// Images N x Ch x H x W in [0,1] with integer labels in [0, classes).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const;
  /// Throws InvalidArgument. `all_classes` additionally requires every class to appear.
  void validate(bool all_classes = true) const;
  std::vector<std::size_t> class_indices(int c) const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

enum class AttentionKind { Spatial, Channel };

std::string_view attention_name(AttentionKind k);
AttentionKind parse_attention(std::string_view name);

struct Provenance {
  std::string backend;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t feature_layer = 0;  // tap the feature labels were taken at, 0 if none
  bool operator==(const Provenance&) const = default;
};

/// The reduced dataset plus its privileged channels.
struct ReducedDataset {
  Tensor images;                           // M x Ch x H x W
  std::vector<int> labels;                 // M
  std::size_t classes = 0;
  std::optional<Tensor> soft_labels;       // M x C, rows sum to 1
  std::optional<Tensor> features;          // M x n_feat x (feature shape)
  std::optional<AttentionKind> attention_kind;
  std::optional<Tensor> attention;         // M x (pooled shape)
  Provenance provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t n_feat() const { return features ? features->dim(1) : 0; }
  /// Per-example feature-label shape (without the M and n_feat axes).
  Shape feature_shape() const;
  /// Throws InvalidArgument naming the violated invariant.
  void validate() const;
  LabeledDataset as_labeled() const { return {images, labels, classes}; }
  /// Copies the indexed rows of every channel; provenance is kept.
  ReducedDataset subset(std::span<const std::size_t> rows) const;
  bool operator==(const ReducedDataset&) const = default;
};

/// Copies the indexed examples of `source` into a reduced dataset without privileged channels.
ReducedDataset reduce(const LabeledDataset& source, std::span<const std::size_t> indices);

/// Per-class counts for a fraction of N: floor of the total split evenly,
/// remainder to the lowest class indices.
std::vector<std::size_t> counts_from_fraction(double fraction, std::size_t n, std::size_t classes);

/// MNIST-style IDX pair. Errors are FormatError with the failing byte offset.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t classes = 10);

struct BlobSpec {
  std::size_t classes = 3;
  std::size_t per_class = 10;
  std::size_t channels = 1;
  std::size_t size = 16;
  std::uint64_t template_seed = 0;
  float noise = 0.05f;
  float contrast = 0.1f;  // amplitude of the class-specific pattern

  void validate() const;
};

/// Per-class template images C x Ch x H x W, determined by `template_seed`.
Tensor blob_templates(const BlobSpec& spec);

/// Class c image = template_c + N(0, noise^2) per pixel. Class-major order.
LabeledDataset make_blobs(const BlobSpec& spec, std::uint64_t seed);

}  // namespace drupi::data
