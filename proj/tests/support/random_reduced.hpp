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

#include <bit>
#include <cstdint>

#include "drupi/data.hpp"
#include "drupi/rng.hpp"

namespace drupi::testing {

/// A valid reduced dataset with a random subset of channels and random shapes.
inline data::ReducedDataset random_reduced(Rng& rng) {
  data::ReducedDataset ds;
  ds.classes = 2 + rng.below(4);
  const std::size_t m = ds.classes * (1 + rng.below(3));
  const std::size_t ch = 1 + rng.below(3), hw = 2 + rng.below(6);
  ds.images = Tensor({m, ch, hw, hw});
  for (auto& v : ds.images.data()) v = rng.uniform();
  for (std::size_t i = 0; i < m; ++i) ds.labels.push_back(static_cast<int>(i % ds.classes));
  if (rng.below(2)) {
    Tensor soft({m, ds.classes});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < ds.classes; ++c) s += soft[i * ds.classes + c] = 0.05f + rng.uniform();
      for (std::size_t c = 0; c < ds.classes; ++c)
        soft[i * ds.classes + c] = static_cast<float>(soft[i * ds.classes + c] / s);
      // Renormalize in float so rows are stochastic at float precision.
      float fs = 0;
      for (std::size_t c = 0; c < ds.classes; ++c) fs += soft[i * ds.classes + c];
      soft[i * ds.classes] += 1.0f - fs;
    }
    ds.soft_labels = std::move(soft);
  }
  const std::size_t fch = 1 + rng.below(4), fhw = 1 + rng.below(4);
  if (rng.below(2)) {
    ds.features = Tensor({m, 1 + rng.below(3), fch, fhw, fhw});
    for (auto& v : ds.features->data()) v = 4.0f * rng.normal();
  }
  if (rng.below(2)) {
    ds.attention_kind = rng.below(2) ? data::AttentionKind::Spatial : data::AttentionKind::Channel;
    ds.attention = *ds.attention_kind == data::AttentionKind::Spatial ? Tensor({m, 1, fhw, fhw})
                                                                      : Tensor({m, fch, 1, 1});
    for (auto& v : ds.attention->data()) v = rng.normal();
  }
  ds.provenance = {rng.below(2) ? "dc" : "dm", "cafe" + std::to_string(rng.below(1000)), rng.next(),
                   rng.below(4)};
  return ds;
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

inline bool bits_equal(const data::ReducedDataset& a, const data::ReducedDataset& b) {
  auto opt = [](const std::optional<Tensor>& x, const std::optional<Tensor>& y) {
    return x.has_value() == y.has_value() && (!x || bits_equal(*x, *y));
  };
  return a.classes == b.classes && a.labels == b.labels && bits_equal(a.images, b.images) &&
         opt(a.soft_labels, b.soft_labels) && opt(a.features, b.features) && opt(a.attention, b.attention) &&
         a.attention_kind == b.attention_kind && a.provenance == b.provenance;
}

}  // namespace drupi::testing
