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

#include "drupi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "drupi/error.hpp"
#include "drupi/rng.hpp"

namespace drupi::metrics {

namespace {

double sq_dist(const float* a, const double* c, std::size_t d) {
  double s = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - c[j];
    s += t * t;
  }
  return s;
}

}  // namespace

std::vector<int> kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t iterations) {
  if (points.rank() != 2) throw ShapeError("k-means expects N x D points, got " + to_string(points.shape()));
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (k < 1 || k > n) throw InvalidArgument("k-means needs 1 <= k <= N");
  const float* x = points.data().data();
  Rng rng(seed);

  std::vector<double> centers(k * d);
  auto set_center = [&](std::size_t c, std::size_t i) {
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = x[i * d + j];
  };
  set_center(0, rng.below(n));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(x + i * d, centers.data() + (c - 1) * d, d));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= nearest[pick];
        if (r < 0 && nearest[pick] > 0) break;
      }
    }
    set_center(c, pick);
  }

  std::vector<int> assign(n, -1);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(x + i * d, centers.data() + c * d, d);
        if (dd < bd) bd = dd, best = static_cast<int>(c);
      }
      changed |= assign[i] != best;
      assign[i] = best;
    }
    if (!changed && it > 0) break;
    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);
  }
  return assign;
}

double mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("labelings must be nonempty and of equal length");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double mi = 0;
  for (const auto& [key, p] : joint) mi += p * std::log(p / (pa[key.first] * pb[key.second]));
  return std::max(0.0, mi);
}

double linear_probe_accuracy(const Tensor& points, std::span<const int> labels, std::size_t classes,
                             std::size_t steps, double lr) {
  if (points.rank() != 2 || points.dim(0) != labels.size())
    throw ShapeError("probe expects N x D points matching the labels");
  const std::size_t n = points.dim(0), d = points.dim(1), c = classes;
  std::vector<double> z(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += points[i * d + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (points[i * d + j] - mean) * (points[i * d + j] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) z[i * d + j] = sd > 1e-12 ? (points[i * d + j] - mean) / sd : 0.0;
  }
  std::vector<double> w(d * c, 0.0), b(c, 0.0), logits(n * c), gw(d * c), gb(c);
  auto compute_logits = [&] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        double v = b[k];
        for (std::size_t j = 0; j < d; ++j) v += z[i * d + j] * w[j * c + k];
        logits[i * c + k] = v;
      }
  };
  const double step = lr / std::sqrt(static_cast<double>(std::max<std::size_t>(d, 1)));
  for (std::size_t s = 0; s < steps; ++s) {
    compute_logits();
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = &logits[i * c];
      const double mx = *std::max_element(row, row + c);
      double sum = 0;
      for (std::size_t k = 0; k < c; ++k) sum += row[k] = std::exp(row[k] - mx);
      for (std::size_t k = 0; k < c; ++k) {
        const double g = (row[k] / sum - (labels[i] == static_cast<int>(k) ? 1.0 : 0.0)) / static_cast<double>(n);
        gb[k] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * c + k] += g * z[i * d + j];
      }
    }
    for (std::size_t k = 0; k < d * c; ++k) w[k] -= step * gw[k];
    for (std::size_t k = 0; k < c; ++k) b[k] -= lr * gb[k];
  }
  compute_logits();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &logits[i * c];
    correct += static_cast<int>(std::max_element(row, row + c) - row) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

DiversityReport diversity_discriminability(const Tensor& feature_sets, std::span<const int> labels,
                                           std::size_t classes, std::uint64_t seed) {
  if (feature_sets.rank() < 2 || feature_sets.dim(0) != labels.size())
    throw ShapeError("feature labels must be M x n_feat x shape with one row per label");
  if (classes < 2) throw InvalidArgument("diversity needs at least 2 classes");
  std::vector<std::size_t> counts(classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InvalidArgument("label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c : counts)
    if (c < 2) throw InvalidArgument("diversity needs at least 2 examples per class");

  const std::size_t m = feature_sets.dim(0);
  const std::size_t nf = feature_sets.rank() >= 3 ? feature_sets.dim(1) : 1;
  const std::size_t d = feature_sets.numel() / (m * nf);
  Tensor flat({m, d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < nf; ++k) s += feature_sets[(i * nf + k) * d + j];
      flat[i * d + j] = static_cast<float>(s / static_cast<double>(nf));
    }

  DiversityReport r;
  r.degenerate = true;
  for (std::size_t i = 1; i < m && r.degenerate; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (flat[i * d + j] != flat[j]) {
        r.degenerate = false;
        break;
      }
  r.discriminability = linear_probe_accuracy(flat, labels, classes);
  if (r.degenerate) return r;
  const auto clusters = kmeans(flat, classes, seed);
  r.mutual_information = mutual_information(clusters, labels);
  r.diversity = -r.mutual_information;
  return r;
}

Cosine gradient_cosine(const GradMap& a, const GradMap& b) {
  if (a.size() != b.size()) throw InvalidArgument("gradient maps have different keys");
  double dot = 0, na = 0, nb = 0;
  for (const auto& [name, ga] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw InvalidArgument("gradient map lacks " + name);
    if (it->second.shape() != ga.shape()) throw ShapeError(name + ": gradient shapes differ");
    for (std::size_t i = 0; i < ga.numel(); ++i) {
      const double x = ga[i], y = it->second[i];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
  }
  if (na == 0 || nb == 0) return {0.0, true};
  return {dot / std::sqrt(na * nb), false};
}

}  // namespace drupi::metrics
