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

#include "drupi/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drupi/error.hpp"
#include "drupi/rng.hpp"

namespace drupi::coreset {

namespace {

struct View {
  const float* x;
  std::size_t d;
  const float* row(std::size_t i) const { return x + i * d; }
};

View view_of(const Tensor& features, std::span<const int> labels) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw ShapeError("features must be N x d with one row per label, got " + to_string(features.shape()));
  return {features.data().data(), features.dim(1)};
}

std::vector<std::vector<std::size_t>> members_by_class(std::span<const int> labels, std::size_t classes,
                                                       std::size_t ipc) {
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range");
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  if (ipc == 0) throw InvalidArgument("ipc must be >= 1");
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].empty()) throw InvalidArgument("class " + std::to_string(c) + " is empty");
    if (members[c].size() < ipc)
      throw InvalidArgument("class " + std::to_string(c) + " has " + std::to_string(members[c].size()) +
                            " examples, fewer than ipc " + std::to_string(ipc));
  }
  return members;
}

std::vector<double> class_mean(const View& v, const std::vector<std::size_t>& idx) {
  std::vector<double> mu(v.d, 0.0);
  for (std::size_t i : idx)
    for (std::size_t j = 0; j < v.d; ++j) mu[j] += v.row(i)[j];
  for (double& m : mu) m /= static_cast<double>(idx.size());
  return mu;
}

// Distances within this relative margin count as ties and go to the lower index.
bool less_than(double a, double b) {
  return std::isinf(b) ? a < b : a < b - 1e-12 * std::max(1.0, std::abs(b));
}

double dist2(const float* a, const float* b, std::size_t d) {
  double s = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = static_cast<double>(a[j]) - b[j];
    s += t * t;
  }
  return s;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Random: return "random";
    case Method::Herding: return "herding";
    case Method::KCenter: return "kcenter";
    case Method::Forgetting: return "forgetting";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::Random, Method::Herding, Method::KCenter, Method::Forgetting})
    if (name == method_name(m)) return m;
  throw InvalidArgument("unknown selection method '" + std::string(name) + "'");
}

std::vector<std::size_t> select_random(const data::LabeledDataset& ds, std::size_t ipc, std::uint64_t seed) {
  ds.validate(false);
  const auto members = members_by_class(ds.labels, ds.classes, ipc);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < ds.classes; ++c) {
    Rng rng(derive_seed(seed, "select-random", c));
    for (std::size_t k : rng.sample(members[c].size(), ipc)) out.push_back(members[c][k]);
  }
  return out;
}

std::vector<std::size_t> select_herding(const Tensor& features, std::span<const int> labels, std::size_t classes,
                                        std::size_t ipc) {
  const View v = view_of(features, labels);
  const auto members = members_by_class(labels, classes, ipc);
  std::vector<std::size_t> out;
  for (const auto& idx : members) {
    const auto mu = class_mean(v, idx);
    std::vector<double> sum(v.d, 0.0);
    std::vector<bool> taken(idx.size(), false);
    for (std::size_t k = 1; k <= ipc; ++k) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < idx.size(); ++a) {
        if (taken[a]) continue;
        const float* x = v.row(idx[a]);
        double dd = 0;
        for (std::size_t j = 0; j < v.d; ++j) {
          const double t = mu[j] - (sum[j] + x[j]) / static_cast<double>(k);
          dd += t * t;
        }
        if (less_than(dd, best_d)) best_d = dd, best = a;
      }
      taken[best] = true;
      for (std::size_t j = 0; j < v.d; ++j) sum[j] += v.row(idx[best])[j];
      out.push_back(idx[best]);
    }
  }
  return out;
}

std::vector<std::size_t> select_kcenter(const Tensor& features, std::span<const int> labels, std::size_t classes,
                                        std::size_t ipc) {
  const View v = view_of(features, labels);
  const auto members = members_by_class(labels, classes, ipc);
  std::vector<std::size_t> out;
  for (const auto& idx : members) {
    const auto mu = class_mean(v, idx);
    std::size_t first = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < idx.size(); ++a) {
      double dd = 0;
      for (std::size_t j = 0; j < v.d; ++j) {
        const double t = v.row(idx[a])[j] - mu[j];
        dd += t * t;
      }
      if (less_than(dd, best)) best = dd, first = a;
    }
    std::vector<double> nearest(idx.size(), std::numeric_limits<double>::infinity());
    std::vector<bool> taken(idx.size(), false);
    std::size_t pick = first;
    for (std::size_t k = 0; k < ipc; ++k) {
      taken[pick] = true;
      out.push_back(idx[pick]);
      double far = -1;
      std::size_t next = 0;
      for (std::size_t a = 0; a < idx.size(); ++a) {
        nearest[a] = std::min(nearest[a], dist2(v.row(idx[a]), v.row(idx[pick]), v.d));
        if (!taken[a] && (far < 0 || less_than(far, nearest[a]))) far = nearest[a], next = a;
      }
      pick = next;
    }
  }
  return out;
}

std::vector<double> forgetting_events(const std::vector<std::vector<bool>>& correct) {
  if (correct.size() < 2) throw InvalidArgument("forgetting needs at least 2 epochs of predictions");
  const std::size_t n = correct.front().size();
  std::vector<double> events(n, 0.0);
  std::vector<bool> learned(n, false);
  for (std::size_t e = 0; e < correct.size(); ++e) {
    if (correct[e].size() != n) throw InvalidArgument("prediction history rows differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      learned[i] = learned[i] || correct[e][i];
      if (e > 0 && correct[e - 1][i] && !correct[e][i]) events[i] += 1.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!learned[i]) events[i] = std::numeric_limits<double>::infinity();
  return events;
}

std::vector<std::size_t> top_per_class(std::span<const double> score, std::span<const int> labels,
                                       std::size_t classes, std::size_t ipc) {
  if (score.size() != labels.size()) throw InvalidArgument("score length differs from the dataset size");
  const auto members = members_by_class(labels, classes, ipc);
  std::vector<std::size_t> out;
  for (auto idx : members) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ipc));
  }
  return out;
}

SelectionScore forgetting_scores(const data::LabeledDataset& ds, const ProxyOptions& opts, std::uint64_t seed) {
  if (opts.train.epochs < 2) throw InvalidArgument("forgetting needs at least 2 training epochs");
  ds.validate(false);
  std::vector<std::vector<bool>> history;
  auto record = [&](std::size_t, const nn::ModelState& m) {
    const auto pred = nn::predict(m, ds.images);
    std::vector<bool> ok(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) ok[i] = pred[i] == ds.labels[i];
    history.push_back(std::move(ok));
  };
  nn::TrainOptions t = opts.train;
  t.seed = derive_seed(seed, "batching");
  nn::train_supervised(nn::init_model(opts.spec, derive_seed(seed, "model-init")), ds, t, record);
  return {forgetting_events(history), Method::Forgetting};
}

std::vector<std::size_t> select_forgetting(const data::LabeledDataset& ds, std::size_t ipc, const ProxyOptions& opts,
                                           std::uint64_t seed) {
  members_by_class(ds.labels, ds.classes, ipc);
  const auto s = forgetting_scores(ds, opts, seed);
  return top_per_class(s.score, ds.labels, ds.classes, ipc);
}

Tensor embed(const nn::ModelState& model, const Tensor& images) {
  Tensor f = nn::forward_split(model, images, nn::FeatureTap::final_layer(model.spec)).features;
  const std::size_t n = f.dim(0);
  return f.reshaped({n, f.numel() / n});
}

double covering_radius(const Tensor& features, std::span<const int> labels, std::span<const std::size_t> selected) {
  const View v = view_of(features, labels);
  double radius = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t s : selected)
      if (labels[s] == labels[i]) nearest = std::min(nearest, dist2(v.row(i), v.row(s), v.d));
    radius = std::max(radius, nearest);
  }
  return std::sqrt(radius);
}

}  // namespace drupi::coreset
