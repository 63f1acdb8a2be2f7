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

#include <algorithm>
#include <climits>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace drupi::testing {

/// Integer points for exact greedy oracles. Each point has the same dimension.
using IntPoints = std::vector<std::vector<std::int64_t>>;

inline std::int64_t sq_norm(const std::vector<std::int64_t>& v) {
  std::int64_t s = 0;
  for (auto x : v) s += x * x;
  return s;
}

/// Enumerates every ordered selection of `k` distinct points and keeps those where each
/// step takes the lowest-index minimizer of `cost(chosen, candidate)`. Exactly one should remain.
inline std::vector<std::vector<std::size_t>> greedy_sequences(
    std::size_t n, std::size_t k,
    const std::function<std::int64_t(const std::vector<std::size_t>&, std::size_t)>& cost) {
  std::vector<std::vector<std::size_t>> valid;
  std::vector<std::size_t> seq;
  std::vector<bool> used(n, false);
  std::function<void()> rec = [&] {
    if (seq.size() == k) {
      // Check every prefix against every alternative.
      std::vector<std::size_t> prefix;
      for (std::size_t step = 0; step < k; ++step) {
        const std::int64_t mine = cost(prefix, seq[step]);
        for (std::size_t a = 0; a < n; ++a) {
          if (std::find(prefix.begin(), prefix.end(), a) != prefix.end() || a == seq[step]) continue;
          const std::int64_t other = cost(prefix, a);
          if (other < mine || (other == mine && a < seq[step])) return;
        }
        prefix.push_back(seq[step]);
      }
      valid.push_back(seq);
      return;
    }
    for (std::size_t a = 0; a < n; ++a) {
      if (used[a]) continue;
      used[a] = true;
      seq.push_back(a);
      rec();
      seq.pop_back();
      used[a] = false;
    }
  };
  rec();
  return valid;
}

/// Running mean closest to the class mean, scaled by n*k to stay in integers.
inline std::vector<std::vector<std::size_t>> herding_oracle(const IntPoints& p, std::size_t k) {
  const std::size_t n = p.size(), d = p[0].size();
  std::vector<std::int64_t> total(d, 0);
  for (const auto& x : p)
    for (std::size_t j = 0; j < d; ++j) total[j] += x[j];
  return greedy_sequences(n, k, [&](const std::vector<std::size_t>& chosen, std::size_t cand) {
    const auto step = static_cast<std::int64_t>(chosen.size() + 1);
    std::vector<std::int64_t> diff(d);
    for (std::size_t j = 0; j < d; ++j) {
      std::int64_t s = p[cand][j];
      for (auto c : chosen) s += p[c][j];
      diff[j] = static_cast<std::int64_t>(n) * s - step * total[j];
    }
    return sq_norm(diff);
  });
}

/// First pick nearest the mean, then farthest from the chosen set (cost is negated distance).
inline std::vector<std::vector<std::size_t>> kcenter_oracle(const IntPoints& p, std::size_t k) {
  const std::size_t n = p.size(), d = p[0].size();
  std::vector<std::int64_t> total(d, 0);
  for (const auto& x : p)
    for (std::size_t j = 0; j < d; ++j) total[j] += x[j];
  return greedy_sequences(n, k, [&](const std::vector<std::size_t>& chosen, std::size_t cand) {
    std::vector<std::int64_t> diff(d);
    if (chosen.empty()) {
      for (std::size_t j = 0; j < d; ++j) diff[j] = static_cast<std::int64_t>(n) * p[cand][j] - total[j];
      return sq_norm(diff);
    }
    std::int64_t nearest = INT64_MAX;
    for (auto c : chosen) {
      for (std::size_t j = 0; j < d; ++j) diff[j] = p[cand][j] - p[c][j];
      nearest = std::min(nearest, sq_norm(diff));
    }
    return -nearest;
  });
}

}  // namespace drupi::testing
