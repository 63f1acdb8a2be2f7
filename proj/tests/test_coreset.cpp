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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "drupi/coreset.hpp"
#include "drupi/error.hpp"
#include "drupi/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/selection_oracle.hpp"

using namespace drupi;
using namespace drupi::coreset;
using drupi::testing::IntPoints;

namespace {

Tensor to_tensor(const IntPoints& p) {
  Tensor t({p.size(), p[0].size()});
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j) t[i * p[i].size() + j] = static_cast<float>(p[i][j]);
  return t;
}

Tensor column(std::initializer_list<float> v) { return Tensor({v.size(), 1}, std::vector<float>(v)); }

void check_selection_contract(const std::vector<std::size_t>& sel, std::span<const int> labels,
                              std::size_t classes, std::size_t ipc) {
  CHECK(sel.size() == classes * ipc);
  CHECK(std::set<std::size_t>(sel.begin(), sel.end()).size() == sel.size());
  std::vector<std::size_t> per(classes, 0);
  for (auto i : sel) {
    REQUIRE(i < labels.size());
    ++per[static_cast<std::size_t>(labels[i])];
  }
  for (auto c : per) CHECK(c == ipc);
}

data::LabeledDataset small_blobs(std::size_t per_class = 10) {
  return data::make_blobs(data::BlobSpec{3, per_class, 1, 8, 2, 0.05f, 0.2f}, 1);
}

}  // namespace

TEST_CASE("random selection") {
  auto ds = small_blobs();
  auto all = select_random(ds, 10, 1);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 30);
  auto two = select_random(ds, 2, 1);
  check_selection_contract(two, ds.labels, 3, 2);
  CHECK(two == select_random(ds, 2, 1));
  CHECK_THROWS_AS(select_random(ds, 11, 1), InvalidArgument);

  auto big = data::make_blobs(data::BlobSpec{4, 250, 1, 4, 0, 0.1f}, 1);
  auto a = select_random(big, 20, 1), b = select_random(big, 20, 2);
  CHECK(std::set<std::size_t>(a.begin(), a.end()) != std::set<std::size_t>(b.begin(), b.end()));
}

TEST_CASE("herding examples") {
  std::vector<int> one{0, 0, 0};
  CHECK(select_herding(column({0, 1, 2}), one, 1, 1) == std::vector<std::size_t>{1});
  auto all = select_herding(column({0, 1, 2}), one, 1, 3);
  CHECK(std::set<std::size_t>(all.begin(), all.end()) == std::set<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(select_herding(column({0, 1, 2}), std::vector<int>{0, 0, 0}, 2, 1), InvalidArgument);
}

TEST_CASE("herding with ipc equal to the class size reproduces the class mean") {
  Rng rng(3);
  Tensor f = drupi::testing::random_tensor(rng, {12, 5});
  std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
  auto sel = select_herding(f, y, 3, 4);
  check_selection_contract(sel, y, 3, 4);
  for (int c = 0; c < 3; ++c)
    for (std::size_t j = 0; j < 5; ++j) {
      double a = 0, b = 0;
      for (std::size_t i = 0; i < 12; ++i)
        if (y[i] == c) a += f[i * 5 + j] / 4.0;
      for (auto i : sel)
        if (y[i] == c) b += f[i * 5 + j] / 4.0;
      CHECK(std::abs(a - b) < 1e-5);
    }
}

TEST_CASE("herding on a duplicated dataset") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor f = drupi::testing::random_tensor(rng, {6, 3});
    Tensor f2({12, 3});
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 3; ++j) f2[i * 3 + j] = f[(i % 6) * 3 + j];
    const std::vector<int> y(6, 0), y2(12, 0);
    // Duplicates leave the class mean unchanged, so the first pick is the same point.
    auto a = select_herding(f, y, 1, 1);
    auto b = select_herding(f2, y2, 1, 1);
    CHECK(b[0] == a[0]);
    auto full = select_herding(f2, y2, 1, 12);
    for (std::size_t j = 0; j < 3; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < 6; ++i) ma += f[i * 3 + j] / 6.0;
      for (auto i : full) mb += f2[i * 3 + j] / 12.0;
      CHECK(std::abs(ma - mb) < 1e-6);
    }
  }
}

TEST_CASE("k-center examples") {
  std::vector<int> one{0, 0, 0};
  CHECK(select_kcenter(column({0, 5, 10}), one, 1, 1) == std::vector<std::size_t>{1});
  CHECK(select_kcenter(column({0, 5, 10}), one, 1, 2) == std::vector<std::size_t>{1, 0});
  CHECK(select_kcenter(column({0, 5, 10}), one, 1, 3) == std::vector<std::size_t>{1, 0, 2});
  CHECK(select_kcenter(column({4, 0, 9, 5}), std::vector<int>{0, 0, 0, 0}, 1, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("greedy rules match brute-force enumeration") {
  Rng rng(5);
  int instances = 0;
  for (std::size_t dim : {1u, 2u}) {
    for (std::size_t n = 1; n <= 6; ++n) {
      for (int trial = 0; trial < 40; ++trial) {
        IntPoints p(n, std::vector<std::int64_t>(dim));
        for (auto& x : p)
          for (auto& v : x) v = static_cast<std::int64_t>(rng.below(5));
        const Tensor t = to_tensor(p);
        const std::vector<int> y(n, 0);
        for (std::size_t k = 1; k <= n; ++k) {
          auto h = drupi::testing::herding_oracle(p, k);
          auto c = drupi::testing::kcenter_oracle(p, k);
          REQUIRE(h.size() == 1);
          REQUIRE(c.size() == 1);
          CHECK(select_herding(t, y, 1, k) == h[0]);
          CHECK(select_kcenter(t, y, 1, k) == c[0]);
          ++instances;
        }
      }
    }
  }
  CHECK(instances > 1000);
}

TEST_CASE("k-center covers at least as well as random selection") {
  Rng rng(6);
  int wins = 0;
  for (int inst = 0; inst < 50; ++inst) {
    Tensor f = drupi::testing::random_tensor(rng, {100, 2});
    std::vector<int> y(100, 0);
    auto kc = select_kcenter(f, y, 1, 10);
    auto rs = rng.sample(100, 10);
    wins += covering_radius(f, y, kc) <= covering_radius(f, y, rs);
  }
  CHECK(wins == 50);
}

TEST_CASE("k-center is translation invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor f({20, 3});
    for (auto& v : f.data()) v = static_cast<float>(rng.below(50)) * 0.25f;
    Tensor g = f;
    for (std::size_t i = 0; i < 20; ++i) {
      g[i * 3] += 100.0f;
      g[i * 3 + 1] -= 7.5f;
      g[i * 3 + 2] += 0.25f;
    }
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) y.push_back(i % 2);
    CHECK(select_kcenter(f, y, 2, 4) == select_kcenter(g, y, 2, 4));
  }
}

TEST_CASE("forgetting events count correct-to-wrong transitions") {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<bool>> h{{true, true, false, true, false},
                                   {true, false, false, true, false},
                                   {true, true, false, false, true},
                                   {true, false, false, true, false}};
  auto e = forgetting_events(h);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 2.0);
  CHECK(e[2] == inf);
  CHECK(e[3] == 1.0);
  CHECK(e[4] == 1.0);
  CHECK_THROWS_AS(forgetting_events({{true}}), InvalidArgument);

  std::vector<int> y{0, 0, 1, 1, 1};
  CHECK(top_per_class(e, y, 2, 1) == std::vector<std::size_t>{1, 2});
  std::vector<double> tie{1, 1, 0, 0, 0};
  CHECK(top_per_class(tie, y, 2, 1) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("forgetting selection") {
  auto ds = small_blobs();
  ProxyOptions opts{nn::ModelSpec{nn::Family::ConvNet, 2, 8, {1, 8, 8}, 3}, {1, 0.01f, 16, 0}};
  CHECK_THROWS_AS(select_forgetting(ds, 2, opts, 1), InvalidArgument);

  // A mislabeled point is hard to hold on to: it should rank among the most forgotten.
  ds.labels[4] = 1;
  opts.train.epochs = 10;
  opts.train.lr = 0.05f;
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto sel = select_forgetting(ds, 2, opts, seed);
    check_selection_contract(sel, ds.labels, 3, 2);
    hits += std::find(sel.begin(), sel.end(), std::size_t{4}) != sel.end();
  }
  CHECK(hits >= 3);
}

TEST_CASE("embedding shape") {
  auto ds = small_blobs(2);
  auto m = nn::init_model({nn::Family::ConvNet, 2, 8, {1, 8, 8}, 3}, 1);
  CHECK(embed(m, ds.images).shape() == Shape{6, 32});
}
