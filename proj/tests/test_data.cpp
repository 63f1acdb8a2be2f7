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
#include <filesystem>
#include <fstream>
#include <set>

#include "drupi/container.hpp"
#include "drupi/data.hpp"
#include "drupi/error.hpp"
#include "drupi/rng.hpp"
#include "support/random_reduced.hpp"

using namespace drupi;
using namespace drupi::data;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = DRUPI_FIXTURE_DIR;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("drupi-test-" + name);
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Train-accuracy oracle: multinomial logistic regression on raw pixels, batch gradient descent.
double linear_probe_accuracy(const LabeledDataset& ds, int steps = 300, double lr = 0.5) {
  const std::size_t n = ds.size(), d = ds.images.numel() / n, c = ds.classes;
  std::vector<double> w(d * c, 0.0), b(c, 0.0);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += ds.images[i * d + j] / static_cast<double>(n);
  auto x = [&](std::size_t i, std::size_t j) { return (ds.images[i * d + j] - mean[j]) * 10.0; };
  std::vector<double> p(c);
  for (int s = 0; s < steps; ++s) {
    std::vector<double> gw(d * c, 0.0), gb(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::size_t k = 0; k < c; ++k) {
        p[k] = b[k];
        for (std::size_t j = 0; j < d; ++j) p[k] += w[j * c + k] * x(i, j);
        mx = std::max(mx, p[k]);
      }
      double z = 0;
      for (auto& v : p) z += v = std::exp(v - mx);
      for (std::size_t k = 0; k < c; ++k) {
        const double g = p[k] / z - (static_cast<int>(k) == ds.labels[i] ? 1.0 : 0.0);
        gb[k] += g / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) gw[j * c + k] += g * x(i, j) / static_cast<double>(n);
      }
    }
    for (std::size_t k = 0; k < d * c; ++k) w[k] -= lr * gw[k] / static_cast<double>(d) * 10;
    for (std::size_t k = 0; k < c; ++k) b[k] -= lr * gb[k];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bv = -1e300;
    for (std::size_t k = 0; k < c; ++k) {
      double v = b[k];
      for (std::size_t j = 0; j < d; ++j) v += w[j * c + k] * x(i, j);
      if (v > bv) bv = v, best = k;
    }
    correct += static_cast<int>(best) == ds.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("IDX fixture decodes to byte/255") {
  auto ds = load_idx(kFixtures / "tiny-images.idx3", kFixtures / "tiny-labels.idx1");
  REQUIRE(ds.images.shape() == Shape{3, 1, 4, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 16; ++k)
      CHECK(ds.images[i * 16 + k] == static_cast<float>((37 * i + 11 * k) % 256) / 255.0f);
  CHECK(ds.labels == std::vector<int>{7, 0, 3});
}

TEST_CASE("IDX errors") {
  const auto empty = temp_file("empty.idx");
  write_bytes(empty, {});
  CHECK_THROWS_AS(load_idx(empty, kFixtures / "tiny-labels.idx1"), FormatError);

  std::ifstream in(kFixtures / "tiny-images.idx3", std::ios::binary);
  std::vector<unsigned char> img((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto truncated = img;
  truncated.resize(40);
  const auto tpath = temp_file("trunc.idx3");
  write_bytes(tpath, truncated);
  try {
    load_idx(tpath, kFixtures / "tiny-labels.idx1");
    FAIL("truncated payload accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 40);
    CHECK(std::string(e.what()).find("expected 64") != std::string::npos);
  }

  auto bad_magic = img;
  bad_magic[3] = 0x01;
  const auto mpath = temp_file("magic.idx3");
  write_bytes(mpath, bad_magic);
  CHECK_THROWS_AS(load_idx(mpath, kFixtures / "tiny-labels.idx1"), FormatError);

  // Label count disagrees with image count.
  const auto lpath = temp_file("count.idx1");
  write_bytes(lpath, {0, 0, 8, 1, 0, 0, 0, 2, 1, 2});
  CHECK_THROWS_AS(load_idx(kFixtures / "tiny-images.idx3", lpath), FormatError);
  fs::remove(empty);
  fs::remove(tpath);
  fs::remove(mpath);
  fs::remove(lpath);
}

TEST_CASE("blobs are templates plus noise") {
  BlobSpec spec{3, 10, 1, 16, 5, 0.0f};
  auto ds = make_blobs(spec, 1);
  CHECK(ds.size() == 30);
  for (int c = 0; c < 3; ++c) CHECK(ds.class_indices(c).size() == 10);
  const Tensor t = blob_templates(spec);
  for (std::size_t i = 0; i < 30; ++i)
    CHECK(ds.images.rows(i, i + 1).reshaped({1, 16, 16}) ==
          t.rows(static_cast<std::size_t>(ds.labels[i]), static_cast<std::size_t>(ds.labels[i]) + 1).reshaped({1, 16, 16}));
  CHECK(make_blobs(spec, 1).images == make_blobs(spec, 2).images);

  spec.noise = 0.05f;
  CHECK(make_blobs(spec, 3).images == make_blobs(spec, 3).images);
  CHECK(make_blobs(spec, 3).images != make_blobs(spec, 4).images);
  CHECK(blob_templates(spec) == t);
  for (float v : make_blobs(spec, 3).images.data()) CHECK((v >= 0.0f && v <= 1.0f));

  spec.classes = 1;
  CHECK_THROWS_AS(make_blobs(spec, 1), InvalidArgument);
  spec.classes = 3;
  spec.noise = -1;
  CHECK_THROWS_AS(make_blobs(spec, 1), InvalidArgument);
}

TEST_CASE("blobs are linearly separable by a raw-pixel probe") {
  CHECK(linear_probe_accuracy(make_blobs(BlobSpec{3, 10, 1, 16, 0, 0.0f}, 1)) == 1.0);
  CHECK(linear_probe_accuracy(make_blobs(BlobSpec{3, 10, 1, 16, 0, 0.05f}, 1)) >= 0.95);
}

TEST_CASE("fraction sizes convert by floor with remainder to low classes") {
  CHECK(counts_from_fraction(0.1, 100, 3) == std::vector<std::size_t>{4, 3, 3});
  CHECK(counts_from_fraction(0.5, 10, 5) == std::vector<std::size_t>{1, 1, 1, 1, 1});
  CHECK(counts_from_fraction(0.05, 50, 3) == std::vector<std::size_t>{1, 1, 0});
  CHECK_THROWS_AS(counts_from_fraction(0.0, 10, 2), InvalidArgument);
}

TEST_CASE("reduce keeps ipc per class") {
  auto ds = make_blobs(BlobSpec{3, 10, 1, 16, 0, 0.05f}, 1);
  Rng rng(3);
  std::vector<std::size_t> idx;
  for (int c = 0; c < 3; ++c) {
    auto members = ds.class_indices(c);
    for (std::size_t k : rng.sample(members.size(), 2)) idx.push_back(members[k]);
  }
  auto r = reduce(ds, idx);
  r.validate();
  for (int c = 0; c < 3; ++c) CHECK(std::count(r.labels.begin(), r.labels.end(), c) == 2);
}

TEST_CASE("container round trips bit-exactly") {
  Rng rng(77);
  const auto path = temp_file("rt.drpi");
  for (int i = 0; i < 50; ++i) {
    auto ds = testing::random_reduced(rng);
    save_reduced(ds, path);
    CHECK(testing::bits_equal(load_reduced(path), ds));
  }
  auto ds = testing::random_reduced(rng);
  ds.soft_labels.reset();
  ds.features = Tensor({ds.size(), 3, 2, 1, 1});
  ds.attention_kind = AttentionKind::Channel;
  ds.attention = Tensor({ds.size(), 2, 1, 1}, 0.25f);
  auto soft = Tensor({ds.size(), ds.classes}, 1.0f / static_cast<float>(ds.classes));
  ds.soft_labels = soft;
  ds.features->data()[0] = -0.0f;
  save_reduced(ds, path);
  auto back = load_reduced(path);
  CHECK(testing::bits_equal(back, ds));
  CHECK(std::signbit(back.features->data()[0]));
  CHECK(container_header(path).find("\"n_feat\": 3") != std::string::npos);
  fs::remove(path);
}

TEST_CASE("container rejects corrupt files") {
  Rng rng(5);
  auto ds = testing::random_reduced(rng);
  ds.features = Tensor({ds.size(), 3, 2, 2, 2}, 0.5f);
  const auto good = encode_reduced(ds);

  auto truncated = good;
  truncated.resize(good.size() - 9);
  try {
    decode_reduced(truncated);
    FAIL("truncated accepted");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected") != std::string::npos);
    CHECK(msg.find("got") != std::string::npos);
  }

  auto flipped = good;
  flipped[good.size() - 20] ^= 0x10;
  try {
    decode_reduced(flipped);
    FAIL("corrupt payload accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("CRC32") != std::string::npos);
  }

  auto version = good;
  version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_reduced(version), doctest::Contains("version"), FormatError);

  auto magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_reduced(magic), FormatError);

  // Header claims n_feat=3 while the features tensor holds 2 members.
  auto two = ds;
  two.features = Tensor({ds.size(), 2, 2, 2, 2}, 0.5f);
  auto bytes = encode_reduced(two);
  const std::string needle = "\"n_feat\":2";
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  REQUIRE(it != bytes.end());
  *(it + needle.size() - 1) = '3';
  CHECK_THROWS_WITH_AS(decode_reduced(bytes), doctest::Contains("n_feat=3"), FormatError);
}

TEST_CASE("reduced dataset invariants") {
  Rng rng(9);
  auto ds = testing::random_reduced(rng);
  ds.validate();
  auto bad = ds;
  bad.soft_labels = Tensor({ds.size(), ds.classes}, 0.9f);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = ds;
  bad.labels[0] = static_cast<int>(ds.classes);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = ds;
  bad.attention_kind = AttentionKind::Spatial;
  bad.attention = Tensor({ds.size(), 2, 3, 3});
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = ds;
  bad.features = Tensor({ds.size(), 1, 2, 2, 2}, NAN);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(encode_reduced(bad), InvalidArgument);
}
