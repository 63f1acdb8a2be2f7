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

#include "drupi/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <zlib.h>

#include "drupi/error.hpp"

namespace drupi::data {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'R', 'P', 'I'};
constexpr std::size_t kPrefix = 4 + 2 + 4;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_le(std::vector<unsigned char>& out, std::uint32_t v, int bytes) {
  for (int k = 0; k < bytes; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

std::uint32_t get_le(std::span<const unsigned char> b, std::size_t at, int bytes) {
  std::uint32_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= std::uint32_t{b[at + k]} << (8 * k);
  return v;
}

void put_floats(std::vector<unsigned char>& out, std::span<const float> values) {
  for (float f : values) put_le(out, std::bit_cast<std::uint32_t>(f), 4);
}

std::uint32_t crc_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

Tensor labels_tensor(const std::vector<int>& labels) {
  Tensor t({labels.size()});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = static_cast<float>(labels[i]);
  return t;
}

}  // namespace

std::vector<unsigned char> encode_reduced(const ReducedDataset& ds) {
  ds.validate();
  std::vector<std::pair<std::string, const Tensor*>> order;
  const Tensor labels = labels_tensor(ds.labels);
  order.emplace_back("images", &ds.images);
  order.emplace_back("labels", &labels);
  if (ds.soft_labels) order.emplace_back("soft_labels", &*ds.soft_labels);
  if (ds.features) order.emplace_back("features", &*ds.features);
  if (ds.attention) order.emplace_back("attention", &*ds.attention);

  json header;
  header["classes"] = ds.classes;
  header["examples"] = ds.size();
  header["n_feat"] = ds.n_feat();
  header["attention_kind"] = ds.attention_kind ? json(std::string(attention_name(*ds.attention_kind))) : json(nullptr);
  header["provenance"] = {{"backend", ds.provenance.backend},
                          {"config_hash", ds.provenance.config_hash},
                          {"seed", ds.provenance.seed},
                          {"feature_layer", ds.provenance.feature_layer}};
  json tensors = json::array();
  for (auto& [name, t] : order) tensors.push_back({{"name", name}, {"shape", t->shape()}, {"dtype", "f32le"}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_le(out, kContainerVersion, 2);
  put_le(out, static_cast<std::uint32_t>(text.size()), 4);
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_at = out.size();
  for (auto& [name, t] : order) put_floats(out, t->data());
  const std::uint32_t crc = crc_of(std::span(out).subspan(payload_at));
  put_le(out, crc, 4);
  return out;
}

ReducedDataset decode_reduced(std::span<const unsigned char> b) {
  if (b.size() < kPrefix) throw FormatError("container truncated before header", b.size());
  if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("not a DRPI container", 0);
  const auto version = get_le(b, 4, 2);
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + ", expected " +
                      std::to_string(kContainerVersion), 4);
  const std::size_t hlen = get_le(b, 6, 4);
  if (b.size() < kPrefix + hlen) throw FormatError("container truncated inside header", b.size());

  json header;
  try {
    header = json::parse(b.begin() + kPrefix, b.begin() + kPrefix + hlen);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what(), kPrefix);
  }

  ReducedDataset ds;
  std::size_t payload_bytes = 0;
  std::vector<std::pair<std::string, Shape>> order;
  try {
    ds.classes = header.at("classes").get<std::size_t>();
    for (const auto& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype", kPrefix);
      order.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      payload_bytes += 4 * numel(order.back().second);
    }
    const auto& p = header.at("provenance");
    ds.provenance = {p.at("backend").get<std::string>(), p.at("config_hash").get<std::string>(),
                     p.at("seed").get<std::uint64_t>(), p.at("feature_layer").get<std::size_t>()};
    if (!header.at("attention_kind").is_null())
      ds.attention_kind = parse_attention(header.at("attention_kind").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("header field error: ") + e.what(), kPrefix);
  }

  const std::size_t payload_at = kPrefix + hlen;
  const std::size_t expected = payload_bytes + 4;
  const std::size_t actual = b.size() - payload_at;
  if (actual != expected)
    throw FormatError("payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual), payload_at);
  const std::uint32_t stored = get_le(b, payload_at + payload_bytes, 4);
  const std::uint32_t computed = crc_of(b.subspan(payload_at, payload_bytes));
  if (stored != computed) throw FormatError("payload CRC32 mismatch", payload_at + payload_bytes);

  std::size_t at = payload_at;
  for (auto& [name, shape] : order) {
    const std::size_t n = numel(shape);
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_le(b, at + 4 * i, 4));
    Tensor t(shape, std::move(values));
    if (name == "images") {
      ds.images = std::move(t);
    } else if (name == "labels") {
      for (float v : t.data()) {
        if (v != std::floor(v) || v < 0) throw FormatError("label payload holds a non-integer", at);
        ds.labels.push_back(static_cast<int>(v));
      }
    } else if (name == "soft_labels") {
      ds.soft_labels = std::move(t);
    } else if (name == "features") {
      ds.features = std::move(t);
    } else if (name == "attention") {
      ds.attention = std::move(t);
    } else {
      throw FormatError("unknown tensor '" + name + "'", kPrefix);
    }
    at += 4 * n;
  }

  try {
    if (header.at("examples").get<std::size_t>() != ds.size())
      throw FormatError("header declares " + std::to_string(header.at("examples").get<std::size_t>()) +
                        " examples but payload holds " + std::to_string(ds.size()), kPrefix);
    const auto n_feat = header.at("n_feat").get<std::size_t>();
    if (n_feat != ds.n_feat())
      throw FormatError("header declares n_feat=" + std::to_string(n_feat) + " but payload holds " +
                        std::to_string(ds.n_feat()), kPrefix);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header field error: ") + e.what(), kPrefix);
  }
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid dataset: ") + e.what(), payload_at);
  }
  return ds;
}

void save_reduced(const ReducedDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_reduced(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("write failed for " + path.string());
}

namespace {
std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

ReducedDataset load_reduced(const std::filesystem::path& path) { return decode_reduced(slurp(path)); }

std::string container_header(const std::filesystem::path& path) {
  const auto b = slurp(path);
  if (b.size() < kPrefix || std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("not a DRPI container", 0);
  const std::size_t hlen = get_le(b, 6, 4);
  if (b.size() < kPrefix + hlen) throw FormatError("container truncated inside header", b.size());
  return json::parse(b.begin() + kPrefix, b.begin() + kPrefix + hlen).dump(2);
}

}  // namespace drupi::data
