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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "drupi/data.hpp"

namespace drupi::data {

inline constexpr std::uint16_t kContainerVersion = 1;

/// Single-file container: "DRPI", version u16, header length u32, JSON header,
/// float32 LE payloads in header order, CRC32 of the payload.
std::vector<unsigned char> encode_reduced(const ReducedDataset& ds);
ReducedDataset decode_reduced(std::span<const unsigned char> bytes);

void save_reduced(const ReducedDataset& ds, const std::filesystem::path& path);
ReducedDataset load_reduced(const std::filesystem::path& path);

/// The JSON header of a container, pretty-printed.
std::string container_header(const std::filesystem::path& path);

}  // namespace drupi::data
