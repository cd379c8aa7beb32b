// Copyright 2026 The stepfx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stepfx/nn/tensor.hpp"

namespace stepfx {

/// Weight file layout (all integers little-endian):
///
///   8 bytes   magic "STEPFXNN"
///   u32       format version
///   u64       manifest length M
///   M bytes   manifest, UTF-8 JSON
///   ...       float32 payload, tensors back to back in manifest order
///   u32       CRC-32 (zlib polynomial) of every preceding byte
///
/// The manifest holds caller metadata plus a "tensors" array of
/// {name, shape, offset, count}; offset and count are in floats.
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::string_view kContainerMagic = "STEPFXNN";

struct Container {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;

  const nn::Tensor<float>& tensor(std::string_view name) const;
};

std::string encode_container(const Container& c);
/// Throws ArtifactError on bad magic, version mismatch, truncation or
/// checksum failure; nothing is returned unless the whole file verifies.
Container decode_container(std::string_view bytes);

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace stepfx
