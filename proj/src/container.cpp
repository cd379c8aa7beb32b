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

#include "stepfx/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "stepfx/audio.hpp"
#include "stepfx/error.hpp"

namespace stepfx {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw ArtifactError("model file truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos),
                static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

const nn::Tensor<float>& Container::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ArtifactError("model file has no tensor '" + std::string(name) + "'");
}

std::string encode_container(const Container& c) {
  nlohmann::json manifest = c.manifest;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"count", t.size()}});
    offset += static_cast<std::uint64_t>(t.size());
  }
  manifest["tensors"] = index;
  const std::string text = manifest.dump();

  std::string out(kContainerMagic);
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& entry : c.tensors) {
    const auto& t = entry.second;
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

Container decode_container(std::string_view bytes) {
  if (bytes.size() < kContainerMagic.size() + 16 ||
      bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    throw ArtifactError("not a stepfx model file (bad magic or truncated)");
  }
  const std::uint32_t stored_crc = [&] {
    std::size_t p = bytes.size() - 4;
    return get<std::uint32_t>(bytes, p);
  }();
  if (crc32_of(bytes.substr(0, bytes.size() - 4)) != stored_crc) {
    throw ArtifactError("model file checksum mismatch (corrupt or truncated)");
  }
  std::size_t pos = kContainerMagic.size();
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kContainerVersion) {
    throw ArtifactError("model file version " + std::to_string(version) +
                        " is not supported (expected " +
                        std::to_string(kContainerVersion) + ")");
  }
  const auto length = get<std::uint64_t>(bytes, pos);
  if (length > bytes.size() - pos - 4) throw ArtifactError("model file truncated");
  Container c;
  try {
    c.manifest = nlohmann::json::parse(bytes.substr(pos, length));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("model manifest unreadable: ") + e.what());
  }
  pos += length;
  const std::size_t payload_floats = (bytes.size() - 4 - pos) / sizeof(float);
  if ((bytes.size() - 4 - pos) % sizeof(float) != 0) {
    throw ArtifactError("model payload length is not a multiple of 4");
  }
  const char* payload = bytes.data() + pos;
  try {
    for (const auto& entry : c.manifest.at("tensors")) {
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (offset + count > payload_floats) {
        throw ArtifactError("tensor " + entry.at("name").get<std::string>() +
                            " extends past the payload");
      }
      nn::Tensor<float> t(entry.at("shape").get<nn::Shape>());
      if (static_cast<std::uint64_t>(t.size()) != count) {
        throw ArtifactError("tensor shape and count disagree");
      }
      std::memcpy(t.data(), payload + offset * sizeof(float), count * sizeof(float));
      c.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("model manifest malformed: ") + e.what());
  }
  c.manifest.erase("tensors");
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  write_file(path, encode_container(c));
}

Container load_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

}  // namespace stepfx
