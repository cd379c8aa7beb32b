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

#include "stepfx/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "stepfx/error.hpp"

namespace stepfx {
namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV and container I/O assume a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) {
    throw ValidationError("wav", "truncated file");
  }
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

double AudioBuffer::rms() const {
  if (empty()) return 0.0;
  return std::sqrt(samples.cast<double>().square().mean());
}

bool operator==(const AudioBuffer& a, const AudioBuffer& b) {
  if (a.sample_rate != b.sample_rate || a.size() != b.size()) return false;
  return std::memcmp(a.samples.data(), b.samples.data(),
                     sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::string encode_wav(const AudioBuffer& audio, WavEncoding encoding) {
  const bool is_float = encoding == WavEncoding::kFloat32;
  const std::uint16_t bits = is_float ? 32 : 16;
  const std::uint16_t block_align = bits / 8;
  const auto data_bytes =
      static_cast<std::uint32_t>(audio.size() * block_align);

  std::string out;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put<std::uint32_t>(out, 36 + data_bytes);
  out.append("WAVE");
  out.append("fmt ");
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, is_float ? 3 : 1);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate));
  put<std::uint32_t>(out,
                     static_cast<std::uint32_t>(audio.sample_rate) *
                         block_align);
  put<std::uint16_t>(out, block_align);
  put<std::uint16_t>(out, bits);
  out.append("data");
  put<std::uint32_t>(out, data_bytes);
  for (Eigen::Index i = 0; i < audio.size(); ++i) {
    const float s = audio.samples[i];
    if (is_float) {
      put<float>(out, s);
    } else {
      // Same 1/32768 scale as the decoder.
      const long q = std::lround(static_cast<double>(s) * 32768.0);
      put<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
    }
  }
  return out;
}

AudioBuffer decode_wav(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" ||
      bytes.substr(8, 4) != "WAVE") {
    throw ValidationError("wav", "not a RIFF/WAVE stream");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id = bytes.substr(pos, 4);
    const auto size = get<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      format = get<std::uint16_t>(bytes, body);
      channels = get<std::uint16_t>(bytes, body + 2);
      rate = get<std::uint32_t>(bytes, body + 4);
      bits = get<std::uint16_t>(bytes, body + 14);
      if (format == 0xFFFE && size >= 26) {
        // WAVE_FORMAT_EXTENSIBLE: the subformat GUID starts with the tag.
        format = get<std::uint16_t>(bytes, body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt || channels == 0) {
        throw ValidationError("wav", "data chunk before fmt chunk");
      }
      const std::size_t len =
          std::min<std::size_t>(size, bytes.size() - body);
      const std::size_t width = bits / 8;
      if (width == 0) throw ValidationError("wav", "zero sample width");
      const std::size_t frames = len / (width * channels);
      Eigen::ArrayXf out(static_cast<Eigen::Index>(frames));
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t at = body + (f * channels + c) * width;
          double v = 0.0;
          if (format == 3 && bits == 32) {
            v = get<float>(bytes, at);
          } else if (format == 1 && bits == 16) {
            v = get<std::int16_t>(bytes, at) / 32768.0;
          } else if (format == 1 && bits == 24) {
            const auto* p =
                reinterpret_cast<const unsigned char*>(bytes.data() + at);
            std::int32_t i = p[0] | (p[1] << 8) | (p[2] << 16);
            if (i & 0x800000) i |= ~0xFFFFFF;
            v = i / 8388608.0;
          } else {
            throw ValidationError("wav", "unsupported sample format");
          }
          // Start from the first channel so mono -0.0 survives.
          acc = c == 0 ? v : acc + v;
        }
        out[static_cast<Eigen::Index>(f)] =
            static_cast<float>(acc / channels);
      }
      return AudioBuffer(std::move(out), static_cast<int>(rate));
    }
    pos = body + size + (size & 1u);
  }
  throw ValidationError("wav", "missing data chunk");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("short write to " + path.string());
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavEncoding encoding) {
  write_file(path, encode_wav(audio, encoding));
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  return decode_wav(read_file(path));
}

double residual_db(const AudioBuffer& reference, const AudioBuffer& processed) {
  if (reference.size() != processed.size()) {
    throw ShapeError("residual_db: length mismatch");
  }
  const double ref = reference.rms();
  const double diff = std::sqrt(
      (processed.samples.cast<double>() - reference.samples.cast<double>())
          .square()
          .mean());
  if (diff == 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(diff / std::max(ref, 1e-30));
}

}  // namespace stepfx
