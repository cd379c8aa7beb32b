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

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <string_view>

namespace stepfx {

inline constexpr int kSampleRate = 44100;
inline constexpr Eigen::Index kClipLength = kSampleRate;  // one second

/// Mono clip at a fixed sample rate.
struct AudioBuffer {
  Eigen::ArrayXf samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(Eigen::ArrayXf s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  Eigen::Index size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.size() == 0; }

  float peak() const { return empty() ? 0.0f : samples.abs().maxCoeff(); }
  double rms() const;
  bool all_finite() const { return samples.allFinite(); }

  /// Bitwise equality (rates and every sample).
  friend bool operator==(const AudioBuffer& a, const AudioBuffer& b);
};

enum class WavEncoding { kFloat32, kPcm16 };

/// RIFF/WAVE mono encoder. Float32 uses format tag 3 (IEEE float).
std::string encode_wav(const AudioBuffer& audio,
                       WavEncoding encoding = WavEncoding::kFloat32);
/// Accepts mono (or averages multi-channel) PCM16 / PCM24 / float32 data.
AudioBuffer decode_wav(std::string_view bytes);

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavEncoding encoding = WavEncoding::kFloat32);
AudioBuffer read_wav(const std::filesystem::path& path);

/// Residual level of `processed` against `reference` in dB relative to the
/// reference RMS: 20*log10(rms(processed - reference) / rms(reference)).
double residual_db(const AudioBuffer& reference, const AudioBuffer& processed);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace stepfx
