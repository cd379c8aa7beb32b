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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "stepfx/engine.hpp"

namespace stepfx {

/// 8-bit RGB raster, row-major, top row first.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});
  std::array<std::uint8_t, 3> pixel(int x, int y) const;
  void set(int x, int y, std::array<std::uint8_t, 3> c);
};

/// Viridis approximation for t in [0, 1] (clamped).
std::array<std::uint8_t, 3> viridis(double t);

/// Mel dB (bands x frames) to an image: low bands at the bottom, -80 dB
/// maps to the lowest color, 0 dB to the highest. Each cell becomes a
/// `scale` x `scale` block.
Image spectrogram_image(const Eigen::MatrixXf& mel_db, int scale = 2);

/// 5x7 bitmap text, upper-cased; unknown glyphs draw as '?'.
void draw_text(Image& img, int x, int y, std::string_view text,
               std::array<std::uint8_t, 3> color, int scale = 1);

/// Spectrogram under a two-line caption.
Image annotated_panel(const Eigen::MatrixXf& mel_db, std::string_view title,
                      std::string_view subtitle);

/// Left-to-right strip with a fixed gap.
Image hstack(const std::vector<Image>& panels, int gap = 4);

/// Deterministic PNG bytes (no timestamps or text chunks).
std::string encode_png(const Image& img);
void write_png(const std::filesystem::path& path, const Image& img);

/// Writes panel_00_input.png, panel_<k>_step<k>.png per step,
/// panel_<n>_target.png and strip.png. Returns the panel paths in order,
/// the strip last.
std::vector<std::filesystem::path> render_progression(
    const Eigen::MatrixXf& input_mel_db, const std::vector<Eigen::MatrixXf>& step_mel_db,
    const Eigen::MatrixXf& target_mel_db, const std::vector<StepRecord>& records,
    const std::filesystem::path& out_dir);

std::vector<std::filesystem::path> render_progression(const SessionState& state,
                                                      const std::filesystem::path& out_dir);

}  // namespace stepfx
