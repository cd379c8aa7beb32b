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

#include "stepfx/render.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

#include "stepfx/error.hpp"

namespace stepfx {
namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kBackground{24, 24, 28};
constexpr Rgb kTextColor{235, 235, 235};
constexpr int kCaptionHeight = 24;

// Viridis sampled at t = 0, 1/8, ..., 1.
constexpr std::array<std::array<double, 3>, 9> kViridis{{
    {68, 1, 84},
    {71, 44, 122},
    {59, 81, 139},
    {44, 113, 142},
    {33, 144, 141},
    {39, 173, 129},
    {92, 200, 99},
    {170, 220, 50},
    {253, 231, 37},
}};

// Row-major 5x7 glyphs, bit 4 is the leftmost column.
const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 7>> g{
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'/', {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'?', {0x0E, 0x11, 0x01, 0x02, 0x04, 0, 0x04}},
  };
  return g;
}

struct PngWriteState {
  std::string out;
};

void png_append(png_structp png, png_bytep data, png_size_t len) {
  auto* s = static_cast<PngWriteState*>(png_get_io_ptr(png));
  s->out.append(reinterpret_cast<const char*>(data), len);
}

void png_flush_noop(png_structp) {}

std::string caption_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw ValidationError("image", "dimensions must be positive");
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

Rgb Image::pixel(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb.at(i), rgb.at(i + 1), rgb.at(i + 2)};
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

Rgb viridis(double t) {
  if (!(t > 0.0)) t = 0.0;  // also maps NaN to the floor color
  t = std::min(t, 1.0);
  const double pos = t * static_cast<double>(kViridis.size() - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(pos), kViridis.size() - 2);
  const double f = pos - static_cast<double>(i);
  Rgb c{};
  for (int k = 0; k < 3; ++k) {
    const double v = kViridis[i][k] + f * (kViridis[i + 1][k] - kViridis[i][k]);
    c[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(std::lround(v));
  }
  return c;
}

Image spectrogram_image(const Eigen::MatrixXf& mel_db, int scale) {
  if (mel_db.size() == 0) throw ValidationError("spectrogram", "empty spectrogram");
  if (scale < 1) throw ValidationError("scale", "must be at least 1");
  const int bands = static_cast<int>(mel_db.rows()), frames = static_cast<int>(mel_db.cols());
  Image img(frames * scale, bands * scale);
  for (int b = 0; b < bands; ++b) {
    for (int f = 0; f < frames; ++f) {
      const double t = (static_cast<double>(mel_db(b, f)) - kDbFloor) / -kDbFloor;
      const Rgb c = viridis(t);
      const int y0 = (bands - 1 - b) * scale, x0 = f * scale;
      for (int dy = 0; dy < scale; ++dy) {
        for (int dx = 0; dx < scale; ++dx) img.set(x0 + dx, y0 + dy, c);
      }
    }
  }
  return img;
}

void draw_text(Image& img, int x, int y, std::string_view text, Rgb color, int scale) {
  const auto& g = glyphs();
  int cx = x;
  for (const char raw : text) {
    const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    auto it = g.find(ch);
    if (it == g.end()) it = g.find('?');
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (!(it->second[static_cast<std::size_t>(row)] & (0x10 >> col))) continue;
        for (int dy = 0; dy < scale; ++dy) {
          for (int dx = 0; dx < scale; ++dx) {
            img.set(cx + col * scale + dx, y + row * scale + dy, color);
          }
        }
      }
    }
    cx += 6 * scale;
  }
}

Image annotated_panel(const Eigen::MatrixXf& mel_db, std::string_view title,
                      std::string_view subtitle) {
  const Image spec = spectrogram_image(mel_db);
  Image img(spec.width, spec.height + kCaptionHeight, kBackground);
  draw_text(img, 3, 3, title, kTextColor);
  draw_text(img, 3, 13, subtitle, kTextColor);
  for (int y = 0; y < spec.height; ++y) {
    std::copy_n(spec.rgb.begin() + static_cast<std::ptrdiff_t>(y) * spec.width * 3,
                spec.width * 3,
                img.rgb.begin() + static_cast<std::ptrdiff_t>(y + kCaptionHeight) * img.width * 3);
  }
  return img;
}

Image hstack(const std::vector<Image>& panels, int gap) {
  if (panels.empty()) throw ValidationError("panels", "nothing to stack");
  int w = gap * static_cast<int>(panels.size() - 1), h = 0;
  for (const auto& p : panels) {
    w += p.width;
    h = std::max(h, p.height);
  }
  Image out(w, h, kBackground);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.height; ++y) {
      std::copy_n(p.rgb.begin() + static_cast<std::ptrdiff_t>(y) * p.width * 3, p.width * 3,
                  out.rgb.begin() + (static_cast<std::ptrdiff_t>(y) * w + x0) * 3);
    }
    x0 += p.width + gap;
  }
  return out;
}

std::string encode_png(const Image& img) {
  if (img.width < 1 || img.height < 1 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw ValidationError("image", "inconsistent image buffer");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  PngWriteState state;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &state, png_append, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() +
                                             static_cast<std::size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(state.out);
}

void write_png(const std::filesystem::path& path, const Image& img) {
  write_file(path, encode_png(img));
}

std::vector<std::filesystem::path> render_progression(
    const Eigen::MatrixXf& input_mel_db, const std::vector<Eigen::MatrixXf>& step_mel_db,
    const Eigen::MatrixXf& target_mel_db, const std::vector<StepRecord>& records,
    const std::filesystem::path& out_dir) {
  if (records.empty()) throw ValidationError("records", "no steps to render");
  if (step_mel_db.size() != records.size()) {
    throw ValidationError("records", "one spectrogram per step is required");
  }
  std::vector<Image> panels;
  const double start = records.front().before.mae;
  panels.push_back(annotated_panel(input_mel_db, "input", "mae " + caption_value(start)));
  for (std::size_t k = 0; k < records.size(); ++k) {
    const StepRecord& r = records[k];
    panels.push_back(annotated_panel(
        step_mel_db[k], "step " + std::to_string(r.index) + " " + std::string(to_string(r.effect)),
        "mae " + caption_value(r.after.mae) + " d" + caption_value(r.delta.mae)));
  }
  panels.push_back(annotated_panel(target_mel_db, "target", ""));

  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    char name[64];
    if (i == 0) {
      std::snprintf(name, sizeof name, "panel_%02zu_input.png", i);
    } else if (i + 1 == panels.size()) {
      std::snprintf(name, sizeof name, "panel_%02zu_target.png", i);
    } else {
      std::snprintf(name, sizeof name, "panel_%02zu_step%zu.png", i, i);
    }
    paths.push_back(out_dir / name);
    write_png(paths.back(), panels[i]);
  }
  paths.push_back(out_dir / "strip.png");
  write_png(paths.back(), hstack(panels));
  return paths;
}

std::vector<std::filesystem::path> render_progression(const SessionState& state,
                                                      const std::filesystem::path& out_dir) {
  std::vector<Eigen::MatrixXf> steps;
  for (std::size_t k = 1; k < state.state_count(); ++k) steps.push_back(state.state_mel_db(k));
  return render_progression(state.state_mel_db(0), steps, state.target_mel_db(), state.history(),
                            out_dir);
}

}  // namespace stepfx
