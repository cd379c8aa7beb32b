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

#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "stepfx/error.hpp"
#include "stepfx/audio.hpp"
#include "stepfx/render.hpp"

using namespace stepfx;
namespace fs = std::filesystem;

namespace {

std::uint32_t be32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(s[at + i]);
  return v;
}

}  // namespace

TEST_CASE("silence renders at the floor color") {
  const Eigen::MatrixXf quiet = Eigen::MatrixXf::Constant(8, 5, -80.0f);
  const Image img = spectrogram_image(quiet, 3);
  CHECK(img.width == 15);
  CHECK(img.height == 24);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) REQUIRE(img.pixel(x, y) == viridis(0.0));
  }
  CHECK(viridis(0.0) != viridis(1.0));
  CHECK(viridis(-3.0) == viridis(0.0));
}

TEST_CASE("low bands are drawn at the bottom") {
  Eigen::MatrixXf m = Eigen::MatrixXf::Constant(4, 2, -80.0f);
  m.row(0).setZero();
  const Image img = spectrogram_image(m, 1);
  CHECK(img.pixel(0, 3) == viridis(1.0));
  CHECK(img.pixel(1, 0) == viridis(0.0));
}

TEST_CASE("png header carries the image size") {
  const Image img(7, 3, {10, 20, 30});
  const std::string png = encode_png(img);
  CHECK(png.substr(1, 3) == "PNG");
  CHECK(be32(png, 16) == 7);
  CHECK(be32(png, 20) == 3);
  CHECK(png.find("tEXt") == std::string::npos);
  CHECK(png.find("tIME") == std::string::npos);
  Image broken = img;
  broken.rgb.pop_back();
  CHECK_THROWS_AS(encode_png(broken), ValidationError);
}

TEST_CASE("progression: one panel per state plus the strip") {
  const AudioBuffer dry = fixtures::clip("saw", 2);
  SessionState s(dry, fixtures::chained_target(dry), fixtures::tiny_registry());
  s.set_epsilon(-1e9);
  run_full(s, 3);
  REQUIRE(s.history().size() == 3);

  const fs::path a = fs::temp_directory_path() / "stepfx_test_render_a";
  const fs::path b = fs::temp_directory_path() / "stepfx_test_render_b";
  for (const auto& d : {a, b}) {
    fs::remove_all(d);
    fs::create_directories(d);
  }
  const auto pa = render_progression(s, a);
  const auto pb = render_progression(s, b);
  REQUIRE(pa.size() == 6);
  CHECK(pa.front().filename() == "panel_00_input.png");
  CHECK(pa[1].filename() == "panel_01_step1.png");
  CHECK(pa[4].filename() == "panel_04_target.png");
  CHECK(pa.back().filename() == "strip.png");
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(read_file(pa[i]) == read_file(pb[i]));
  }
  const std::string panel = read_file(pa[0]);
  const std::string strip = read_file(pa.back());
  CHECK(be32(strip, 16) == 5 * be32(panel, 16) + 4 * 4);
  CHECK(be32(strip, 20) == be32(panel, 20));

  CHECK_THROWS_AS(render_progression(s.state_mel_db(0), {}, s.target_mel_db(), {}, a), ValidationError);
  fs::remove_all(a);
  fs::remove_all(b);
}
