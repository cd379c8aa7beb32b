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
#include "stepfx/container.hpp"
#include "stepfx/error.hpp"
#include "stepfx/models.hpp"
#include "stepfx/random.hpp"

using namespace stepfx;
namespace fs = std::filesystem;

namespace {

CnnConfig tiny_cnn() {
  CnnConfig c;
  c.channels = {2, 4};
  c.dense1 = 8;
  c.dense2 = 8;
  return c;
}

RnnConfig tiny_rnn() {
  RnnConfig c;
  c.channels = {2, 2, 4};
  c.embedding = 6;
  c.hidden = 5;
  c.dense = 7;
  return c;
}

Eigen::MatrixXf random_unit(Rng& rng) {
  Eigen::MatrixXf m(kInputBands, kInputFrames);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = static_cast<float>(rng.uniform());
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stepfx_test_models_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_tensor(const nn::Tensor<float>& a, const nn::Tensor<float>& b) {
  return a.shape() == b.shape() && a.vec() == b.vec();
}

}  // namespace

TEST_CASE("container round trip and corruption") {
  Container c;
  c.manifest = {{"kind", "test"}, {"n", 3}};
  nn::Tensor<float> t({2, 3});
  for (int i = 0; i < 6; ++i) t[i] = 0.5f * i - 1.0f;
  c.tensors.emplace_back("w", t);
  c.tensors.emplace_back("b", nn::Tensor<float>({4}, 2.5f));
  const std::string bytes = encode_container(c);
  CHECK(bytes.substr(0, 8) == "STEPFXNN");
  const Container d = decode_container(bytes);
  CHECK(d.manifest.at("kind") == "test");
  CHECK(same_tensor(d.tensor("w"), t));
  CHECK(encode_container(d) == bytes);
  CHECK_THROWS_AS(d.tensor("missing"), ArtifactError);

  // Every truncation fails.
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    CHECK_THROWS_AS(decode_container(std::string_view(bytes).substr(0, n)), ArtifactError);
  }
  // Every single-byte flip fails (checksum or structure).
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x41);
    CHECK_THROWS_AS(decode_container(bad), ArtifactError);
  }
  // Version mismatch with a valid checksum.
  std::string v2 = bytes.substr(0, bytes.size() - 4);
  v2[8] = 2;
  const std::uint32_t crc = crc32_of(v2);
  for (int k = 0; k < 4; ++k) v2.push_back(static_cast<char>((crc >> (8 * k)) & 0xff));
  CHECK_THROWS_AS(decode_container(v2), ArtifactError);
}

TEST_CASE("container decoder survives random input") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    std::string junk(rng.index(200), '\0');
    for (auto& ch : junk) ch = static_cast<char>(rng.index(256));
    if (trial % 2 == 0 && junk.size() >= 8) junk.replace(0, 8, "STEPFXNN");
    CHECK_THROWS_AS(decode_container(junk), ArtifactError);
  }
  CHECK(crc32_of("123456789") == 0xCBF43926u);
}

TEST_CASE("head layouts") {
  const auto& eq = head_layout(EffectId::kEq);
  int binary = 0, continuous = 0, categorical = 0;
  for (const auto& h : eq) {
    binary += h.kind == nn::HeadKind::kBinary;
    continuous += h.kind == nn::HeadKind::kContinuous;
  }
  CHECK(binary == 1);
  CHECK(continuous == 3);
  for (const auto& h : head_layout(EffectId::kDistortion)) {
    if (h.kind == nn::HeadKind::kCategorical) {
      ++categorical;
      CHECK(h.width == 12);
    }
  }
  CHECK(categorical == 1);
  CHECK(nn::head_width(head_layout(EffectId::kDistortion)) == 13);
  CHECK(nn::head_width(head_layout(EffectId::kCompressor)) == 3);
}

TEST_CASE("label encoding round-trips and decoding stays in range") {
  for (const EffectId e : kAllEffects) {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const ParameterVector p = sample_parameters(e, s);
      const auto enc = encode_labels(p);
      CHECK(static_cast<int>(enc.size()) == nn::head_width(head_layout(e)));
      const ParameterVector back = decode_heads(e, enc);
      for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(back[k] - p[k]) < 1e-6);
    }
  }
  // Arbitrary head outputs decode to valid vectors, EQ gain outside the gap.
  Rng rng(8);
  for (const EffectId e : kAllEffects) {
    const int w = nn::head_width(head_layout(e));
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<float> out(static_cast<std::size_t>(w));
      for (auto& v : out) v = static_cast<float>(rng.uniform());
      if (trial == 0) out.assign(out.size(), std::numeric_limits<float>::quiet_NaN());
      const ParameterVector p = decode_heads(e, out);
      CHECK_NOTHROW(validate(p));
      if (e == EffectId::kEq) {
        const double g = p.get("gain");
        CHECK_FALSE((g > 0.4 && g < 0.6));
      }
    }
  }
}

TEST_CASE("effect model save/load is bit-identical") {
  const fs::path dir = scratch("cnn");
  Rng rng(1);
  const auto t = random_unit(rng), c = random_unit(rng);
  for (const EffectId e : kAllEffects) {
    EffectModel m(e, tiny_cnn(), 42 + rack_index(e));
    m.meta.seed = 42;
    m.meta.data_fingerprint = "abc";
    const fs::path p = effect_model_path(dir, e);
    save_model(p, m);
    const EffectModel back = load_effect_model(p, e);
    CHECK(back.meta.data_fingerprint == "abc");
    CHECK(back.predict(t, c) == m.predict(t, c));
    const auto batch = stack_pair(t, c);
    CHECK(same_tensor(back.infer(batch), m.infer(batch)));
    save_model(dir / "again.stepfx", back);
    CHECK(read_file(dir / "again.stepfx") == read_file(p));
    CHECK_NOTHROW(validate(m.predict(t, c)));
  }
  CHECK_THROWS_AS(load_effect_model(effect_model_path(dir, EffectId::kEq), EffectId::kReverb),
                  ArtifactError);
  CHECK_THROWS_AS(load_effect_model(dir / "missing.stepfx"), ArtifactError);
  CHECK_THROWS_AS(load_rnn_model(effect_model_path(dir, EffectId::kEq)), ArtifactError);
  fs::remove_all(dir);
}

TEST_CASE("next-effect model save/load is bit-identical") {
  const fs::path dir = scratch("rnn");
  NextEffectModel m(tiny_rnn(), 5);
  save_model(rnn_model_path(dir), m);
  const NextEffectModel back = load_rnn_model(rnn_model_path(dir));
  Rng rng(2);
  const auto t = random_unit(rng), c0 = random_unit(rng), c1 = random_unit(rng);
  std::vector<SequenceStep> steps{{&t, &c0, {}}, {&t, &c1, {true, false, false, false, false}}};
  const auto p = m.predict(steps);
  CHECK(back.predict(steps) == p);
  double sum = 0;
  for (const double v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  save_model(dir / "again.stepfx", back);
  CHECK(read_file(dir / "again.stepfx") == read_file(rnn_model_path(dir)));
  CHECK_THROWS_AS(load_effect_model(rnn_model_path(dir)), ArtifactError);
  fs::remove_all(dir);
}

TEST_CASE("same seed gives the same initial weights") {
  EffectModel a(EffectId::kPhaser, tiny_cnn(), 9), b(EffectId::kPhaser, tiny_cnn(), 9),
      c(EffectId::kPhaser, tiny_cnn(), 10);
  Rng rng(3);
  const auto batch = stack_pair(random_unit(rng), random_unit(rng));
  CHECK(same_tensor(a.infer(batch), b.infer(batch)));
  CHECK_FALSE(same_tensor(a.infer(batch), c.infer(batch)));
}

TEST_CASE("config json") {
  const CnnConfig c = tiny_cnn();
  CHECK(CnnConfig::from_json(c.to_json()).to_json() == c.to_json());
  const RnnConfig r = tiny_rnn();
  CHECK(RnnConfig::from_json(r.to_json()).to_json() == r.to_json());
  CHECK_THROWS(CnnConfig::from_json(nlohmann::json{{"channels", {1}}}));
  CnnConfig bad = tiny_cnn();
  bad.channels = {2, 2, 2, 2, 2, 2, 2, 2};
  CHECK_THROWS_AS(EffectModel(EffectId::kEq, bad, 0), ValidationError);
}
