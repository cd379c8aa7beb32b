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

// Small untrained models and clips for tests that exercise plumbing rather
// than learning.

#include <memory>

#include "stepfx/engine.hpp"
#include "stepfx/synth.hpp"

namespace fixtures {

inline stepfx::CnnConfig tiny_cnn() {
  stepfx::CnnConfig c;
  c.channels = {2, 4};
  c.dense1 = 8;
  c.dense2 = 8;
  return c;
}

inline stepfx::RnnConfig tiny_rnn() {
  stepfx::RnnConfig c;
  c.channels = {2, 2, 4};
  c.embedding = 6;
  c.hidden = 5;
  c.dense = 7;
  return c;
}

inline std::shared_ptr<const stepfx::ModelRegistry> tiny_registry(std::uint64_t seed = 1) {
  auto reg = std::make_shared<stepfx::ModelRegistry>();
  for (const auto e : stepfx::kAllEffects) {
    reg->set(std::make_shared<const stepfx::EffectModel>(e, tiny_cnn(),
                                                         seed + stepfx::rack_index(e)));
  }
  reg->set(std::make_shared<const stepfx::NextEffectModel>(tiny_rnn(), seed + 10));
  return reg;
}

inline stepfx::AudioBuffer clip(const char* preset, std::uint64_t seed = 0) {
  return stepfx::render_preset(stepfx::find_preset(preset), {}, seed);
}

/// Saw through a fixed two-effect chain, a target with known ground truth.
inline stepfx::AudioBuffer chained_target(const stepfx::AudioBuffer& dry) {
  using namespace stepfx;
  ParameterVector d(EffectId::kDistortion);
  d.set("mode", 3);
  d.set("drive", 0.8);
  ParameterVector r(EffectId::kReverb);
  r.set("mix", 0.6);
  r.set("low_cut", 0.2);
  r.set("high_cut", 0.7);
  return apply_chain(dry, {d, r});
}

}  // namespace fixtures
