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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stepfx/audio.hpp"

namespace stepfx {

enum class PresetGroup { kBasic, kAdvanced, kAdvancedMod };

std::string_view to_string(PresetGroup group);
PresetGroup parse_preset_group(std::string_view name);

enum class Waveform { kSine, kTriangle, kSaw, kSquare };

std::string_view to_string(Waveform shape);

enum class ModDestination { kPitch, kAmplitude, kOscMix };

std::string_view to_string(ModDestination dest);

struct OscillatorConfig {
  Waveform shape = Waveform::kSine;
  double detune_cents = 0.0;
  double level = 1.0;
};

/// Sine LFO routing. Depth units: semitones for pitch, fraction of full
/// scale for amplitude and oscillator mix.
struct LfoRouting {
  double rate_hz = 1.0;
  double depth = 0.0;
  ModDestination destination = ModDestination::kAmplitude;
};

struct PresetDescriptor {
  std::string id;
  PresetGroup group = PresetGroup::kBasic;
  std::vector<OscillatorConfig> oscillators;
  std::optional<LfoRouting> modulation;
};

struct NoteEvent {
  int midi_note = 60;
  int velocity = 127;
  double duration_s = 1.0;
};

/// 440 * 2^((note - 69) / 12). Throws ValidationError outside 0..127.
double midi_to_freq(int note);

/// The twelve surrogate presets, four per group, in a fixed order.
const std::vector<PresetDescriptor>& list_presets();
std::vector<PresetDescriptor> list_presets(PresetGroup group);
const PresetDescriptor& find_preset(std::string_view id);

/// Throws ValidationError if the group invariants do not hold.
void validate_preset(const PresetDescriptor& preset);

/// Renders one note. The seed sets oscillator and LFO start phases; equal
/// arguments give bit-identical buffers. Output carries 5 ms linear fades
/// and is peak-normalized to 0.9.
AudioBuffer render_preset(const PresetDescriptor& preset,
                          const NoteEvent& note = {}, std::uint64_t seed = 0);

}  // namespace stepfx
