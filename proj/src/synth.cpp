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

#include "stepfx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stepfx/error.hpp"
#include "stepfx/random.hpp"

namespace stepfx {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFadeSeconds = 0.005;
constexpr double kPeakTarget = 0.9;

// Two-sample polynomial band-limited step residual.
double poly_blep(double t, double dt) {
  if (t < dt) {
    t /= dt;
    return t + t - t * t - 1.0;
  }
  if (t > 1.0 - dt) {
    t = (t - 1.0) / dt;
    return t * t + t + t + 1.0;
  }
  return 0.0;
}

double oscillator_sample(Waveform shape, double phase, double dt) {
  switch (shape) {
    case Waveform::kSine:
      return std::sin(kTwoPi * phase);
    case Waveform::kTriangle:
      // Harmonics fall at 12 dB/octave, so the naive shape aliases below
      // -70 dB at the fixed render pitch.
      return 1.0 - 4.0 * std::abs(phase - 0.5);
    case Waveform::kSaw:
      return 2.0 * phase - 1.0 - poly_blep(phase, dt);
    case Waveform::kSquare: {
      double v = phase < 0.5 ? 1.0 : -1.0;
      v += poly_blep(phase, dt);
      v -= poly_blep(std::fmod(phase + 0.5, 1.0), dt);
      return v;
    }
  }
  return 0.0;
}

PresetDescriptor make(std::string id, PresetGroup group,
                      std::vector<OscillatorConfig> oscs,
                      std::optional<LfoRouting> lfo = std::nullopt) {
  return PresetDescriptor{std::move(id), group, std::move(oscs), lfo};
}

std::vector<PresetDescriptor> build_presets() {
  using W = Waveform;
  using D = ModDestination;
  const auto G = PresetGroup::kBasic;
  const auto A = PresetGroup::kAdvanced;
  const auto M = PresetGroup::kAdvancedMod;

  // Dual-oscillator recipes shared by the advanced and modulating groups.
  const std::vector<OscillatorConfig> fifths{{W::kSaw, 0.0, 1.0},
                                             {W::kSaw, 700.0, 0.8}};
  const std::vector<OscillatorConfig> mtron{{W::kSaw, -8.0, 1.0},
                                            {W::kTriangle, 1200.0, 0.5}};
  const std::vector<OscillatorConfig> dirt{{W::kSquare, 0.0, 1.0},
                                           {W::kSaw, -1200.0, 0.7}};
  const std::vector<OscillatorConfig> bells{{W::kSine, 0.0, 1.0},
                                            {W::kTriangle, 1900.0, 0.5}};

  return {
      make("sine", G, {{W::kSine, 0.0, 1.0}}),
      make("triangle", G, {{W::kTriangle, 0.0, 1.0}}),
      make("saw", G, {{W::kSaw, 0.0, 1.0}}),
      make("square", G, {{W::kSquare, 0.0, 1.0}}),
      make("power_fifths", A, fifths),
      make("mtron_saw", A, mtron),
      make("dirt_stab", A, dirt),
      make("vintage_bells", A, bells),
      make("power_fifths_vibrato", M, fifths, LfoRouting{5.5, 0.5, D::kPitch}),
      make("mtron_saw_tremolo", M, mtron, LfoRouting{4.0, 0.7, D::kAmplitude}),
      make("dirt_stab_wobble", M, dirt, LfoRouting{2.0, 0.9, D::kOscMix}),
      make("vintage_bells_drift", M, bells, LfoRouting{0.5, 2.0, D::kPitch}),
  };
}

}  // namespace

std::string_view to_string(PresetGroup group) {
  switch (group) {
    case PresetGroup::kBasic:
      return "basic";
    case PresetGroup::kAdvanced:
      return "advanced";
    case PresetGroup::kAdvancedMod:
      return "advanced_mod";
  }
  return "?";
}

PresetGroup parse_preset_group(std::string_view name) {
  if (name == "basic") return PresetGroup::kBasic;
  if (name == "advanced") return PresetGroup::kAdvanced;
  if (name == "advanced_mod") return PresetGroup::kAdvancedMod;
  throw ValidationError("group", "unknown preset group '" + std::string(name) +
                                     "' (basic, advanced, advanced_mod)");
}

std::string_view to_string(Waveform shape) {
  switch (shape) {
    case Waveform::kSine:
      return "sine";
    case Waveform::kTriangle:
      return "triangle";
    case Waveform::kSaw:
      return "saw";
    case Waveform::kSquare:
      return "square";
  }
  return "?";
}

std::string_view to_string(ModDestination dest) {
  switch (dest) {
    case ModDestination::kPitch:
      return "pitch";
    case ModDestination::kAmplitude:
      return "amplitude";
    case ModDestination::kOscMix:
      return "osc-mix";
  }
  return "?";
}

double midi_to_freq(int note) {
  if (note < 0 || note > 127) {
    throw ValidationError("midi_note", "must be in 0..127, got " +
                                           std::to_string(note));
  }
  return 440.0 * std::exp2((note - 69) / 12.0);
}

const std::vector<PresetDescriptor>& list_presets() {
  static const std::vector<PresetDescriptor> presets = build_presets();
  return presets;
}

std::vector<PresetDescriptor> list_presets(PresetGroup group) {
  std::vector<PresetDescriptor> out;
  for (const auto& p : list_presets()) {
    if (p.group == group) out.push_back(p);
  }
  return out;
}

const PresetDescriptor& find_preset(std::string_view id) {
  for (const auto& p : list_presets()) {
    if (p.id == id) return p;
  }
  throw ValidationError("preset", "unknown preset '" + std::string(id) + "'");
}

void validate_preset(const PresetDescriptor& preset) {
  const auto n = preset.oscillators.size();
  if (n < 1 || n > 2) {
    throw ValidationError("oscillators", "a preset has 1 or 2 oscillators");
  }
  if (preset.group == PresetGroup::kBasic &&
      (n != 1 || preset.modulation.has_value())) {
    throw ValidationError("group",
                          "basic presets have one oscillator and no LFO");
  }
  if (preset.group == PresetGroup::kAdvancedMod &&
      !preset.modulation.has_value()) {
    throw ValidationError("modulation",
                          "advanced_mod presets need an LFO routing");
  }
  if (preset.modulation && preset.modulation->rate_hz <= 0.0) {
    throw ValidationError("modulation", "LFO rate must be positive");
  }
}

AudioBuffer render_preset(const PresetDescriptor& preset, const NoteEvent& note,
                          std::uint64_t seed) {
  validate_preset(preset);
  const double f0 = midi_to_freq(note.midi_note);
  if (note.velocity < 1 || note.velocity > 127) {
    throw ValidationError("velocity", "must be in 1..127");
  }
  const double exact = note.duration_s * kSampleRate;
  const double rounded = std::round(exact);
  if (note.duration_s <= 0.0 || std::abs(exact - rounded) > 1e-6) {
    throw ValidationError("duration_s",
                          "duration * 44100 must be a positive integer");
  }
  const auto length = static_cast<Eigen::Index>(rounded);

  Rng rng(seed);
  std::vector<double> phases;
  for (std::size_t i = 0; i < preset.oscillators.size(); ++i) {
    phases.push_back(rng.uniform());
  }
  const double lfo_phase = rng.uniform();
  const double gain = note.velocity / 127.0;

  Eigen::ArrayXd out(length);
  for (Eigen::Index n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / kSampleRate;
    double pitch_ratio = 1.0;
    double amp = 1.0;
    double mix_lfo = 0.0;  // -1..1, shifts level between the two oscillators
    double mix_depth = 0.0;
    if (preset.modulation) {
      const auto& m = *preset.modulation;
      const double lfo = std::sin(kTwoPi * (m.rate_hz * t + lfo_phase));
      switch (m.destination) {
        case ModDestination::kPitch:
          pitch_ratio = std::exp2(m.depth * lfo / 12.0);
          break;
        case ModDestination::kAmplitude:
          amp = 1.0 - m.depth * 0.5 * (1.0 - lfo);
          break;
        case ModDestination::kOscMix:
          mix_lfo = lfo;
          mix_depth = m.depth;
          break;
      }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < preset.oscillators.size(); ++i) {
      const auto& osc = preset.oscillators[i];
      const double freq =
          f0 * std::exp2(osc.detune_cents / 1200.0) * pitch_ratio;
      const double dt = freq / kSampleRate;
      double level = osc.level;
      if (preset.oscillators.size() == 2) {
        level *= i == 0 ? 1.0 - 0.5 * mix_depth * (1.0 + mix_lfo)
                        : 1.0 - 0.5 * mix_depth * (1.0 - mix_lfo);
      }
      acc += level * oscillator_sample(osc.shape, phases[i], dt);
      phases[i] += dt;
      phases[i] -= std::floor(phases[i]);
    }
    out[n] = gain * amp * acc;
  }

  const auto fade = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(kFadeSeconds * kSampleRate), length / 2);
  for (Eigen::Index i = 0; i < fade; ++i) {
    const double w = static_cast<double>(i) / fade;
    out[i] *= w;
    out[length - 1 - i] *= w;
  }

  const double peak = out.abs().maxCoeff();
  if (peak > 0.0) out *= kPeakTarget / peak;
  return AudioBuffer(out.cast<float>());
}

}  // namespace stepfx
