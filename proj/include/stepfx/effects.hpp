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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepfx/audio.hpp"

namespace stepfx {

/// The five rack effects. Declaration order is the canonical rack order.
enum class EffectId : int {
  kCompressor = 0,
  kDistortion = 1,
  kEq = 2,
  kPhaser = 3,
  kReverb = 4,
};

inline constexpr int kNumEffects = 5;
inline constexpr std::array<EffectId, kNumEffects> kAllEffects{
    EffectId::kCompressor, EffectId::kDistortion, EffectId::kEq,
    EffectId::kPhaser, EffectId::kReverb};

constexpr int rack_index(EffectId e) noexcept { return static_cast<int>(e); }
std::string_view to_string(EffectId e);
EffectId parse_effect(std::string_view name);

enum class ParamKind { kContinuous, kCategorical, kBinary };
std::string_view to_string(ParamKind kind);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double length() const noexcept { return hi - lo; }
};

/// One sampled parameter. Continuous values live in the union of `ranges`
/// (normalized units); categorical values are class indices.
struct ParameterSpec {
  std::string name;
  ParamKind kind = ParamKind::kContinuous;
  std::vector<Interval> ranges;
  int classes = 0;
  std::vector<std::string> class_tokens;
  std::string physical_unit;
  std::string physical_map;

  double lo() const { return ranges.front().lo; }
  double hi() const { return ranges.back().hi; }
  bool contains(double value) const;
};

const std::vector<ParameterSpec>& effect_schema(EffectId effect);

/// Distortion mode tokens, indexed by class.
const std::array<std::string_view, 12>& distortion_modes();

/// Complete set of normalized values for one effect, stored in schema
/// order. Always holds exactly one value per schema entry.
class ParameterVector {
 public:
  /// Every value at the low end of its first range.
  explicit ParameterVector(EffectId effect);
  ParameterVector(EffectId effect, std::vector<double> values);

  EffectId effect() const noexcept { return effect_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  double get(std::string_view name) const;
  void set(std::string_view name, double value);

  std::map<std::string, double> to_map() const;
  /// Requires exactly the schema's names; categorical entries may be given
  /// as class index.
  static ParameterVector from_map(EffectId effect,
                                  const std::map<std::string, double>& values);

  friend bool operator==(const ParameterVector&,
                         const ParameterVector&) = default;

 private:
  std::size_t slot(std::string_view name) const;

  EffectId effect_;
  std::vector<double> values_;
};

/// Throws ValidationError naming the first out-of-range parameter.
void validate(const ParameterVector& params);

/// Uniform over each range; union ranges pick a piece with probability
/// proportional to its length.
ParameterVector sample_parameters(EffectId effect, std::uint64_t seed);

/// Normalized <-> physical units (Hz, dB, ratio, ...), see docs/effects.md.
std::vector<double> denormalize_params(const ParameterVector& params);
ParameterVector normalize_params(EffectId effect,
                                 std::span<const double> physical);
double to_physical(const ParameterSpec& spec, double normalized);
double from_physical(const ParameterSpec& spec, double physical);

/// Parameter setting whose output matches the input (residual below -60 dB).
/// The EQ pass-through gain (0.5) sits in the gap of the sampled gain range,
/// so applying it needs EffectOptions::allow_range_gaps. Reverb has no
/// neutral setting at all (mix floor 0.3); use EffectOptions::bypass.
ParameterVector neutral_parameters(EffectId effect);

struct EffectOptions {
  /// Internal test hook: skip processing entirely (reverb neutrality).
  bool bypass = false;
  /// Validate continuous values against the hull of their ranges instead of
  /// the ranges themselves (EQ neutrality).
  bool allow_range_gaps = false;
};

/// Pure function of (audio, params). Output has the input length.
AudioBuffer apply_effect(const AudioBuffer& audio, const ParameterVector& params,
                         const EffectOptions& options = {});
AudioBuffer apply_effect(const AudioBuffer& audio, EffectId effect,
                         const ParameterVector& params);

/// Ordered effect applications, at most one per effect.
using EffectChain = std::vector<ParameterVector>;

void validate(const EffectChain& chain);
bool contains(const EffectChain& chain, EffectId effect);
/// Left fold of apply_effect in stored order; empty chain returns the input.
AudioBuffer apply_chain(const AudioBuffer& audio, const EffectChain& chain);
/// Stable sort into rack order.
EffectChain to_rack_order(EffectChain chain);

}  // namespace stepfx
