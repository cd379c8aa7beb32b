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

#include "stepfx/effects.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dsp_filters.hpp"
#include "stepfx/error.hpp"
#include "stepfx/random.hpp"

namespace stepfx {
namespace {

constexpr double kPi = std::numbers::pi;

// Normalized -> physical maps. Each effect body below reads its parameters
// through these so the documented maps and the DSP cannot drift apart.
double comp_ratio(double a) { return 1.0 + 7.0 * a; }
double comp_threshold_db(double a) { return -12.0 - 18.0 * a; }
double drive_gain(double d) { return std::pow(10.0, 2.0 * d - 0.6); }
double eq_cutoff_hz(double c) { return 2000.0 * std::pow(9.0, (c - 0.5) / 0.45); }
double eq_q(double r) { return 0.5 * std::pow(16.0, r); }
double eq_gain_db(double g) { return 36.0 * g - 18.0; }
double phaser_span_octaves(double d) { return d * std::log2(40.0); }
double phaser_rate_hz(double f) { return 0.1 * std::pow(80.0, f); }
double phaser_feedback(double fb) { return 0.85 * fb; }
double reverb_low_cut_hz(double l) { return 50.0 * std::pow(20.0, l); }
double reverb_high_cut_hz(double h) { return 1000.0 * std::pow(16.0, h); }

const std::array<std::string_view, 12> kDistortionModes{
    "soft_clip", "hard_clip", "asymmetric", "foldback",
    "sine_shaper", "half_wave", "full_wave", "bitcrush",
    "downsample", "diode", "cubic", "crossover"};

ParameterSpec continuous(std::string name, std::vector<Interval> ranges,
                         std::string unit, std::string map) {
  ParameterSpec s;
  s.name = std::move(name);
  s.kind = ParamKind::kContinuous;
  s.ranges = std::move(ranges);
  s.physical_unit = std::move(unit);
  s.physical_map = std::move(map);
  return s;
}

std::vector<ParameterSpec> build_schema(EffectId effect) {
  switch (effect) {
    case EffectId::kCompressor: {
      std::vector<ParameterSpec> out;
      for (const char* band : {"low", "mid", "high"}) {
        out.push_back(continuous(
            band, {{0.0, 1.0}}, "ratio",
            "ratio 1+7a, threshold -12-18a dBFS, 5 ms attack / 100 ms release"));
      }
      return out;
    }
    case EffectId::kDistortion: {
      ParameterSpec mode;
      mode.name = "mode";
      mode.kind = ParamKind::kCategorical;
      mode.ranges = {{0.0, 11.0}};
      mode.classes = 12;
      mode.class_tokens.assign(kDistortionModes.begin(), kDistortionModes.end());
      mode.physical_unit = "class";
      mode.physical_map = "class index";
      return {mode, continuous("drive", {{0.3, 1.0}}, "x",
                               "pre-gain 10^(2d-0.6), output RMS matched")};
    }
    case EffectId::kEq:
      return {continuous("cutoff", {{0.50, 0.95}}, "Hz",
                         "2000*9^((c-0.5)/0.45): 2 kHz .. 18 kHz"),
              continuous("resonance", {{0.0, 1.0}}, "Q", "0.5*16^r: 0.5 .. 8"),
              continuous("gain", {{0.0, 0.4}, {0.6, 1.0}}, "dB",
                         "36g-18: -18 .. -3.6 dB and +3.6 .. +18 dB")};
    case EffectId::kPhaser:
      return {continuous("depth", {{0.0, 1.0}}, "octaves",
                         "sweep span d*log2(40) octaves around 1265 Hz; "
                         "wet share 0.5*d"),
              continuous("frequency", {{0.0, 1.0}}, "Hz",
                         "LFO rate 0.1*80^f: 0.1 .. 8 Hz"),
              continuous("feedback", {{0.0, 1.0}}, "gain", "0.85*fb")};
    case EffectId::kReverb:
      return {continuous("mix", {{0.3, 0.7}}, "wet", "dry/wet crossfade"),
              continuous("low_cut", {{0.0, 1.0}}, "Hz",
                         "wet high-pass 50*20^l: 50 Hz .. 1 kHz"),
              continuous("high_cut", {{0.0, 1.0}}, "Hz",
                         "wet low-pass 1000*16^h: 1 kHz .. 16 kHz")};
  }
  throw ValidationError("effect", "unknown effect id");
}

const std::vector<ParameterSpec>& schema_ref(EffectId effect) {
  static const std::array<std::vector<ParameterSpec>, kNumEffects> schemas{
      build_schema(EffectId::kCompressor), build_schema(EffectId::kDistortion),
      build_schema(EffectId::kEq), build_schema(EffectId::kPhaser),
      build_schema(EffectId::kReverb)};
  return schemas[static_cast<std::size_t>(rack_index(effect))];
}

Eigen::ArrayXd to_double(const AudioBuffer& audio) {
  return audio.samples.cast<double>();
}

double rms(const Eigen::ArrayXd& x) {
  return x.size() == 0 ? 0.0 : std::sqrt(x.square().mean());
}

// ---------------------------------------------------------------------------
// Multiband compressor

Eigen::ArrayXd compress_band(const Eigen::ArrayXd& band, double amount,
                             double fs) {
  if (amount <= 0.0) return band;
  const double ratio = comp_ratio(amount);
  const double threshold = comp_threshold_db(amount);
  const double makeup_db = -threshold * (1.0 - 1.0 / ratio) * 0.5;
  const double attack = std::exp(-1.0 / (0.005 * fs));
  const double release = std::exp(-1.0 / (0.100 * fs));
  Eigen::ArrayXd out(band.size());
  double env = 0.0;
  for (Eigen::Index n = 0; n < band.size(); ++n) {
    const double level = std::abs(band[n]);
    const double coeff = level > env ? attack : release;
    env = coeff * env + (1.0 - coeff) * level;
    const double level_db = 20.0 * std::log10(std::max(env, 1e-9));
    const double over = level_db - threshold;
    const double reduction = over > 0.0 ? over * (1.0 / ratio - 1.0) : 0.0;
    out[n] = band[n] * std::pow(10.0, (reduction + makeup_db) / 20.0);
  }
  return out;
}

Eigen::ArrayXd compressor(const Eigen::ArrayXd& x, const ParameterVector& p,
                          double fs) {
  // Low and high bands come from LR4 sections; the mid band is the
  // complement, so the three bands always sum back to the input.
  auto low_f = dsp::LinkwitzRiley4::lowpass(120.0, fs);
  auto high_f = dsp::LinkwitzRiley4::highpass(2500.0, fs);
  Eigen::ArrayXd low(x.size()), high(x.size());
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    low[n] = low_f.process(x[n]);
    high[n] = high_f.process(x[n]);
  }
  const Eigen::ArrayXd mid = x - low - high;
  if (p[0] <= 0.0 && p[1] <= 0.0 && p[2] <= 0.0) return x;
  return compress_band(low, p[0], fs) + compress_band(mid, p[1], fs) +
         compress_band(high, p[2], fs);
}

// ---------------------------------------------------------------------------
// Distortion

constexpr double kSoftClipHeadroom = 12.0;

double shape_sample(int mode, double v) {
  switch (mode) {
    case 0:  // soft clip with headroom: near-linear at unity pre-gain
      return kSoftClipHeadroom * std::tanh(v / kSoftClipHeadroom);
    case 1:
      return std::clamp(v, -1.0, 1.0);
    case 2:
      return std::tanh(v + 0.3) - std::tanh(0.3);
    case 3: {  // triangle fold about +-1
      const double m = std::fmod(v - 1.0, 4.0);
      return std::abs((m < 0.0 ? m + 4.0 : m) - 2.0) - 1.0;
    }
    case 4:
      return std::sin(0.5 * kPi * v);
    case 5:
      return std::tanh(std::max(v, 0.0));
    case 6:
      return std::tanh(std::abs(v));
    case 7:
      return std::round(std::clamp(v, -1.0, 1.0) * 4.0) / 4.0;
    case 9:
      return v >= 0.0 ? 1.0 - std::exp(-v) : -0.25 * (1.0 - std::exp(v / 0.25));
    case 10: {
      const double c = std::clamp(v, -1.0, 1.0);
      return c - c * c * c / 3.0;
    }
    case 11: {
      const double dead = std::max(std::abs(v) - 0.2, 0.0);
      return std::clamp(std::copysign(dead, v), -1.0, 1.0);
    }
    default:
      return v;
  }
}

Eigen::ArrayXd distortion(const Eigen::ArrayXd& x, const ParameterVector& p) {
  const int mode = static_cast<int>(p[0]);
  const double drive = p[1];
  const double gain = drive_gain(drive);
  Eigen::ArrayXd out(x.size());
  if (mode == 8) {
    // Sample-and-hold decimation; hold length grows with drive.
    const auto hold = static_cast<Eigen::Index>(
        1 + std::lround(15.0 * (drive - 0.3) / 0.7));
    double held = 0.0;
    for (Eigen::Index n = 0; n < x.size(); ++n) {
      if (n % hold == 0) held = std::clamp(gain * x[n], -1.0, 1.0);
      out[n] = held;
    }
  } else {
    for (Eigen::Index n = 0; n < x.size(); ++n) {
      out[n] = shape_sample(mode, gain * x[n]);
    }
  }
  const double in_rms = rms(x);
  const double out_rms = rms(out);
  if (out_rms > 1e-12) out *= in_rms / out_rms;
  return out;
}

// ---------------------------------------------------------------------------
// High-band EQ

Eigen::ArrayXd equalizer(const Eigen::ArrayXd& x, const ParameterVector& p,
                         double fs) {
  auto shelf = dsp::Biquad::high_shelf(eq_cutoff_hz(p[0]), eq_q(p[1]),
                                       eq_gain_db(p[2]), fs);
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index n = 0; n < x.size(); ++n) out[n] = shelf.process(x[n]);
  return out;
}

// ---------------------------------------------------------------------------
// Phaser

Eigen::ArrayXd phaser(const Eigen::ArrayXd& x, const ParameterVector& p,
                      double fs) {
  constexpr int kStages = 6;
  const double depth = p[0];
  const double rate = phaser_rate_hz(p[1]);
  const double feedback = phaser_feedback(p[2]);
  const double lo = std::log(200.0), hi = std::log(8000.0);
  std::array<double, kStages> xs{}, ys{};
  double last = 0.0;
  Eigen::ArrayXd out(x.size());
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    const double lfo = std::sin(2.0 * kPi * rate * static_cast<double>(n) / fs);
    const double center =
        std::exp(lo + (hi - lo) * (0.5 + 0.5 * depth * lfo));
    const double t = std::tan(kPi * center / fs);
    const double a = (t - 1.0) / (t + 1.0);
    double s = x[n] + feedback * last;
    for (int k = 0; k < kStages; ++k) {
      const double y = a * s + xs[k] - a * ys[k];
      xs[k] = s;
      ys[k] = y;
      s = y;
    }
    last = s;
    out[n] = (1.0 - 0.5 * depth) * x[n] + 0.5 * depth * s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hall reverb

Eigen::ArrayXd reverb(const Eigen::ArrayXd& x, const ParameterVector& p,
                      double fs) {
  constexpr double kRt60 = 2.0;
  constexpr double kDamping = 0.2;
  constexpr double kInputGain = 0.015;
  constexpr double kWetGain = 3.0;
  static constexpr std::array<int, 8> kCombDelays{1116, 1188, 1277, 1356,
                                                  1422, 1491, 1557, 1617};
  static constexpr std::array<int, 4> kAllpassDelays{556, 441, 341, 225};

  const double mix = p[0];
  auto low_cut = dsp::Biquad::highpass(reverb_low_cut_hz(p[1]),
                                       std::numbers::sqrt2 / 2.0, fs);
  auto high_cut = dsp::Biquad::lowpass(reverb_high_cut_hz(p[2]),
                                       std::numbers::sqrt2 / 2.0, fs);
  std::vector<dsp::DampedComb> combs;
  for (int d : kCombDelays) {
    const double g = std::pow(10.0, -3.0 * d / (kRt60 * fs));
    combs.emplace_back(d, g, kDamping);
  }
  std::vector<dsp::DelayAllpass> allpasses;
  for (int d : kAllpassDelays) allpasses.emplace_back(d, 0.5);

  Eigen::ArrayXd out(x.size());
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    const double in = high_cut.process(low_cut.process(x[n])) * kInputGain;
    double wet = 0.0;
    for (auto& c : combs) wet += c.process(in);
    for (auto& a : allpasses) wet = a.process(wet);
    out[n] = (1.0 - mix) * x[n] + mix * kWetGain * wet;
  }
  return out;
}

}  // namespace

std::string_view to_string(EffectId e) {
  switch (e) {
    case EffectId::kCompressor:
      return "compressor";
    case EffectId::kDistortion:
      return "distortion";
    case EffectId::kEq:
      return "eq";
    case EffectId::kPhaser:
      return "phaser";
    case EffectId::kReverb:
      return "reverb";
  }
  return "?";
}

EffectId parse_effect(std::string_view name) {
  for (EffectId e : kAllEffects) {
    if (to_string(e) == name) return e;
  }
  throw ValidationError("effect", "unknown effect '" + std::string(name) +
                                      "' (compressor, distortion, eq, "
                                      "phaser, reverb)");
}

std::string_view to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::kContinuous:
      return "continuous";
    case ParamKind::kCategorical:
      return "categorical";
    case ParamKind::kBinary:
      return "binary";
  }
  return "?";
}

bool ParameterSpec::contains(double value) const {
  if (!std::isfinite(value)) return false;
  if (kind != ParamKind::kContinuous) {
    const double top = kind == ParamKind::kBinary ? 1.0 : classes - 1.0;
    return value == std::floor(value) && value >= 0.0 && value <= top;
  }
  return std::any_of(ranges.begin(), ranges.end(), [&](const Interval& r) {
    return value >= r.lo && value <= r.hi;
  });
}

const std::vector<ParameterSpec>& effect_schema(EffectId effect) {
  return schema_ref(effect);
}

const std::array<std::string_view, 12>& distortion_modes() {
  return kDistortionModes;
}

ParameterVector::ParameterVector(EffectId effect) : effect_(effect) {
  for (const auto& spec : effect_schema(effect)) values_.push_back(spec.lo());
}

ParameterVector::ParameterVector(EffectId effect, std::vector<double> values)
    : effect_(effect), values_(std::move(values)) {
  if (values_.size() != effect_schema(effect).size()) {
    throw ValidationError(std::string(to_string(effect)),
                          "expected " +
                              std::to_string(effect_schema(effect).size()) +
                              " parameter values");
  }
}

std::size_t ParameterVector::slot(std::string_view name) const {
  const auto& schema = effect_schema(effect_);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return i;
  }
  throw ValidationError(std::string(name),
                        "not a parameter of " + std::string(to_string(effect_)));
}

double ParameterVector::get(std::string_view name) const {
  return values_[slot(name)];
}

void ParameterVector::set(std::string_view name, double value) {
  values_[slot(name)] = value;
}

std::map<std::string, double> ParameterVector::to_map() const {
  std::map<std::string, double> out;
  const auto& schema = effect_schema(effect_);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    out[schema[i].name] = values_[i];
  }
  return out;
}

ParameterVector ParameterVector::from_map(
    EffectId effect, const std::map<std::string, double>& values) {
  ParameterVector pv(effect);
  for (const auto& [name, v] : values) pv.set(name, v);
  const auto& schema = effect_schema(effect);
  for (const auto& spec : schema) {
    if (!values.contains(spec.name)) {
      throw ValidationError(spec.name, "missing parameter");
    }
  }
  return pv;
}

void validate(const ParameterVector& params) {
  const auto& schema = effect_schema(params.effect());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!schema[i].contains(params[i])) {
      std::ostringstream msg;
      msg << "value " << params[i] << " outside ";
      if (schema[i].kind == ParamKind::kCategorical) {
        msg << "classes 0.." << schema[i].classes - 1;
      } else {
        for (std::size_t r = 0; r < schema[i].ranges.size(); ++r) {
          msg << (r ? " or " : "") << "[" << schema[i].ranges[r].lo << ", "
              << schema[i].ranges[r].hi << "]";
        }
      }
      throw ValidationError(schema[i].name, msg.str());
    }
  }
}

ParameterVector sample_parameters(EffectId effect, std::uint64_t seed) {
  Rng rng(seed);
  const auto& schema = effect_schema(effect);
  std::vector<double> values;
  for (const auto& spec : schema) {
    if (spec.kind == ParamKind::kCategorical) {
      values.push_back(static_cast<double>(
          rng.index(static_cast<std::size_t>(spec.classes))));
    } else if (spec.kind == ParamKind::kBinary) {
      values.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
    } else {
      double total = 0.0;
      for (const auto& r : spec.ranges) total += r.length();
      double u = rng.uniform() * total;
      double v = spec.ranges.back().hi;
      for (const auto& r : spec.ranges) {
        if (u <= r.length()) {
          v = r.lo + u;
          break;
        }
        u -= r.length();
      }
      values.push_back(v);
    }
  }
  return ParameterVector(effect, std::move(values));
}

double to_physical(const ParameterSpec& spec, double v) {
  const std::string& n = spec.name;
  if (spec.kind != ParamKind::kContinuous) return v;
  if (n == "low" || n == "mid" || n == "high") return comp_ratio(v);
  if (n == "drive") return drive_gain(v);
  if (n == "cutoff") return eq_cutoff_hz(v);
  if (n == "resonance") return eq_q(v);
  if (n == "gain") return eq_gain_db(v);
  if (n == "depth") return phaser_span_octaves(v);
  if (n == "frequency") return phaser_rate_hz(v);
  if (n == "feedback") return phaser_feedback(v);
  if (n == "mix") return v;
  if (n == "low_cut") return reverb_low_cut_hz(v);
  if (n == "high_cut") return reverb_high_cut_hz(v);
  throw ValidationError(n, "no physical map");
}

double from_physical(const ParameterSpec& spec, double x) {
  const std::string& n = spec.name;
  double v = x;
  if (spec.kind == ParamKind::kContinuous) {
    if (n == "low" || n == "mid" || n == "high") {
      v = (x - 1.0) / 7.0;
    } else if (n == "drive") {
      v = (std::log10(x) + 0.6) / 2.0;
    } else if (n == "cutoff") {
      v = 0.5 + 0.45 * std::log(x / 2000.0) / std::log(9.0);
    } else if (n == "resonance") {
      v = std::log(x / 0.5) / std::log(16.0);
    } else if (n == "gain") {
      v = (x + 18.0) / 36.0;
    } else if (n == "depth") {
      v = x / std::log2(40.0);
    } else if (n == "frequency") {
      v = std::log(x / 0.1) / std::log(80.0);
    } else if (n == "feedback") {
      v = x / 0.85;
    } else if (n == "low_cut") {
      v = std::log(x / 50.0) / std::log(20.0);
    } else if (n == "high_cut") {
      v = std::log(x / 1000.0) / std::log(16.0);
    } else if (n != "mix") {
      throw ValidationError(n, "no physical map");
    }
  }
  // Tolerate round-off at the range edges.
  for (const auto& r : spec.ranges) {
    if (v < r.lo && v > r.lo - 1e-9) v = r.lo;
    if (v > r.hi && v < r.hi + 1e-9) v = r.hi;
  }
  if (!spec.contains(v)) {
    throw ValidationError(spec.name, "physical value " + std::to_string(x) +
                                         " " + spec.physical_unit +
                                         " maps outside the sampled range");
  }
  return v;
}

std::vector<double> denormalize_params(const ParameterVector& params) {
  validate(params);
  const auto& schema = effect_schema(params.effect());
  std::vector<double> out;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    out.push_back(to_physical(schema[i], params[i]));
  }
  return out;
}

ParameterVector normalize_params(EffectId effect,
                                 std::span<const double> physical) {
  const auto& schema = effect_schema(effect);
  if (physical.size() != schema.size()) {
    throw ValidationError(std::string(to_string(effect)),
                          "wrong number of physical values");
  }
  std::vector<double> values;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    values.push_back(from_physical(schema[i], physical[i]));
  }
  return ParameterVector(effect, std::move(values));
}

ParameterVector neutral_parameters(EffectId effect) {
  ParameterVector p(effect);
  switch (effect) {
    case EffectId::kCompressor:
      break;  // all amounts 0 -> ratio 1
    case EffectId::kDistortion:
      p.set("mode", 0.0);
      p.set("drive", 0.3);
      break;
    case EffectId::kEq:
      p.set("cutoff", 0.95);
      p.set("resonance", 0.0);
      p.set("gain", 0.5);  // 0 dB, outside the sampled union
      break;
    case EffectId::kPhaser:
      p.set("depth", 0.0);
      break;
    case EffectId::kReverb:
      p.set("mix", 0.3);
      break;
  }
  return p;
}

AudioBuffer apply_effect(const AudioBuffer& audio, const ParameterVector& params,
                         const EffectOptions& options) {
  if (options.allow_range_gaps) {
    const auto& schema = effect_schema(params.effect());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!(params[i] >= schema[i].lo() && params[i] <= schema[i].hi())) {
        throw ValidationError(schema[i].name, "outside parameter hull");
      }
    }
  } else {
    validate(params);
  }
  if (audio.sample_rate != kSampleRate) {
    throw ValidationError("sample_rate", "effects run at 44100 Hz only");
  }
  if (options.bypass) return audio;
  const double fs = audio.sample_rate;
  const Eigen::ArrayXd x = to_double(audio);
  Eigen::ArrayXd y;
  switch (params.effect()) {
    case EffectId::kCompressor:
      y = compressor(x, params, fs);
      break;
    case EffectId::kDistortion:
      y = distortion(x, params);
      break;
    case EffectId::kEq:
      y = equalizer(x, params, fs);
      break;
    case EffectId::kPhaser:
      y = phaser(x, params, fs);
      break;
    case EffectId::kReverb:
      y = reverb(x, params, fs);
      break;
  }
  AudioBuffer out(y.cast<float>(), audio.sample_rate);
  if (!out.all_finite()) {
    throw Error("apply_effect: non-finite output from " +
                std::string(to_string(params.effect())));
  }
  return out;
}

AudioBuffer apply_effect(const AudioBuffer& audio, EffectId effect,
                         const ParameterVector& params) {
  if (params.effect() != effect) {
    throw ValidationError("effect", "parameters belong to " +
                                        std::string(to_string(params.effect())));
  }
  return apply_effect(audio, params);
}

void validate(const EffectChain& chain) {
  if (chain.size() > static_cast<std::size_t>(kNumEffects)) {
    throw ValidationError("chain", "at most 5 effects");
  }
  std::array<bool, kNumEffects> seen{};
  for (const auto& p : chain) {
    auto& s = seen[static_cast<std::size_t>(rack_index(p.effect()))];
    if (s) {
      throw ValidationError("chain", "duplicate effect " +
                                         std::string(to_string(p.effect())));
    }
    s = true;
    validate(p);
  }
}

bool contains(const EffectChain& chain, EffectId effect) {
  return std::any_of(chain.begin(), chain.end(),
                     [&](const auto& p) { return p.effect() == effect; });
}

AudioBuffer apply_chain(const AudioBuffer& audio, const EffectChain& chain) {
  validate(chain);
  AudioBuffer current = audio;
  for (const auto& p : chain) current = apply_effect(current, p);
  return current;
}

EffectChain to_rack_order(EffectChain chain) {
  std::stable_sort(chain.begin(), chain.end(), [](const auto& a, const auto& b) {
    return rack_index(a.effect()) < rack_index(b.effect());
  });
  return chain;
}

}  // namespace stepfx
