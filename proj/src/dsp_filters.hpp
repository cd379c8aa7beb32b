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

// Small filter building blocks shared by the effect bodies. All state is
// per-instance; effects construct fresh filters on every call.

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

namespace stepfx::dsp {

/// Direct form I biquad with RBJ cookbook designs.
class Biquad {
 public:
  static Biquad lowpass(double fc, double q, double fs) {
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double c = std::cos(w0), alpha = std::sin(w0) / (2.0 * q);
    return Biquad((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha,
                  -2.0 * c, 1.0 - alpha);
  }

  static Biquad highpass(double fc, double q, double fs) {
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double c = std::cos(w0), alpha = std::sin(w0) / (2.0 * q);
    return Biquad((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha,
                  -2.0 * c, 1.0 - alpha);
  }

  static Biquad high_shelf(double fc, double q, double gain_db, double fs) {
    const double a = std::pow(10.0, gain_db / 40.0);
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double c = std::cos(w0), alpha = std::sin(w0) / (2.0 * q);
    const double sa = 2.0 * std::sqrt(a) * alpha;
    return Biquad(a * ((a + 1.0) + (a - 1.0) * c + sa),
                  -2.0 * a * ((a - 1.0) + (a + 1.0) * c),
                  a * ((a + 1.0) + (a - 1.0) * c - sa),
                  (a + 1.0) - (a - 1.0) * c + sa,
                  2.0 * ((a - 1.0) - (a + 1.0) * c),
                  (a + 1.0) - (a - 1.0) * c - sa);
  }

  double process(double x) {
    const double y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  Biquad(double b0, double b1, double b2, double a0, double a1, double a2)
      : b0_(b0 / a0), b1_(b1 / a0), b2_(b2 / a0), a1_(a1 / a0), a2_(a2 / a0) {}

  double b0_, b1_, b2_, a1_, a2_;
  double x1_ = 0.0, x2_ = 0.0, y1_ = 0.0, y2_ = 0.0;
};

/// 4th-order Linkwitz-Riley section: two cascaded Butterworth biquads.
class LinkwitzRiley4 {
 public:
  static LinkwitzRiley4 lowpass(double fc, double fs) {
    return {Biquad::lowpass(fc, std::numbers::sqrt2 / 2.0, fs),
            Biquad::lowpass(fc, std::numbers::sqrt2 / 2.0, fs)};
  }
  static LinkwitzRiley4 highpass(double fc, double fs) {
    return {Biquad::highpass(fc, std::numbers::sqrt2 / 2.0, fs),
            Biquad::highpass(fc, std::numbers::sqrt2 / 2.0, fs)};
  }

  double process(double x) { return second_.process(first_.process(x)); }

 private:
  LinkwitzRiley4(Biquad a, Biquad b) : first_(a), second_(b) {}
  Biquad first_, second_;
};

/// Feedback comb with one-pole damping in the loop.
class DampedComb {
 public:
  DampedComb(int delay, double feedback, double damping)
      : buffer_(static_cast<std::size_t>(delay), 0.0),
        feedback_(feedback),
        damping_(damping) {}

  double process(double x) {
    const double out = buffer_[pos_];
    store_ = out * (1.0 - damping_) + store_ * damping_;
    buffer_[pos_] = x + store_ * feedback_;
    if (++pos_ == buffer_.size()) pos_ = 0;
    return out;
  }

 private:
  std::vector<double> buffer_;
  std::size_t pos_ = 0;
  double feedback_, damping_;
  double store_ = 0.0;
};

/// Schroeder all-pass diffuser.
class DelayAllpass {
 public:
  DelayAllpass(int delay, double gain)
      : buffer_(static_cast<std::size_t>(delay), 0.0), gain_(gain) {}

  double process(double x) {
    const double buffered = buffer_[pos_];
    const double out = buffered - x;
    buffer_[pos_] = x + buffered * gain_;
    if (++pos_ == buffer_.size()) pos_ = 0;
    return out;
  }

 private:
  std::vector<double> buffer_;
  std::size_t pos_ = 0;
  double gain_;
};

}  // namespace stepfx::dsp
