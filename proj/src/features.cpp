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

#include "stepfx/features.hpp"

#include <complex>
#include <cstdio>
#include <numbers>
#include <unsupported/Eigen/FFT>
#include <vector>

namespace stepfx {
namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

Mat<double> build_filterbank() {
  const double nyquist = kSampleRate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(kNumMels + 2);
  for (int i = 0; i < kNumMels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_max * i / (kNumMels + 1.0));
  }
  Mat<double> fb = Mat<double>::Zero(kNumMels, kNumBins);
  for (int m = 0; m < kNumMels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < kNumBins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kFftSize;
      const double up = (f - lo) / (center - lo);
      const double down = (hi - f) / (hi - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
    const double peak = fb.row(m).maxCoeff();
    if (peak > 0.0) fb.row(m) /= peak;
  }
  return fb;
}

Mat<double> build_dct() {
  Mat<double> d(kNumMels, kNumMels);
  const double n = kNumMels;
  for (int k = 0; k < kNumMels; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < kNumMels; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) /
                                 (2.0 * n));
    }
  }
  return d;
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kFftSize);
    for (int i = 0; i < kFftSize; ++i) {
      v[static_cast<std::size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFftSize);
    }
    return v;
  }();
  return w;
}

// Reflect padding without edge repetition: x[-i] = x[i].
double reflect_at(const Eigen::ArrayXf& x, Eigen::Index i) {
  const Eigen::Index n = x.size();
  if (n == 1) return x[0];
  const Eigen::Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= n) i = period - i;
  return x[i];
}

}  // namespace

template <typename Scalar>
Mat<Scalar> power_spectrogram(const AudioBuffer& audio) {
  if (audio.empty()) throw ValidationError("audio", "empty clip");
  if (audio.sample_rate != kSampleRate) {
    throw ValidationError("sample_rate", "features expect 44100 Hz audio");
  }
  const Eigen::Index frames = frame_count(audio.size());
  const auto& window = hann_window();
  Mat<Scalar> out(kNumBins, frames);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(kFftSize);
  std::vector<std::complex<double>> spectrum;
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Index start = t * kHopLength - kFftSize / 2;
    for (int i = 0; i < kFftSize; ++i) {
      frame[static_cast<std::size_t>(i)] =
          window[static_cast<std::size_t>(i)] * reflect_at(audio.samples, start + i);
    }
    fft.fwd(spectrum, frame);
    for (int k = 0; k < kNumBins; ++k) {
      out(k, t) = static_cast<Scalar>(std::norm(spectrum[static_cast<std::size_t>(k)]));
    }
  }
  return out;
}

template Mat<double> power_spectrogram<double>(const AudioBuffer&);
template Mat<float> power_spectrogram<float>(const AudioBuffer&);

const Mat<double>& mel_filterbank() {
  static const Mat<double> fb = build_filterbank();
  return fb;
}

const Mat<double>& dct_basis() {
  static const Mat<double> d = build_dct();
  return d;
}

MelSpectrogramDb mel_spectrogram(const AudioBuffer& audio) {
  return {mel_spectrogram_db<float>(audio)};
}

std::string MetricReport::to_csv_row() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g", mse, mae, mfcc_dist,
                lsd);
  return buf;
}

ClipFeatures analyze(const AudioBuffer& audio) {
  ClipFeatures f;
  const Mat<double> power = power_spectrogram<double>(audio);
  f.mel_db = power_to_db(Mat<double>(mel_filterbank() * power));
  f.mfcc = mfcc(f.mel_db);
  f.power_db = power_to_db(power);
  return f;
}

MetricReport compute_metrics(const ClipFeatures& a, const ClipFeatures& b) {
  if (a.mel_db.rows() != b.mel_db.rows() ||
      a.mel_db.cols() != b.mel_db.cols() ||
      a.power_db.cols() != b.power_db.cols()) {
    throw ShapeError("compute_metrics: clips differ in shape");
  }
  MetricReport r;
  const Eigen::ArrayXXd mel_diff = (a.mel_db - b.mel_db).array();
  r.mse = mel_diff.square().mean();
  r.mae = mel_diff.abs().mean();
  r.mfcc_dist = (a.mfcc - b.mfcc).colwise().norm().mean();
  r.lsd = (a.power_db - b.power_db)
              .array()
              .square()
              .colwise()
              .mean()
              .sqrt()
              .mean();
  return r;
}

MetricReport compute_metrics(const AudioBuffer& a, const AudioBuffer& b) {
  if (a.size() != b.size() || a.sample_rate != b.sample_rate) {
    throw ShapeError("compute_metrics: clips differ in length or rate");
  }
  return compute_metrics(analyze(a), analyze(b));
}

}  // namespace stepfx
