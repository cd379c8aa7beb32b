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

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "stepfx/audio.hpp"
#include "stepfx/error.hpp"

namespace stepfx {

inline constexpr int kFftSize = 4096;
inline constexpr int kHopLength = 512;
inline constexpr int kNumBins = kFftSize / 2 + 1;  // 2049
inline constexpr int kNumMels = 128;
inline constexpr int kNumMfcc = 20;
inline constexpr double kDbFloor = -80.0;
inline constexpr double kPowerAmin = 1e-10;

/// 1 + floor(n / hop) for centered frames.
constexpr Eigen::Index frame_count(Eigen::Index samples) {
  return 1 + samples / kHopLength;
}
inline constexpr Eigen::Index kClipFrames = frame_count(kClipLength);  // 87

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// |STFT|^2 with a periodic Hann window of length 4096, hop 512, centered
/// frames with reflect padding. Shape 2049 x frames.
template <typename Scalar = double>
Mat<Scalar> power_spectrogram(const AudioBuffer& audio);

/// 128 HTK-mel triangles over 0..22050 Hz, each peak-normalized to 1.
/// Shape 128 x 2049; computed once.
const Mat<double>& mel_filterbank();

/// Orthonormal DCT-II basis, 128 x 128 (row k is coefficient k).
const Mat<double>& dct_basis();

/// 10*log10(max(p, 1e-10)) referenced to the matrix maximum, floored at
/// -80 dB. An all-silent matrix maps to the floor everywhere.
template <typename Derived>
Mat<typename Derived::Scalar> power_to_db(const Eigen::MatrixBase<Derived>& power) {
  using Scalar = typename Derived::Scalar;
  const Scalar amin = static_cast<Scalar>(kPowerAmin);
  const Scalar floor = static_cast<Scalar>(kDbFloor);
  if (power.size() == 0) return Mat<Scalar>();
  const Scalar peak = power.maxCoeff();
  if (!(peak > amin)) {
    return Mat<Scalar>::Constant(power.rows(), power.cols(), floor);
  }
  // Ratio first so the peak maps to exactly 0 dB.
  return power.unaryExpr([&](Scalar p) {
    return std::max(Scalar(10) * std::log10(std::max(p, amin) / peak), floor);
  });
}

/// Mel power in dB, 128 x frames, values in [-80, 0].
template <typename Scalar = double>
Mat<Scalar> mel_spectrogram_db(const AudioBuffer& audio) {
  const Mat<double> power = power_spectrogram<double>(audio);
  const Mat<double> mel = mel_filterbank() * power;
  return power_to_db(mel).template cast<Scalar>();
}

/// First `n` orthonormal DCT-II coefficients along the mel axis.
template <typename Derived>
Mat<typename Derived::Scalar> mfcc(const Eigen::MatrixBase<Derived>& mel_db,
                                   int n = kNumMfcc) {
  using Scalar = typename Derived::Scalar;
  if (mel_db.rows() != kNumMels) {
    throw ShapeError("mfcc expects 128 mel bands, got " +
                     std::to_string(mel_db.rows()));
  }
  if (n < 1 || n > kNumMels) {
    throw ValidationError("n", "coefficient count must be in 1..128");
  }
  return dct_basis().topRows(n).cast<Scalar>() * mel_db;
}

/// Model-ready mel spectrogram (float storage).
struct MelSpectrogramDb {
  Eigen::MatrixXf db;  // 128 x frames

  Eigen::Index bands() const { return db.rows(); }
  Eigen::Index frames() const { return db.cols(); }
};

MelSpectrogramDb mel_spectrogram(const AudioBuffer& audio);

/// Affine map [-80, 0] dB -> [0, 1] and its inverse.
template <typename Derived>
auto normalize_for_model(const Eigen::MatrixBase<Derived>& db) {
  using Scalar = typename Derived::Scalar;
  return ((db.array() - static_cast<Scalar>(kDbFloor)) /
          static_cast<Scalar>(-kDbFloor))
      .matrix();
}
template <typename Derived>
auto denormalize_from_model(const Eigen::MatrixBase<Derived>& unit) {
  using Scalar = typename Derived::Scalar;
  return (unit.array() * static_cast<Scalar>(-kDbFloor) +
          static_cast<Scalar>(kDbFloor))
      .matrix();
}

struct MetricReport {
  double mse = 0.0;        // mel dB, elementwise
  double mae = 0.0;        // mel dB, elementwise
  double mfcc_dist = 0.0;  // mean per-frame Euclidean distance, 20 coeffs
  double lsd = 0.0;        // mean per-frame RMS of power dB difference

  static constexpr const char* kCsvHeader = "mse,mae,mfcc,lsd";
  std::string to_csv_row() const;
};

inline MetricReport operator-(const MetricReport& a, const MetricReport& b) {
  return {a.mse - b.mse, a.mae - b.mae, a.mfcc_dist - b.mfcc_dist,
          a.lsd - b.lsd};
}

/// Precomputed double-precision features of one clip; metric inputs.
struct ClipFeatures {
  Mat<double> mel_db;    // 128 x frames
  Mat<double> mfcc;      // 20 x frames
  Mat<double> power_db;  // 2049 x frames
};

ClipFeatures analyze(const AudioBuffer& audio);

MetricReport compute_metrics(const ClipFeatures& a, const ClipFeatures& b);
MetricReport compute_metrics(const AudioBuffer& a, const AudioBuffer& b);

/// Mean absolute difference between two mel dB matrices.
template <typename DA, typename DB>
double mel_mae(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("mel_mae: shape mismatch");
  }
  return (a.template cast<double>() - b.template cast<double>())
      .array()
      .abs()
      .mean();
}

}  // namespace stepfx
