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
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stepfx/dataset.hpp"
#include "stepfx/engine.hpp"
#include "stepfx/training.hpp"

namespace stepfx {

// ---------------------------------------------------------------------------
// Whole-system evaluation (per-step error table)

struct EvalCase {
  std::string id;  // target clip id
  std::string preset;
  EffectChain truth;
  AudioBuffer input;   // dry note
  AudioBuffer target;  // dry note through `truth`
};

/// One case per target clip whose chain index is in `chains`, in manifest
/// order, at most `limit` (0 = all).
std::vector<EvalCase> build_eval_cases(const Manifest& manifest,
                                       std::span<const std::uint64_t> chains,
                                       std::size_t limit = 0);

struct CaseResult {
  std::string id;
  std::string preset;
  EffectChain truth;
  MetricReport initial, final_metrics;
  std::vector<StepRecord> steps;
  double seconds = 0.0;  // suggest + apply wall time, kept out of CSVs
};

struct SystemReport {
  std::string group;
  std::vector<CaseResult> cases;
  MetricReport initial, final_metrics, delta;  // means over cases
  std::array<MetricReport, kMaxSteps> step_delta{};  // mean per-step deltas
  std::array<std::size_t, kMaxSteps> step_count{};   // cases reaching the step

  /// One row per case; every summary cell can be recomputed from it.
  std::string raw_csv() const;
  /// metric,initial,final,delta,step1..step5
  std::string summary_csv() const;
  std::string text() const;
};

/// Means over cases; per-step means use only the cases that executed the
/// step.
SystemReport aggregate_system(std::string group, std::vector<CaseResult> cases);

SystemReport evaluate_system(std::shared_ptr<const ModelRegistry> models,
                             std::span<const EvalCase> cases, std::string group,
                             int max_steps = kMaxSteps, double epsilon = kDefaultEpsilon);

// ---------------------------------------------------------------------------
// Per-effect evaluation (error reduction of each effect model)

/// Parameters for one pair given unit-range target/current spectrograms.
using ParamPredictor = std::function<ParameterVector(
    const PairExample& pair, const Eigen::MatrixXf& target_unit,
    const Eigen::MatrixXf& current_unit)>;

ParamPredictor oracle_predictor();
/// The model must outlive the predictor.
ParamPredictor model_predictor(const EffectModel& model);

inline constexpr const char* kPhaserCaveat =
    "phaser: mel spectrogram inputs carry no phase, so phaser settings are "
    "weakly identifiable and its row is not expected to improve";

struct EffectEvalRow {
  EffectId effect = EffectId::kCompressor;
  std::size_t pairs = 0;
  MetricReport before, after, delta;  // means; delta = after - before
};

struct EffectEvalReport {
  std::string group;
  std::string predictor;  // "model", "oracle", ...
  std::vector<EffectEvalRow> rows;

  std::string csv() const;
  std::string text() const;
};

/// Mean metrics of (current vs target) and (current + predicted effect vs
/// target) over held-out pairs. Audio is re-rendered from the manifest.
EffectEvalRow evaluate_effect(EffectId effect, const Manifest& manifest,
                              const FeatureStore& unit, std::span<const PairExample> pairs,
                              const ParamPredictor& predictor);

// ---------------------------------------------------------------------------
// Next-effect accuracy table

struct RnnEvalReport {
  std::string group;
  SequenceScore score;

  /// step,count,accuracy for steps 1..5 then "All".
  std::string csv() const;
  std::string text() const;
};

RnnEvalReport evaluate_rnn(const NextEffectModel& model, const FeatureStore& unit,
                           std::span<const SequenceExample> seqs, std::string group);

/// "%.9g" with "nan" for non-finite values; the CSV number format.
std::string format_number(double v);

}  // namespace stepfx
