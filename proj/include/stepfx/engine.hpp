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
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepfx/audio.hpp"
#include "stepfx/effects.hpp"
#include "stepfx/features.hpp"
#include "stepfx/models.hpp"

namespace stepfx {

using Probabilities = std::array<double, kNumEffects>;

inline constexpr double kDefaultEpsilon = 0.5;  // dB of mel MAE
inline constexpr int kMaxSteps = kNumEffects;

/// Five effect models plus the next-effect model, shared read-only.
class ModelRegistry {
 public:
  ModelRegistry() = default;

  /// Loads <effect>.stepfx and next_effect.stepfx; ArtifactError if any
  /// file is missing or corrupt.
  static std::shared_ptr<const ModelRegistry> load(const std::filesystem::path& dir);

  void set(std::shared_ptr<const EffectModel> model);
  void set(std::shared_ptr<const NextEffectModel> model);

  /// ArtifactError naming the effect when no model is registered.
  const EffectModel& effect(EffectId e) const;
  const NextEffectModel& next_effect() const;
  bool complete() const noexcept;

 private:
  std::array<std::shared_ptr<const EffectModel>, kNumEffects> effects_{};
  std::shared_ptr<const NextEffectModel> rnn_;
};

struct StepRecord {
  int index = 0;  // 1-based
  EffectId effect = EffectId::kCompressor;
  ParameterVector params{EffectId::kCompressor};
  Probabilities probabilities{};  // masked and renormalized
  MetricReport before, after, delta;
  bool marginal = false;  // MAE improved by less than epsilon
  int snapshot = 0;       // state index of the resulting spectrogram

  nlohmann::json to_json() const;
  /// "Step 1: distortion, mode=soft-clip, drive=0.71, MAE 0.172->0.120"
  std::string plan_line() const;
};

struct Suggestion {
  EffectId effect = EffectId::kCompressor;
  ParameterVector params{EffectId::kCompressor};
  Probabilities probabilities{};

  nlohmann::json to_json() const;
};

/// One matching session. Holds every intermediate state so that RNN
/// inputs, spectrogram snapshots and audio downloads need no re-render.
class SessionState {
 public:
  SessionState(AudioBuffer input, AudioBuffer target,
               std::shared_ptr<const ModelRegistry> models);

  /// MAE improvement (dB) below which an applied step is marginal.
  double epsilon() const noexcept { return epsilon_; }
  void set_epsilon(double epsilon);

  const AudioBuffer& input() const noexcept { return states_.front(); }
  const AudioBuffer& target() const noexcept { return target_; }
  const AudioBuffer& current() const noexcept { return states_.back(); }
  const std::vector<StepRecord>& history() const noexcept { return history_; }
  std::array<bool, kNumEffects> used() const;
  EffectChain chain() const;
  const ModelRegistry& models() const;

  /// Metrics of the current audio against the target.
  const MetricReport& metrics() const noexcept { return metrics_.back(); }

  /// State k: 0 is the input, k is after step k.
  std::size_t state_count() const noexcept { return states_.size(); }
  const AudioBuffer& state_audio(std::size_t k) const { return states_.at(k); }
  const Eigen::MatrixXf& state_mel_db(std::size_t k) const { return mel_db_.at(k); }
  const Eigen::MatrixXf& target_mel_db() const noexcept { return target_mel_db_; }
  /// Model-input (unit range) versions of the above.
  const Eigen::MatrixXf& state_unit(std::size_t k) const { return unit_.at(k); }
  const Eigen::MatrixXf& target_unit() const noexcept { return target_unit_; }

  /// Input audio with the whole history replayed; equals current().
  AudioBuffer replay() const;

  nlohmann::json to_json() const;

 private:
  friend StepRecord apply_step(SessionState&, const ParameterVector&,
                               std::optional<Probabilities>);
  friend void undo_step(SessionState&);

  void push_state(AudioBuffer audio);

  AudioBuffer target_;
  ClipFeatures target_features_;
  Eigen::MatrixXf target_mel_db_;
  Eigen::MatrixXf target_unit_;
  std::shared_ptr<const ModelRegistry> models_;
  std::vector<AudioBuffer> states_;
  std::vector<Eigen::MatrixXf> mel_db_;
  std::vector<Eigen::MatrixXf> unit_;
  std::vector<MetricReport> metrics_;
  std::vector<StepRecord> history_;
  double epsilon_ = kDefaultEpsilon;
};

/// RNN probabilities masked to unused effects and renormalized.
Probabilities next_effect_probabilities(const SessionState& state);

/// Masked argmax plus the chosen effect's CNN parameters. Pure. Throws
/// ConflictError when every effect has been used.
Suggestion suggest_step(const SessionState& state);

/// Applies an unused effect with in-spec parameters to the current audio.
/// `probabilities` defaults to next_effect_probabilities(state). The step
/// is flagged marginal when MAE improves by less than state.epsilon().
StepRecord apply_step(SessionState& state, const ParameterVector& params,
                      std::optional<Probabilities> probabilities = std::nullopt);

/// Drops the last step by replaying the input through the rest of the
/// history. ConflictError on an empty history.
void undo_step(SessionState& state);

/// suggest + apply until all effects are used, a step is marginal, or
/// max_steps is reached.
std::vector<StepRecord> run_full(SessionState& state, int max_steps = kMaxSteps);

/// One plan line per record.
std::string text_plan(const std::vector<StepRecord>& records);

/// Writes input.wav, target.wav and session.json; load_session replays
/// the stored steps into a bit-identical state.
void save_session(const std::filesystem::path& dir, const SessionState& state);
SessionState load_session(const std::filesystem::path& dir,
                          std::shared_ptr<const ModelRegistry> models);

nlohmann::json metrics_json(const MetricReport& m);

}  // namespace stepfx
