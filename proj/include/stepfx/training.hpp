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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepfx/dataset.hpp"
#include "stepfx/models.hpp"

namespace stepfx {

/// Converts a dB feature store to model input range, in place.
void to_unit_range(FeatureStore& store);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;      // NaN without validation data
  double val_accuracy = 0.0;  // next-effect model only
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "patience", "max_epochs", "target"

  static constexpr const char* kCsvHeader =
      "epoch,train_loss,val_loss,val_accuracy,seconds";
  std::string to_csv() const;
  nlohmann::json summary() const;
};

struct TrainConfig {
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 10;  // epochs without validation improvement
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Stop once the training set, measured in inference mode, scores below
  /// this value: continuous-head MSE for effect models, cross-entropy for
  /// the next-effect model. Used by overfit checks.
  std::optional<double> target_train_loss;
  std::function<void(const EpochRecord&)> on_epoch;

  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Effect CNN

/// (B, 2, bands, frames) inputs and encoded head targets for a batch.
nn::Tensor<float> pair_inputs(const FeatureStore& unit, std::span<const PairExample> pairs,
                              std::span<const std::size_t> index);
nn::Tensor<float> pair_targets(EffectId effect, std::span<const PairExample> pairs,
                               std::span<const std::size_t> index);

struct PairLoss {
  double total = 0.0;            // sum of per-head losses
  std::vector<double> per_head;  // head_layout order
  double continuous_mse = 0.0;   // MSE over continuous head outputs only
};

/// Inference-mode loss over a pair set.
PairLoss evaluate_pairs(const EffectModel& model, const FeatureStore& unit,
                        std::span<const PairExample> pairs, int batch_size = 64);

/// Mini-batch Adam on the summed head loss; early stopping on validation
/// loss restores the best weights. With empty `val` the training loss is
/// used instead. Throws TrainingError on divergence.
TrainingHistory train_effect_model(EffectModel& model, const FeatureStore& unit,
                                   std::span<const PairExample> train,
                                   std::span<const PairExample> val,
                                   const TrainConfig& config);

// ---------------------------------------------------------------------------
// Next-effect RNN

/// Inputs for equal-length sequences.
std::pair<nn::Tensor<float>, nn::Tensor<float>> sequence_inputs(
    const FeatureStore& unit, std::span<const SequenceExample> seqs,
    std::span<const std::size_t> index);

struct SequenceScore {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> accuracy_by_step;  // steps 1..5, NaN when absent
  std::vector<std::size_t> count_by_step;
};

SequenceScore evaluate_sequences(const NextEffectModel& model, const FeatureStore& unit,
                                 std::span<const SequenceExample> seqs,
                                 int batch_size = 32);

/// Batches are drawn from length buckets so no padding is needed.
TrainingHistory train_rnn(NextEffectModel& model, const FeatureStore& unit,
                          std::span<const SequenceExample> train,
                          std::span<const SequenceExample> val,
                          const TrainConfig& config);

}  // namespace stepfx
