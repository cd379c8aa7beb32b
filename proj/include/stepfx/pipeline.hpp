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

// End-to-end desk runs shared by the CLI and the acceptance suite:
// configuration, chain-level splits, training and evaluation drivers.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepfx/dataset.hpp"
#include "stepfx/engine.hpp"
#include "stepfx/eval.hpp"
#include "stepfx/models.hpp"
#include "stepfx/training.hpp"

namespace stepfx {

/// Every knob of a desk run. Loaded from the --config JSON file, whose
/// keys mirror to_json(); absent keys keep their defaults.
struct RunConfig {
  PresetGroup group = PresetGroup::kBasic;
  int chains = 500;
  std::uint64_t seed = 7;
  int jobs = 1;
  double val_fraction = 0.10;
  double test_fraction = 0.05;

  CnnConfig cnn;
  RnnConfig rnn;
  TrainConfig cnn_train;  // batch 128
  TrainConfig rnn_train;  // batch 32
  std::size_t pair_cap = 0;  // training pairs per effect, 0 = all
  OrderingPolicy policy = OrderingPolicy::kGreedyImprovement;

  int max_steps = kMaxSteps;
  double epsilon = kDefaultEpsilon;
  std::size_t eval_cases = 0;  // 0 = every held-out target
  std::size_t eval_pairs = 0;  // per effect, 0 = every held-out pair

  RunConfig();
  nlohmann::json to_json() const;
  /// Applies `patch` over `base` (JSON merge semantics) and validates.
  static RunConfig from_json(const nlohmann::json& patch, const RunConfig& base = {});
  /// Merges the file over `base`.
  static RunConfig load(const std::filesystem::path& path, const RunConfig& base = {});

  /// Named starting points: "full" (the defaults) and "desk", narrower
  /// models and shorter training sized for about an hour on one core.
  static RunConfig profile(std::string_view name);
};

enum class SplitPart { kTrain, kVal, kTest };

/// A generated dataset plus its chain-level split. All models and the
/// system evaluation share the split, so test chains are unseen by every
/// model.
class Workspace {
 public:
  Workspace(std::filesystem::path data_dir, const RunConfig& config);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  /// Unit-range features, loaded on first use.
  const FeatureStore& unit();
  const Split& chain_split() const noexcept { return split_; }
  std::vector<std::uint64_t> chains(SplitPart part) const;
  bool in(SplitPart part, std::uint64_t chain) const;
  /// Hash of the manifest bytes and the split.
  const std::string& fingerprint() const noexcept { return fingerprint_; }

  /// Pairs of chains in `part`; `cap` subsamples uniformly (0 = all).
  std::vector<PairExample> pairs(EffectId effect, SplitPart part, std::size_t cap = 0) const;
  std::vector<SequenceExample> sequences(SplitPart part);

 private:
  std::filesystem::path dir_;
  RunConfig config_;
  Manifest manifest_;
  std::optional<FeatureStore> unit_;
  Split split_;
  std::vector<int> part_of_;  // by chain index
  std::string fingerprint_;
  std::optional<std::vector<SequenceExample>> sequences_;
};

struct TrainedEffect {
  std::shared_ptr<EffectModel> model;
  TrainingHistory history;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
};

TrainedEffect train_effect(Workspace& ws, EffectId effect, const RunConfig& config);

struct TrainedRnn {
  std::shared_ptr<NextEffectModel> model;
  TrainingHistory history;
  SequenceScore val_score;
};

TrainedRnn train_next_effect(Workspace& ws, const RunConfig& config);

/// Writes <name>.history.csv and <name>.summary.json next to the models.
void write_history(const std::filesystem::path& models_dir, const std::string& name,
                   const TrainingHistory& history, const nlohmann::json& extra);

enum class PredictorKind { kModel, kOracle, kUntrained };
PredictorKind parse_predictor(std::string_view name);

EffectEvalReport eval_effects(Workspace& ws, const ModelRegistry* models, PredictorKind kind,
                              const RunConfig& config);
RnnEvalReport eval_rnn(Workspace& ws, const NextEffectModel& model, const RunConfig& config);
SystemReport eval_system(Workspace& ws, std::shared_ptr<const ModelRegistry> models,
                         const RunConfig& config);

}  // namespace stepfx
