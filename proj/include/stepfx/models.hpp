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
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepfx/effects.hpp"
#include "stepfx/features.hpp"
#include "stepfx/nn/gradcheck.hpp"
#include "stepfx/nn/layers.hpp"

namespace stepfx {

inline constexpr int kInputChannels = 2;  // 0: target, 1: current
inline constexpr int kInputBands = kNumMels;
inline constexpr int kInputFrames = static_cast<int>(kClipFrames);

struct CnnConfig {
  std::vector<int> channels{32, 64, 128, 128};
  int dense1 = 256;
  int dense2 = 128;
  double dropout = 0.5;
  int bands = kInputBands;
  int frames = kInputFrames;

  nlohmann::json to_json() const;
  static CnnConfig from_json(const nlohmann::json& j);
};

struct RnnConfig {
  std::vector<int> channels{16, 32, 64};
  int embedding = 128;
  int hidden = 128;
  int dense = 128;
  double dropout = 0.5;
  int bands = kInputBands;
  int frames = kInputFrames;

  nlohmann::json to_json() const;
  static RnnConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Output heads

/// Head inventory in schema order. EQ gain is split into a binary boost
/// flag and a continuous magnitude.
const nn::HeadLayout& head_layout(EffectId effect);

/// Head targets for one labeled parameter vector, width head_width(layout).
/// Continuous values are rescaled to [0, 1] over their range hull;
/// categorical values become one-hot.
std::vector<float> encode_labels(const ParameterVector& params);

/// Inverse of encode_labels for arbitrary head outputs; always returns an
/// in-range vector (non-finite outputs decode to the middle of the range).
ParameterVector decode_heads(EffectId effect, std::span<const float> outputs);

// ---------------------------------------------------------------------------
// Network builders (templated so gradient checks can run in double)

inline int pooled(int size, std::size_t blocks) {
  for (std::size_t i = 0; i < blocks; ++i) size /= 2;
  return size;
}

/// (3x3 conv, ELU, 2x2 max-pool) per entry of `channels`.
template <typename Scalar>
void add_conv_blocks(nn::Sequential<Scalar>& seq, const std::string& prefix,
                     int in_channels, const std::vector<int>& channels) {
  int in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string n = prefix + std::to_string(i + 1);
    auto& conv = seq.template add<nn::Conv2d<Scalar>>(n + ".conv", in, channels[i], 3);
    if (i == 0) conv.set_skip_input_grad(true);
    seq.template add<nn::Elu<Scalar>>(n + ".elu");
    seq.template add<nn::MaxPool2d<Scalar>>(n + ".pool");
    in = channels[i];
  }
}

/// conv blocks -> flatten -> dense1 (ELU, dropout) -> dense2 (ELU, dropout)
/// -> head logits -> per-head activations. Input (B, 2, bands, frames).
template <typename Scalar>
std::unique_ptr<nn::Sequential<Scalar>> build_effect_net(EffectId effect,
                                                          const CnnConfig& cfg) {
  const int h = pooled(cfg.bands, cfg.channels.size());
  const int w = pooled(cfg.frames, cfg.channels.size());
  if (cfg.channels.empty() || h < 1 || w < 1) {
    throw ValidationError("channels", "too many pooling blocks for the input size");
  }
  auto net = std::make_unique<nn::Sequential<Scalar>>("cnn");
  add_conv_blocks(*net, "conv", kInputChannels, cfg.channels);
  net->template add<nn::Flatten<Scalar>>("flatten");
  net->template add<nn::Dense<Scalar>>("fc1", cfg.channels.back() * h * w, cfg.dense1);
  net->template add<nn::Elu<Scalar>>("fc1.elu");
  net->template add<nn::Dropout<Scalar>>("fc1.dropout", cfg.dropout);
  net->template add<nn::Dense<Scalar>>("fc2", cfg.dense1, cfg.dense2);
  net->template add<nn::Elu<Scalar>>("fc2.elu");
  net->template add<nn::Dropout<Scalar>>("fc2.dropout", cfg.dropout);
  const nn::HeadLayout& layout = head_layout(effect);
  net->template add<nn::Dense<Scalar>>("head", cfg.dense2, nn::head_width(layout));
  net->template add<nn::OutputHeads<Scalar>>("heads", layout);
  return net;
}

/// Next-effect network. Inputs: spectrogram pairs (B, T, 2, bands, frames)
/// and cumulative used-effect multi-hots (B, T, 5). Output (B, 5)
/// probabilities.
template <typename Scalar>
class NextEffectNet : public nn::Module<Scalar> {
 public:
  explicit NextEffectNet(const RnnConfig& cfg) : cfg_(cfg) {
    const int h = pooled(cfg.bands, cfg.channels.size());
    const int w = pooled(cfg.frames, cfg.channels.size());
    if (cfg.channels.empty() || h < 1 || w < 1) {
      throw ValidationError("channels", "too many pooling blocks for the input size");
    }
    auto step = std::make_unique<nn::Sequential<Scalar>>("step");
    add_conv_blocks(*step, "step.conv", kInputChannels, cfg.channels);
    step->template add<nn::GlobalAvgPool<Scalar>>("step.gap");
    step->template add<nn::Dense<Scalar>>("step.embed", cfg.channels.back(), cfg.embedding);
    step->template add<nn::Elu<Scalar>>("step.elu");
    step_ = std::make_unique<nn::TimeDistributed<Scalar>>("per_step", std::move(step));
    lstm_ = std::make_unique<nn::BiLstm<Scalar>>("lstm", cfg.embedding + kNumEffects,
                                                 cfg.hidden, false);
    head_ = std::make_unique<nn::Sequential<Scalar>>("head");
    head_->template add<nn::Dense<Scalar>>("fc", 2 * cfg.hidden, cfg.dense);
    head_->template add<nn::Elu<Scalar>>("fc.elu");
    head_->template add<nn::Dropout<Scalar>>("fc.dropout", cfg.dropout);
    head_->template add<nn::Dense<Scalar>>("out", cfg.dense, kNumEffects);
    head_->template add<nn::Softmax<Scalar>>("softmax");
  }

  const RnnConfig& config() const noexcept { return cfg_; }

  nn::Tensor<Scalar> forward(const std::vector<nn::Tensor<Scalar>>& inputs,
                             nn::Mode mode, Rng& rng) override {
    check_inputs(inputs);
    const nn::Tensor<Scalar> e = step_->forward(inputs[0], mode, rng);
    const nn::Tensor<Scalar> z = concat_.forward(e, inputs[1]);
    return head_->forward(lstm_->forward(z, mode, rng), mode, rng);
  }

  std::vector<nn::Tensor<Scalar>> backward(const nn::Tensor<Scalar>& dy) override {
    const nn::Tensor<Scalar> dz = lstm_->backward(head_->backward(dy));
    auto [de, dused] = concat_.backward(dz);
    nn::Tensor<Scalar> dspec = step_->backward(de);
    return {std::move(dspec), std::move(dused)};
  }

  nn::Tensor<Scalar> infer(const nn::Tensor<Scalar>& specs,
                           const nn::Tensor<Scalar>& used) const {
    check_inputs({specs, used});
    const nn::Tensor<Scalar> z =
        nn::Concat<Scalar>::apply(step_->infer(specs), used);
    return head_->infer(lstm_->infer(z));
  }

  nn::ParamList<Scalar> params() override {
    nn::ParamList<Scalar> out = step_->params();
    for (auto* p : lstm_->params()) out.push_back(p);
    for (auto* p : head_->params()) out.push_back(p);
    return out;
  }
  void init(Rng& rng) override {
    step_->init(rng);
    lstm_->init(rng);
    head_->init(rng);
  }
  std::uint64_t branch_signature() const override {
    return step_->branch_signature();
  }

  nlohmann::json describe() const {
    return {{"per_step", step_->describe()},
            {"concat", {{"kind", nn::Concat<Scalar>::kKind}, {"extra", kNumEffects}}},
            {"lstm", lstm_->describe()},
            {"head", head_->describe()}};
  }

 private:
  void check_inputs(const std::vector<nn::Tensor<Scalar>>& inputs) const {
    if (inputs.size() != 2) throw ShapeError("next-effect net takes two inputs");
    nn::expect_shape("next-effect spectrograms", inputs[0].shape(),
                     {-1, -1, kInputChannels, cfg_.bands, cfg_.frames});
    nn::expect_shape("next-effect used effects", inputs[1].shape(),
                     {inputs[0].dim(0), inputs[0].dim(1), kNumEffects});
  }

  RnnConfig cfg_;
  std::unique_ptr<nn::TimeDistributed<Scalar>> step_;
  nn::Concat<Scalar> concat_;
  std::unique_ptr<nn::BiLstm<Scalar>> lstm_;
  std::unique_ptr<nn::Sequential<Scalar>> head_;
};

// ---------------------------------------------------------------------------
// Trained models

/// Provenance carried inside model files.
struct ModelMeta {
  nlohmann::json training = nlohmann::json::object();
  std::string data_fingerprint;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ModelMeta from_json(const nlohmann::json& j);
};

/// Stacks unit-range spectrograms into one (1, 2, bands, frames) input.
nn::Tensor<float> stack_pair(const Eigen::MatrixXf& target_unit,
                             const Eigen::MatrixXf& current_unit);

class EffectModel {
 public:
  explicit EffectModel(EffectId effect, CnnConfig config = {},
                       std::uint64_t init_seed = 0);

  EffectId effect() const noexcept { return effect_; }
  const CnnConfig& config() const noexcept { return config_; }
  nn::Sequential<float>& net() { return *net_; }

  /// Head outputs for a (B, 2, bands, frames) batch.
  nn::Tensor<float> infer(const nn::Tensor<float>& batch) const;
  /// Decoded parameters for unit-range (bands x frames) spectrograms.
  ParameterVector predict(const Eigen::MatrixXf& target_unit,
                          const Eigen::MatrixXf& current_unit) const;
  std::vector<ParameterVector> predict_batch(const nn::Tensor<float>& batch) const;

  nlohmann::json architecture() const;
  ModelMeta meta;

 private:
  EffectId effect_;
  CnnConfig config_;
  std::unique_ptr<nn::Sequential<float>> net_;
};

/// One step of the next-effect input: unit-range target and current
/// spectrograms plus the set of effects applied so far.
struct SequenceStep {
  const Eigen::MatrixXf* target_unit = nullptr;
  const Eigen::MatrixXf* current_unit = nullptr;
  std::array<bool, kNumEffects> used{};
};

class NextEffectModel {
 public:
  explicit NextEffectModel(RnnConfig config = {}, std::uint64_t init_seed = 0);

  const RnnConfig& config() const noexcept { return net_->config(); }
  NextEffectNet<float>& net() { return *net_; }

  nn::Tensor<float> infer(const nn::Tensor<float>& specs,
                          const nn::Tensor<float>& used) const;
  /// Softmax over the five effects in rack order.
  std::array<double, kNumEffects> predict(std::span<const SequenceStep> steps) const;

  nlohmann::json architecture() const;
  ModelMeta meta;

 private:
  std::unique_ptr<NextEffectNet<float>> net_;
};

/// Builds the (1, T, 2, bands, frames) and (1, T, 5) inputs for one sequence.
std::pair<nn::Tensor<float>, nn::Tensor<float>> stack_sequence(
    std::span<const SequenceStep> steps, int bands = kInputBands,
    int frames = kInputFrames);

void save_model(const std::filesystem::path& path, const EffectModel& model);
void save_model(const std::filesystem::path& path, const NextEffectModel& model);

/// Throws ArtifactError on corrupt files, version mismatch, architecture
/// mismatch, or (when `expected` is set) a model trained for another effect.
EffectModel load_effect_model(const std::filesystem::path& path,
                              std::optional<EffectId> expected = std::nullopt);
NextEffectModel load_rnn_model(const std::filesystem::path& path);

/// Conventional file names inside a models directory.
std::filesystem::path effect_model_path(const std::filesystem::path& dir, EffectId e);
std::filesystem::path rnn_model_path(const std::filesystem::path& dir);

}  // namespace stepfx
