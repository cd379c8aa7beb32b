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

#include "stepfx/models.hpp"

#include <algorithm>
#include <cmath>

#include "stepfx/container.hpp"
#include "stepfx/error.hpp"

namespace stepfx {
namespace {

constexpr std::string_view kFormat = "stepfx-model";
constexpr std::string_view kEffectKind = "effect-cnn";
constexpr std::string_view kRnnKind = "next-effect-rnn";

// EQ gain is sampled from [0, 0.4] u [0.6, 1]; boost means the upper piece.
constexpr double kGainCutHi = 0.4;
constexpr double kGainBoostLo = 0.6;

nn::HeadLayout build_layout(EffectId effect) {
  nn::HeadLayout layout;
  int offset = 0;
  auto push = [&](std::string name, nn::HeadKind kind, int width) {
    layout.push_back({std::move(name), kind, offset, width});
    offset += width;
  };
  for (const auto& spec : effect_schema(effect)) {
    if (effect == EffectId::kEq && spec.name == "gain") {
      push("gain_boost", nn::HeadKind::kBinary, 1);
      push("gain_magnitude", nn::HeadKind::kContinuous, 1);
    } else if (spec.kind == ParamKind::kCategorical) {
      push(spec.name, nn::HeadKind::kCategorical, spec.classes);
    } else {
      push(spec.name, nn::HeadKind::kContinuous, 1);
    }
  }
  return layout;
}

float unit(const ParameterSpec& spec, double v) {
  return static_cast<float>((v - spec.lo()) / (spec.hi() - spec.lo()));
}

double from_unit(const ParameterSpec& spec, float s) {
  const double u = std::isfinite(s) ? std::clamp(static_cast<double>(s), 0.0, 1.0) : 0.5;
  return spec.lo() + u * (spec.hi() - spec.lo());
}

double decode_unit(float s) {
  return std::isfinite(s) ? std::clamp(static_cast<double>(s), 0.0, 1.0) : 0.5;
}

template <typename Net>
void assign_weights(Net& net, const Container& c) {
  auto params = net.params();
  if (params.size() != c.tensors.size()) {
    throw ArtifactError("model file has " + std::to_string(c.tensors.size()) +
                        " tensors, architecture expects " +
                        std::to_string(params.size()));
  }
  for (auto* p : params) {
    const nn::Tensor<float>& t = c.tensor(p->name);
    if (t.shape() != p->value.shape()) {
      throw ArtifactError("tensor " + p->name + " has shape " +
                          nn::shape_string(t.shape()) + ", expected " +
                          nn::shape_string(p->value.shape()));
    }
    p->value = t;
  }
}

template <typename Net>
Container weights_of(Net& net) {
  Container c;
  for (auto* p : net.params()) c.tensors.emplace_back(p->name, p->value);
  return c;
}

void check_header(const nlohmann::json& m, std::string_view kind) {
  if (m.value("format", "") != kFormat) {
    throw ArtifactError("model manifest is not a stepfx model");
  }
  if (m.value("model", "") != kind) {
    throw ArtifactError("model file holds a " + m.value("model", std::string("?")) +
                        " model, expected " + std::string(kind));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

nlohmann::json CnnConfig::to_json() const {
  return {{"channels", channels}, {"dense1", dense1}, {"dense2", dense2},
          {"dropout", dropout},   {"bands", bands},   {"frames", frames}};
}

CnnConfig CnnConfig::from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.channels = j.at("channels").get<std::vector<int>>();
  c.dense1 = j.at("dense1").get<int>();
  c.dense2 = j.at("dense2").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.bands = j.value("bands", kInputBands);
  c.frames = j.value("frames", kInputFrames);
  return c;
}

nlohmann::json RnnConfig::to_json() const {
  return {{"channels", channels}, {"embedding", embedding}, {"hidden", hidden},
          {"dense", dense},       {"dropout", dropout},     {"bands", bands},
          {"frames", frames}};
}

RnnConfig RnnConfig::from_json(const nlohmann::json& j) {
  RnnConfig c;
  c.channels = j.at("channels").get<std::vector<int>>();
  c.embedding = j.at("embedding").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.dense = j.at("dense").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.bands = j.value("bands", kInputBands);
  c.frames = j.value("frames", kInputFrames);
  return c;
}

nlohmann::json ModelMeta::to_json() const {
  return {{"training", training},
          {"data_fingerprint", data_fingerprint},
          {"seed", seed}};
}

ModelMeta ModelMeta::from_json(const nlohmann::json& j) {
  ModelMeta m;
  m.training = j.value("training", nlohmann::json::object());
  m.data_fingerprint = j.value("data_fingerprint", "");
  m.seed = j.value("seed", std::uint64_t{0});
  return m;
}

// ---------------------------------------------------------------------------
// Heads

const nn::HeadLayout& head_layout(EffectId effect) {
  static const std::array<nn::HeadLayout, kNumEffects> layouts{
      build_layout(EffectId::kCompressor), build_layout(EffectId::kDistortion),
      build_layout(EffectId::kEq), build_layout(EffectId::kPhaser),
      build_layout(EffectId::kReverb)};
  return layouts[static_cast<std::size_t>(rack_index(effect))];
}

std::vector<float> encode_labels(const ParameterVector& params) {
  validate(params);
  const auto& schema = effect_schema(params.effect());
  const auto& layout = head_layout(params.effect());
  std::vector<float> out(static_cast<std::size_t>(nn::head_width(layout)), 0.0f);
  std::size_t h = 0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const ParameterSpec& spec = schema[i];
    const double v = params[i];
    const auto& slot = layout[h];
    if (params.effect() == EffectId::kEq && spec.name == "gain") {
      const bool boost = v >= kGainBoostLo;
      out[static_cast<std::size_t>(slot.offset)] = boost ? 1.0f : 0.0f;
      const double magnitude =
          boost ? (v - kGainBoostLo) / (1.0 - kGainBoostLo) : (kGainCutHi - v) / kGainCutHi;
      out[static_cast<std::size_t>(layout[h + 1].offset)] = static_cast<float>(magnitude);
      h += 2;
    } else if (spec.kind == ParamKind::kCategorical) {
      out[static_cast<std::size_t>(slot.offset) + static_cast<std::size_t>(v)] = 1.0f;
      ++h;
    } else {
      out[static_cast<std::size_t>(slot.offset)] = unit(spec, v);
      ++h;
    }
  }
  return out;
}

ParameterVector decode_heads(EffectId effect, std::span<const float> outputs) {
  const auto& schema = effect_schema(effect);
  const auto& layout = head_layout(effect);
  if (outputs.size() != static_cast<std::size_t>(nn::head_width(layout))) {
    throw ShapeError("decode_heads: expected " +
                     std::to_string(nn::head_width(layout)) + " outputs, got " +
                     std::to_string(outputs.size()));
  }
  std::vector<double> values;
  std::size_t h = 0;
  for (const ParameterSpec& spec : schema) {
    const auto& slot = layout[h];
    const float* out = outputs.data() + slot.offset;
    if (effect == EffectId::kEq && spec.name == "gain") {
      const bool boost = std::isfinite(out[0]) && out[0] >= 0.5f;
      const double m = decode_unit(outputs[static_cast<std::size_t>(layout[h + 1].offset)]);
      values.push_back(boost ? kGainBoostLo + m * (1.0 - kGainBoostLo)
                             : kGainCutHi - m * kGainCutHi);
      h += 2;
    } else if (spec.kind == ParamKind::kCategorical) {
      int best = 0;
      float best_v = -std::numeric_limits<float>::infinity();
      for (int k = 0; k < slot.width; ++k) {
        if (std::isfinite(out[k]) && out[k] > best_v) {
          best_v = out[k];
          best = k;
        }
      }
      values.push_back(best);
      ++h;
    } else {
      values.push_back(from_unit(spec, out[0]));
      ++h;
    }
  }
  ParameterVector pv(effect, std::move(values));
  validate(pv);
  return pv;
}

// ---------------------------------------------------------------------------
// Effect model

nn::Tensor<float> stack_pair(const Eigen::MatrixXf& target_unit,
                             const Eigen::MatrixXf& current_unit) {
  if (target_unit.rows() != current_unit.rows() ||
      target_unit.cols() != current_unit.cols()) {
    throw ShapeError("stack_pair: target and current spectrograms differ in shape");
  }
  const int h = static_cast<int>(target_unit.rows());
  const int w = static_cast<int>(target_unit.cols());
  nn::Tensor<float> x({1, kInputChannels, h, w});
  x.mat(h, w) = target_unit;
  nn::MatrixMap<float>(x.data() + static_cast<std::ptrdiff_t>(h) * w, h, w) = current_unit;
  return x;
}

EffectModel::EffectModel(EffectId effect, CnnConfig config, std::uint64_t init_seed)
    : effect_(effect),
      config_(std::move(config)),
      net_(build_effect_net<float>(effect, config_)) {
  Rng rng(init_seed);
  net_->init(rng);
}

nn::Tensor<float> EffectModel::infer(const nn::Tensor<float>& batch) const {
  nn::expect_shape("effect model input", batch.shape(),
                   {-1, kInputChannels, config_.bands, config_.frames});
  return net_->infer(batch);
}

std::vector<ParameterVector> EffectModel::predict_batch(const nn::Tensor<float>& batch) const {
  const nn::Tensor<float> out = infer(batch);
  const int width = out.dim(1);
  std::vector<ParameterVector> result;
  result.reserve(static_cast<std::size_t>(out.dim(0)));
  for (int b = 0; b < out.dim(0); ++b) {
    result.push_back(decode_heads(
        effect_, std::span<const float>(out.data() + static_cast<std::ptrdiff_t>(b) * width,
                                        static_cast<std::size_t>(width))));
  }
  return result;
}

ParameterVector EffectModel::predict(const Eigen::MatrixXf& target_unit,
                                     const Eigen::MatrixXf& current_unit) const {
  if (target_unit.rows() != config_.bands || target_unit.cols() != config_.frames) {
    throw ShapeError("predict: expected " + std::to_string(config_.bands) + "x" +
                     std::to_string(config_.frames) + " spectrograms, got " +
                     std::to_string(target_unit.rows()) + "x" +
                     std::to_string(target_unit.cols()));
  }
  return predict_batch(stack_pair(target_unit, current_unit)).front();
}

nlohmann::json EffectModel::architecture() const { return net_->describe(); }

// ---------------------------------------------------------------------------
// Next-effect model

NextEffectModel::NextEffectModel(RnnConfig config, std::uint64_t init_seed)
    : net_(std::make_unique<NextEffectNet<float>>(config)) {
  Rng rng(init_seed);
  net_->init(rng);
}

nn::Tensor<float> NextEffectModel::infer(const nn::Tensor<float>& specs,
                                         const nn::Tensor<float>& used) const {
  return net_->infer(specs, used);
}

std::pair<nn::Tensor<float>, nn::Tensor<float>> stack_sequence(
    std::span<const SequenceStep> steps, int bands, int frames) {
  if (steps.empty()) throw ValidationError("sequence", "needs at least one step");
  const int t_len = static_cast<int>(steps.size());
  nn::Tensor<float> specs({1, t_len, kInputChannels, bands, frames});
  nn::Tensor<float> used({1, t_len, kNumEffects});
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(bands) * frames;
  for (int t = 0; t < t_len; ++t) {
    const SequenceStep& s = steps[static_cast<std::size_t>(t)];
    if (!s.target_unit || !s.current_unit) {
      throw ValidationError("sequence", "step is missing a spectrogram");
    }
    for (int c = 0; c < kInputChannels; ++c) {
      const Eigen::MatrixXf& m = c == 0 ? *s.target_unit : *s.current_unit;
      if (m.rows() != bands || m.cols() != frames) {
        throw ShapeError("sequence step spectrogram has shape " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
      }
      nn::MatrixMap<float>(specs.data() + (t * kInputChannels + c) * plane, bands,
                           frames) = m;
    }
    for (int e = 0; e < kNumEffects; ++e) {
      used[t * kNumEffects + e] = s.used[static_cast<std::size_t>(e)] ? 1.0f : 0.0f;
    }
  }
  return {std::move(specs), std::move(used)};
}

std::array<double, kNumEffects> NextEffectModel::predict(
    std::span<const SequenceStep> steps) const {
  const auto [specs, used] = stack_sequence(steps, config().bands, config().frames);
  const nn::Tensor<float> p = infer(specs, used);
  std::array<double, kNumEffects> out{};
  for (int e = 0; e < kNumEffects; ++e) out[static_cast<std::size_t>(e)] = p[e];
  return out;
}

nlohmann::json NextEffectModel::architecture() const { return net_->describe(); }

// ---------------------------------------------------------------------------
// Persistence

void save_model(const std::filesystem::path& path, const EffectModel& model) {
  auto& m = const_cast<EffectModel&>(model);
  Container c = weights_of(m.net());
  c.manifest = {{"format", kFormat},
                {"model", kEffectKind},
                {"effect", to_string(model.effect())},
                {"config", model.config().to_json()},
                {"architecture", model.architecture()},
                {"meta", model.meta.to_json()}};
  save_container(path, c);
}

void save_model(const std::filesystem::path& path, const NextEffectModel& model) {
  auto& m = const_cast<NextEffectModel&>(model);
  Container c = weights_of(m.net());
  c.manifest = {{"format", kFormat},
                {"model", kRnnKind},
                {"config", model.config().to_json()},
                {"architecture", model.architecture()},
                {"meta", model.meta.to_json()}};
  save_container(path, c);
}

EffectModel load_effect_model(const std::filesystem::path& path,
                              std::optional<EffectId> expected) {
  const Container c = load_container(path);
  check_header(c.manifest, kEffectKind);
  EffectId effect;
  CnnConfig config;
  try {
    effect = parse_effect(c.manifest.at("effect").get<std::string>());
    config = CnnConfig::from_json(c.manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("model manifest malformed: ") + e.what());
  } catch (const ValidationError& e) {
    throw ArtifactError(std::string("model manifest malformed: ") + e.what());
  }
  if (expected && *expected != effect) {
    throw ArtifactError("effect mismatch: " + path.string() + " holds a " +
                        std::string(to_string(effect)) + " model, expected " +
                        std::string(to_string(*expected)));
  }
  EffectModel model(effect, config);
  assign_weights(model.net(), c);
  model.meta = ModelMeta::from_json(c.manifest.value("meta", nlohmann::json::object()));
  return model;
}

NextEffectModel load_rnn_model(const std::filesystem::path& path) {
  const Container c = load_container(path);
  check_header(c.manifest, kRnnKind);
  RnnConfig config;
  try {
    config = RnnConfig::from_json(c.manifest.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("model manifest malformed: ") + e.what());
  }
  NextEffectModel model(config);
  assign_weights(model.net(), c);
  model.meta = ModelMeta::from_json(c.manifest.value("meta", nlohmann::json::object()));
  return model;
}

std::filesystem::path effect_model_path(const std::filesystem::path& dir, EffectId e) {
  return dir / (std::string(to_string(e)) + ".stepfx");
}

std::filesystem::path rnn_model_path(const std::filesystem::path& dir) {
  return dir / "next_effect.stepfx";
}

}  // namespace stepfx
