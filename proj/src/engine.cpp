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

#include "stepfx/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "stepfx/error.hpp"

namespace stepfx {
namespace {

Eigen::MatrixXf mel_db_of(const AudioBuffer& a) { return mel_spectrogram_db<float>(a); }

void check_clip(const char* field, const AudioBuffer& a) {
  if (a.sample_rate != kSampleRate) {
    throw ValidationError(field, "sample rate must be " + std::to_string(kSampleRate) + " Hz");
  }
  if (a.samples.size() != kClipLength) {
    throw ValidationError(field, "clip must be exactly " + std::to_string(kClipLength) +
                                     " samples");
  }
  if (!a.all_finite()) throw ValidationError(field, "audio contains non-finite samples");
}

std::string format_value(const ParameterSpec& spec, double v) {
  if (spec.kind == ParamKind::kCategorical) {
    const auto k = static_cast<std::size_t>(std::lround(v));
    if (k < spec.class_tokens.size()) return spec.class_tokens[k];
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Registry

std::shared_ptr<const ModelRegistry> ModelRegistry::load(const std::filesystem::path& dir) {
  auto reg = std::make_shared<ModelRegistry>();
  for (const EffectId e : kAllEffects) {
    reg->set(std::make_shared<const EffectModel>(load_effect_model(effect_model_path(dir, e), e)));
  }
  reg->set(std::make_shared<const NextEffectModel>(load_rnn_model(rnn_model_path(dir))));
  return reg;
}

void ModelRegistry::set(std::shared_ptr<const EffectModel> model) {
  const EffectId e = model->effect();
  effects_[static_cast<std::size_t>(rack_index(e))] = std::move(model);
}

void ModelRegistry::set(std::shared_ptr<const NextEffectModel> model) { rnn_ = std::move(model); }

const EffectModel& ModelRegistry::effect(EffectId e) const {
  const auto& m = effects_[static_cast<std::size_t>(rack_index(e))];
  if (!m) throw ArtifactError("no model loaded for effect " + std::string(to_string(e)));
  return *m;
}

const NextEffectModel& ModelRegistry::next_effect() const {
  if (!rnn_) throw ArtifactError("no next-effect model loaded");
  return *rnn_;
}

bool ModelRegistry::complete() const noexcept {
  for (const auto& m : effects_) {
    if (!m) return false;
  }
  return rnn_ != nullptr;
}

// ---------------------------------------------------------------------------
// Records

nlohmann::json metrics_json(const MetricReport& m) {
  return {{"mse", m.mse}, {"mae", m.mae}, {"mfcc", m.mfcc_dist}, {"lsd", m.lsd}};
}

namespace {

nlohmann::json params_json(const ParameterVector& pv) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : pv.to_map()) j[k] = v;
  return j;
}

nlohmann::json probs_json(const Probabilities& p) {
  nlohmann::json j = nlohmann::json::object();
  for (const EffectId e : kAllEffects) j[std::string(to_string(e))] = p[rack_index(e)];
  return j;
}

}  // namespace

nlohmann::json StepRecord::to_json() const {
  return {{"index", index},
          {"effect", to_string(effect)},
          {"params", params_json(params)},
          {"probabilities", probs_json(probabilities)},
          {"before", metrics_json(before)},
          {"after", metrics_json(after)},
          {"delta", metrics_json(delta)},
          {"marginal", marginal},
          {"snapshot", snapshot}};
}

std::string StepRecord::plan_line() const {
  std::ostringstream out;
  out << "Step " << index << ": " << to_string(effect);
  const auto& schema = effect_schema(effect);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    out << ", " << schema[i].name << "=" << format_value(schema[i], params[i]);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, ", MAE %.3f->%.3f", before.mae, after.mae);
  out << buf;
  if (marginal) out << " (marginal)";
  return out.str();
}

nlohmann::json Suggestion::to_json() const {
  return {{"effect", to_string(effect)},
          {"params", params_json(params)},
          {"probabilities", probs_json(probabilities)}};
}

std::string text_plan(const std::vector<StepRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.plan_line() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Session

SessionState::SessionState(AudioBuffer input, AudioBuffer target,
                           std::shared_ptr<const ModelRegistry> models)
    : target_(std::move(target)), models_(std::move(models)) {
  check_clip("input", input);
  check_clip("target", target_);
  target_features_ = analyze(target_);
  // Model inputs come from the same float pipeline as the training data.
  target_mel_db_ = mel_db_of(target_);
  target_unit_ = normalize_for_model(target_mel_db_);
  push_state(std::move(input));
}

void SessionState::set_epsilon(double epsilon) {
  if (!std::isfinite(epsilon)) throw ValidationError("epsilon", "must be finite");
  epsilon_ = epsilon;
}

void SessionState::push_state(AudioBuffer audio) {
  const ClipFeatures f = analyze(audio);
  metrics_.push_back(compute_metrics(f, target_features_));
  mel_db_.push_back(mel_db_of(audio));
  unit_.push_back(normalize_for_model(mel_db_.back()));
  states_.push_back(std::move(audio));
}

std::array<bool, kNumEffects> SessionState::used() const {
  std::array<bool, kNumEffects> u{};
  for (const auto& r : history_) u[static_cast<std::size_t>(rack_index(r.effect))] = true;
  return u;
}

EffectChain SessionState::chain() const {
  EffectChain c;
  for (const auto& r : history_) c.push_back(r.params);
  return c;
}

const ModelRegistry& SessionState::models() const {
  if (!models_) throw ArtifactError("session has no models loaded");
  return *models_;
}

AudioBuffer SessionState::replay() const { return apply_chain(input(), chain()); }

nlohmann::json SessionState::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& r : history_) steps.push_back(r.to_json());
  nlohmann::json used_list = nlohmann::json::array();
  const auto u = used();
  for (const EffectId e : kAllEffects) {
    if (u[static_cast<std::size_t>(rack_index(e))]) used_list.push_back(to_string(e));
  }
  return {{"steps", steps},
          {"used", used_list},
          {"initial_metrics", metrics_json(metrics_.front())},
          {"metrics", metrics_json(metrics_.back())}};
}

// ---------------------------------------------------------------------------
// Operations

Probabilities next_effect_probabilities(const SessionState& state) {
  const auto u = state.used();
  std::size_t unused = 0;
  for (const bool b : u) unused += b ? 0 : 1;
  if (unused == 0) throw ConflictError("all effects have been used");

  // One RNN step per state so far; state 0 is the input.
  std::vector<SequenceStep> steps(state.state_count());
  std::array<bool, kNumEffects> cum{};
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (k > 0) cum[static_cast<std::size_t>(rack_index(state.history()[k - 1].effect))] = true;
    steps[k].target_unit = &state.target_unit();
    steps[k].current_unit = &state.state_unit(k);
    steps[k].used = cum;
  }
  const auto raw = state.models().next_effect().predict(steps);

  Probabilities p{};
  double sum = 0.0;
  for (std::size_t e = 0; e < p.size(); ++e) {
    p[e] = u[e] || !std::isfinite(raw[e]) ? 0.0 : raw[e];
    sum += p[e];
  }
  for (std::size_t e = 0; e < p.size(); ++e) {
    if (sum > 0.0) {
      p[e] /= sum;
    } else {
      p[e] = u[e] ? 0.0 : 1.0 / static_cast<double>(unused);
    }
  }
  return p;
}

Suggestion suggest_step(const SessionState& state) {
  Suggestion s;
  s.probabilities = next_effect_probabilities(state);
  const auto u = state.used();
  int best = -1;
  for (int e = 0; e < kNumEffects; ++e) {
    if (u[static_cast<std::size_t>(e)]) continue;
    if (best < 0 || s.probabilities[static_cast<std::size_t>(e)] >
                        s.probabilities[static_cast<std::size_t>(best)]) {
      best = e;
    }
  }
  s.effect = kAllEffects[static_cast<std::size_t>(best)];
  s.params = state.models().effect(s.effect).predict(
      state.target_unit(), state.state_unit(state.state_count() - 1));
  return s;
}

StepRecord apply_step(SessionState& state, const ParameterVector& params,
                      std::optional<Probabilities> probabilities) {
  validate(params);
  const EffectId e = params.effect();
  if (state.used()[static_cast<std::size_t>(rack_index(e))]) {
    throw ConflictError("effect " + std::string(to_string(e)) +
                        " has already been applied in this session");
  }
  if (probabilities) {
    double sum = 0.0;
    for (const double v : *probabilities) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError("probabilities", "must be finite and non-negative");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("probabilities", "must sum to 1");
    }
  }
  const Probabilities probs =
      probabilities ? *probabilities : next_effect_probabilities(state);

  StepRecord r;
  r.index = static_cast<int>(state.history_.size()) + 1;
  r.effect = e;
  r.params = params;
  r.probabilities = probs;
  r.before = state.metrics();
  state.push_state(apply_effect(state.current(), params));
  r.after = state.metrics();
  r.delta = r.after - r.before;
  r.marginal = r.before.mae - r.after.mae < state.epsilon_;
  r.snapshot = r.index;
  state.history_.push_back(r);
  return r;
}

void undo_step(SessionState& state) {
  if (state.history_.empty()) throw ConflictError("no step to undo");
  state.history_.pop_back();
  // Replay from the input rather than reusing the cached state, so the
  // result is by construction apply_chain(input, history).
  AudioBuffer replayed = state.replay();
  for (int i = 0; i < 2; ++i) {
    state.states_.pop_back();
    state.mel_db_.pop_back();
    state.unit_.pop_back();
    state.metrics_.pop_back();
  }
  state.push_state(std::move(replayed));
}

std::vector<StepRecord> run_full(SessionState& state, int max_steps) {
  if (max_steps < 1) throw ValidationError("max_steps", "must be at least 1");
  std::vector<StepRecord> out;
  for (int i = 0; i < max_steps; ++i) {
    const auto u = state.used();
    if (std::all_of(u.begin(), u.end(), [](bool b) { return b; })) break;
    const Suggestion s = suggest_step(state);
    out.push_back(apply_step(state, s.params, s.probabilities));
    if (out.back().marginal) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

void save_session(const std::filesystem::path& dir, const SessionState& state) {
  write_wav(dir / "input.wav", state.input());
  write_wav(dir / "target.wav", state.target());
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& r : state.history()) {
    nlohmann::json probs = nlohmann::json::array();
    for (const double p : r.probabilities) probs.push_back(p);
    steps.push_back({{"effect", to_string(r.effect)},
                     {"params", params_json(r.params)},
                     {"probabilities", probs}});
  }
  const nlohmann::json j = {{"format", "stepfx-session"},
                            {"version", 1},
                            {"epsilon", state.epsilon()},
                            {"steps", steps}};
  write_file(dir / "session.json", j.dump(2) + "\n");
}

SessionState load_session(const std::filesystem::path& dir,
                          std::shared_ptr<const ModelRegistry> models) {
  SessionState s(read_wav(dir / "input.wav"), read_wav(dir / "target.wav"), std::move(models));
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "session.json"));
    if (j.value("format", "") != "stepfx-session" || j.value("version", 0) != 1) {
      throw ArtifactError(dir.string() + ": not a stepfx session");
    }
    s.set_epsilon(j.at("epsilon").get<double>());
    for (const auto& step : j.at("steps")) {
      const EffectId e = parse_effect(step.at("effect").get<std::string>());
      const auto pv = ParameterVector::from_map(
          e, step.at("params").get<std::map<std::string, double>>());
      Probabilities p{};
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = step.at("probabilities").at(i);
      apply_step(s, pv, p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("malformed session file in " + dir.string() + ": " + e.what());
  }
  return s;
}

}  // namespace stepfx
