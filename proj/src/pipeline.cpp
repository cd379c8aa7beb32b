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

#include "stepfx/pipeline.hpp"

#include <algorithm>

#include "stepfx/error.hpp"
#include "stepfx/random.hpp"

namespace stepfx {
namespace {

enum : int { kPartTrain = 0, kPartVal = 1, kPartTest = 2 };

nlohmann::json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"learning_rate", t.learning_rate}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.batch_size = j.at("batch_size").get<int>();
  t.max_epochs = j.at("max_epochs").get<int>();
  t.patience = j.at("patience").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  return t;
}

// Partial Fisher-Yates, then back to original order.
template <typename T>
std::vector<T> subsample(std::vector<T> items, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || items.size() <= cap) return items;
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(cap);
  for (const std::size_t i : idx) out.push_back(std::move(items[i]));
  return out;
}

int part_code(SplitPart p) {
  switch (p) {
    case SplitPart::kTrain: return kPartTrain;
    case SplitPart::kVal: return kPartVal;
    case SplitPart::kTest: return kPartTest;
  }
  return kPartTrain;
}

std::uint64_t effect_stream(std::uint64_t base, EffectId e) {
  return base + static_cast<std::uint64_t>(rack_index(e));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

RunConfig::RunConfig() {
  cnn_train.batch_size = 128;
  rnn_train.batch_size = 32;
}

nlohmann::json RunConfig::to_json() const {
  return {{"group", to_string(group)},
          {"chains", chains},
          {"seed", seed},
          {"jobs", jobs},
          {"val_fraction", val_fraction},
          {"test_fraction", test_fraction},
          {"cnn", cnn.to_json()},
          {"rnn", rnn.to_json()},
          {"cnn_train", train_json(cnn_train)},
          {"rnn_train", train_json(rnn_train)},
          {"pair_cap", pair_cap},
          {"policy", to_string(policy)},
          {"max_steps", max_steps},
          {"epsilon", epsilon},
          {"eval_cases", eval_cases},
          {"eval_pairs", eval_pairs}};
}

RunConfig RunConfig::from_json(const nlohmann::json& patch, const RunConfig& base) {
  if (!patch.is_object()) throw ValidationError("config", "must be a JSON object");
  nlohmann::json j = base.to_json();
  for (const auto& [k, v] : patch.items()) {
    if (!j.contains(k)) throw ValidationError(k, "unknown config key");
    if (j.at(k).is_object()) {
      if (!v.is_object()) throw ValidationError(k, "must be an object");
      for (const auto& [sub, sv] : v.items()) {
        if (!j.at(k).contains(sub)) throw ValidationError(k + "." + sub, "unknown config key");
      }
    }
  }
  j.merge_patch(patch);
  RunConfig c;
  try {
    c.group = parse_preset_group(j.at("group").get<std::string>());
    c.chains = j.at("chains").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.jobs = j.at("jobs").get<int>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.test_fraction = j.at("test_fraction").get<double>();
    c.cnn = CnnConfig::from_json(j.at("cnn"));
    c.rnn = RnnConfig::from_json(j.at("rnn"));
    c.cnn_train = train_from_json(j.at("cnn_train"));
    c.rnn_train = train_from_json(j.at("rnn_train"));
    c.pair_cap = j.at("pair_cap").get<std::size_t>();
    c.policy = parse_policy(j.at("policy").get<std::string>());
    c.max_steps = j.at("max_steps").get<int>();
    c.epsilon = j.at("epsilon").get<double>();
    c.eval_cases = j.at("eval_cases").get<std::size_t>();
    c.eval_pairs = j.at("eval_pairs").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config", std::string("wrong value type: ") + e.what());
  }
  if (c.chains < 1) throw ValidationError("chains", "must be at least 1");
  if (c.jobs < 1) throw ValidationError("jobs", "must be at least 1");
  if (c.max_steps < 1 || c.max_steps > kMaxSteps) {
    throw ValidationError("max_steps", "must be in 1..5");
  }
  for (const auto* t : {&c.cnn_train, &c.rnn_train}) {
    if (t->batch_size < 1 || t->max_epochs < 1 || t->patience < 1 || !(t->learning_rate > 0)) {
      throw ValidationError("train", "batch_size, max_epochs, patience and learning_rate must be positive");
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const RunConfig& base) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)), base);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config", path.string() + ": " + e.what());
  }
}

RunConfig RunConfig::profile(std::string_view name) {
  if (name == "full") return RunConfig{};
  if (name != "desk") throw ValidationError("profile", "unknown profile '" + std::string(name) + "'");
  return from_json({{"cnn", {{"channels", {16, 32, 64, 64}}, {"dense1", 128}, {"dense2", 64},
                             {"dropout", 0.3}}},
                    {"rnn", {{"channels", {8, 16, 32}}, {"embedding", 64}, {"hidden", 64},
                             {"dense", 64}, {"dropout", 0.3}}},
                    {"cnn_train", {{"max_epochs", 25}, {"patience", 5}, {"batch_size", 32}}},
                    {"rnn_train", {{"max_epochs", 25}, {"patience", 5}, {"batch_size", 32}}},
                    {"pair_cap", 3000}});
}

// ---------------------------------------------------------------------------
// Workspace

Workspace::Workspace(std::filesystem::path data_dir, const RunConfig& config)
    : dir_(std::move(data_dir)), config_(config), manifest_(read_manifest(dir_)) {
  std::vector<std::uint64_t> chains(static_cast<std::size_t>(manifest_.chains));
  for (std::size_t i = 0; i < chains.size(); ++i) chains[i] = i;
  // The split belongs to the dataset: it depends on the dataset seed only.
  split_ = split_dataset(chains, config.val_fraction, config.test_fraction,
                         derive_seed(manifest_.seed, 0x5e1));
  part_of_.assign(chains.size(), kPartTrain);
  for (const auto i : split_.val) part_of_[i] = kPartVal;
  for (const auto i : split_.test) part_of_[i] = kPartTest;
  std::string bytes = read_file(dir_ / "manifest.jsonl");
  for (const int p : part_of_) bytes.push_back(static_cast<char>('0' + p));
  fingerprint_ = stepfx::fingerprint(bytes);
}

const FeatureStore& Workspace::unit() {
  if (!unit_) {
    unit_ = load_feature_store(dir_, manifest_);
    to_unit_range(*unit_);
  }
  return *unit_;
}

std::vector<std::uint64_t> Workspace::chains(SplitPart part) const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < part_of_.size(); ++i) {
    if (part_of_[i] == part_code(part)) out.push_back(i);
  }
  return out;
}

bool Workspace::in(SplitPart part, std::uint64_t chain) const {
  return chain < part_of_.size() && part_of_[chain] == part_code(part);
}

std::vector<PairExample> Workspace::pairs(EffectId effect, SplitPart part,
                                          std::size_t cap) const {
  const PairSet all = build_effect_pairs(manifest_, effect, 0, 0);
  std::vector<PairExample> kept;
  for (const auto& p : all.pairs) {
    if (in(part, p.chain_index)) kept.push_back(p);
  }
  return subsample(std::move(kept), cap,
                   derive_seed(manifest_.seed, effect_stream(500 + 10 * part_code(part), effect)));
}

std::vector<SequenceExample> Workspace::sequences(SplitPart part) {
  if (!sequences_) sequences_ = build_rnn_sequences(manifest_, unit(), config_.policy, manifest_.seed);
  std::vector<SequenceExample> out;
  for (const auto& s : *sequences_) {
    if (in(part, s.chain_index)) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

TrainedEffect train_effect(Workspace& ws, EffectId effect, const RunConfig& config) {
  TrainedEffect out;
  out.model = std::make_shared<EffectModel>(effect, config.cnn,
                                            derive_seed(config.seed, effect_stream(200, effect)));
  const auto train = ws.pairs(effect, SplitPart::kTrain, config.pair_cap);
  const auto val = ws.pairs(effect, SplitPart::kVal, config.pair_cap / 5);
  out.train_pairs = train.size();
  out.val_pairs = val.size();
  TrainConfig t = config.cnn_train;
  t.seed = derive_seed(config.seed, effect_stream(300, effect));
  out.history = train_effect_model(*out.model, ws.unit(), train, val, t);
  out.model->meta.seed = config.seed;
  out.model->meta.data_fingerprint = ws.fingerprint();
  out.model->meta.training = {{"config", train_json(t)},
                              {"pair_cap", config.pair_cap},
                              {"train_pairs", train.size()},
                              {"val_pairs", val.size()},
                              {"history", out.history.summary()}};
  return out;
}

TrainedRnn train_next_effect(Workspace& ws, const RunConfig& config) {
  TrainedRnn out;
  out.model = std::make_shared<NextEffectModel>(config.rnn, derive_seed(config.seed, 250));
  const auto train = ws.sequences(SplitPart::kTrain);
  const auto val = ws.sequences(SplitPart::kVal);
  TrainConfig t = config.rnn_train;
  t.seed = derive_seed(config.seed, 350);
  out.history = train_rnn(*out.model, ws.unit(), train, val, t);
  out.val_score = evaluate_sequences(*out.model, ws.unit(), val);
  out.model->meta.seed = config.seed;
  out.model->meta.data_fingerprint = ws.fingerprint();
  out.model->meta.training = {{"config", train_json(t)},
                              {"policy", to_string(config.policy)},
                              {"train_sequences", train.size()},
                              {"val_sequences", val.size()},
                              {"val_accuracy", out.val_score.accuracy},
                              {"history", out.history.summary()}};
  return out;
}

void write_history(const std::filesystem::path& models_dir, const std::string& name,
                   const TrainingHistory& history, const nlohmann::json& extra) {
  write_file(models_dir / (name + ".history.csv"), history.to_csv());
  nlohmann::json summary = history.summary();
  for (const auto& [k, v] : extra.items()) summary[k] = v;
  write_file(models_dir / (name + ".summary.json"), summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Evaluation

PredictorKind parse_predictor(std::string_view name) {
  if (name == "model") return PredictorKind::kModel;
  if (name == "oracle") return PredictorKind::kOracle;
  if (name == "untrained") return PredictorKind::kUntrained;
  throw ValidationError("predictor", "expected model, oracle or untrained");
}

EffectEvalReport eval_effects(Workspace& ws, const ModelRegistry* models, PredictorKind kind,
                              const RunConfig& config) {
  EffectEvalReport rep;
  rep.group = std::string(to_string(ws.manifest().group));
  rep.predictor = kind == PredictorKind::kModel    ? "model"
                  : kind == PredictorKind::kOracle ? "oracle"
                                                   : "untrained";
  for (const EffectId e : kAllEffects) {
    const auto pairs = ws.pairs(e, SplitPart::kTest, config.eval_pairs);
    std::optional<EffectModel> untrained;
    ParamPredictor predictor;
    switch (kind) {
      case PredictorKind::kModel:
        if (!models) throw ArtifactError("effect evaluation needs trained models");
        predictor = model_predictor(models->effect(e));
        break;
      case PredictorKind::kOracle:
        predictor = oracle_predictor();
        break;
      case PredictorKind::kUntrained:
        untrained.emplace(e, config.cnn, derive_seed(config.seed, effect_stream(900, e)));
        predictor = model_predictor(*untrained);
        break;
    }
    rep.rows.push_back(evaluate_effect(e, ws.manifest(), ws.unit(), pairs, predictor));
  }
  return rep;
}

RnnEvalReport eval_rnn(Workspace& ws, const NextEffectModel& model, const RunConfig&) {
  return evaluate_rnn(model, ws.unit(), ws.sequences(SplitPart::kTest),
                      std::string(to_string(ws.manifest().group)));
}

SystemReport eval_system(Workspace& ws, std::shared_ptr<const ModelRegistry> models,
                         const RunConfig& config) {
  const auto chains = ws.chains(SplitPart::kTest);
  const auto cases = build_eval_cases(ws.manifest(), chains, config.eval_cases);
  return evaluate_system(std::move(models), cases, std::string(to_string(ws.manifest().group)),
                         config.max_steps, config.epsilon);
}

}  // namespace stepfx
