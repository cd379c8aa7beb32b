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

#include <cmath>

#include "doctest.h"
#include "stepfx/error.hpp"
#include "stepfx/random.hpp"
#include "stepfx/training.hpp"

using namespace stepfx;

namespace {

CnnConfig tiny_cnn() {
  CnnConfig c;
  c.channels = {2, 4};
  c.dense1 = 8;
  c.dense2 = 8;
  c.dropout = 0.1;
  return c;
}

RnnConfig tiny_rnn() {
  RnnConfig c;
  c.channels = {2, 2, 4};
  c.embedding = 8;
  c.hidden = 6;
  c.dense = 8;
  c.dropout = 0.1;
  return c;
}

/// Random unit-range spectrograms; clip i is brighter for larger labels so
/// there is something to learn.
FeatureStore random_store(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  FeatureStore s;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixXf m(kInputBands, kInputFrames);
    for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = static_cast<float>(rng.uniform());
    s.push_back(m);
  }
  return s;
}

std::vector<PairExample> random_pairs(EffectId e, std::size_t n, std::size_t clips,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PairExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    PairExample p;
    p.current = rng.index(clips);
    p.target = rng.index(clips);
    p.params = sample_parameters(e, seed * 1000 + i);
    p.chain_index = i;
    out.push_back(p);
  }
  return out;
}

std::vector<SequenceExample> random_sequences(std::size_t n, std::size_t clips, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SequenceExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SequenceExample s;
    s.target = rng.index(clips);
    const std::size_t len = 1 + i % 3;
    std::array<bool, kNumEffects> used{};
    for (std::size_t k = 0; k < len; ++k) {
      s.states.push_back(rng.index(clips));
      s.used.push_back(used);
      if (k + 1 < len) used[k] = true;
    }
    s.label = kAllEffects[len - 1 + rng.index(kNumEffects - len + 1)];
    s.chain_index = i;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("to_unit_range maps the dB floor and ceiling") {
  FeatureStore s{Eigen::MatrixXf::Constant(2, 2, -80.0f), Eigen::MatrixXf::Constant(2, 2, 0.0f)};
  to_unit_range(s);
  CHECK(s[0](0, 0) == 0.0f);
  CHECK(s[1](1, 1) == 1.0f);
}

TEST_CASE("pair batches stack target then current") {
  const FeatureStore unit = random_store(4, 1);
  const auto pairs = random_pairs(EffectId::kEq, 3, 4, 2);
  const std::vector<std::size_t> idx{2, 0};
  const auto x = pair_inputs(unit, pairs, idx);
  CHECK(x.shape() == nn::Shape{2, 2, kInputBands, kInputFrames});
  const Eigen::Index plane = kInputBands * kInputFrames;
  CHECK(x[0] == unit[pairs[2].target](0, 0));
  CHECK(x[plane] == unit[pairs[2].current](0, 0));
  const auto y = pair_targets(EffectId::kEq, pairs, idx);
  const auto enc = encode_labels(pairs[2].params);
  for (std::size_t k = 0; k < enc.size(); ++k) CHECK(y[static_cast<Eigen::Index>(k)] == enc[k]);
}

TEST_CASE("effect training restores the best validation weights") {
  const FeatureStore unit = random_store(24, 3);
  const auto train = random_pairs(EffectId::kCompressor, 32, 24, 4);
  const auto val = random_pairs(EffectId::kCompressor, 16, 24, 5);
  EffectModel m(EffectId::kCompressor, tiny_cnn(), 7);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 8;
  cfg.patience = 2;
  cfg.learning_rate = 3e-3;
  cfg.seed = 11;
  int calls = 0;
  cfg.on_epoch = [&](const EpochRecord&) { ++calls; };
  const TrainingHistory h = train_effect_model(m, unit, train, val, cfg);
  CHECK(calls == static_cast<int>(h.epochs.size()));
  REQUIRE(h.best_epoch >= 1);
  double best = 1e300;
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  CHECK(h.best_val_loss == best);
  CHECK(h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].val_loss == best);
  // The kept weights are the best epoch's.
  CHECK(evaluate_pairs(m, unit, val).total == doctest::Approx(best).epsilon(1e-5));
  CHECK((h.stop_reason == "patience" || h.stop_reason == "max_epochs"));
  if (h.stop_reason == "patience") {
    CHECK(static_cast<int>(h.epochs.size()) == h.best_epoch + cfg.patience);
  }
  CHECK(h.to_csv().rfind(TrainingHistory::kCsvHeader, 0) == 0);
  CHECK(h.summary().at("best_epoch") == h.best_epoch);
}

TEST_CASE("effect training is deterministic per seed") {
  const FeatureStore unit = random_store(12, 6);
  const auto train = random_pairs(EffectId::kDistortion, 20, 12, 7);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.seed = 5;
  EffectModel a(EffectId::kDistortion, tiny_cnn(), 1), b(EffectId::kDistortion, tiny_cnn(), 1);
  const auto ha = train_effect_model(a, unit, train, {}, cfg);
  const auto hb = train_effect_model(b, unit, train, {}, cfg);
  REQUIRE(ha.epochs.size() == hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) {
    CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
    CHECK(std::isnan(ha.epochs[i].val_loss));
  }
  const auto x = pair_inputs(unit, train, std::vector<std::size_t>{0, 1});
  CHECK(a.infer(x).vec() == b.infer(x).vec());
}

TEST_CASE("target loss stops training early") {
  const FeatureStore unit = random_store(8, 8);
  const auto train = random_pairs(EffectId::kReverb, 8, 8, 9);
  EffectModel m(EffectId::kReverb, tiny_cnn(), 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 50;
  cfg.seed = 1;
  cfg.target_train_loss = 1e9;  // met after the first epoch
  const auto h = train_effect_model(m, unit, train, {}, cfg);
  CHECK(h.stop_reason == "target");
  CHECK(h.epochs.size() == 1);
}

TEST_CASE("bad training inputs are rejected") {
  const FeatureStore unit = random_store(4, 1);
  EffectModel m(EffectId::kEq, tiny_cnn(), 2);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_effect_model(m, unit, {}, {}, cfg), ValidationError);
  const auto wrong = random_pairs(EffectId::kPhaser, 4, 4, 1);
  CHECK_THROWS_AS(train_effect_model(m, unit, wrong, {}, cfg), ValidationError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_effect_model(m, unit, random_pairs(EffectId::kEq, 4, 4, 1), {}, cfg),
                  ValidationError);
}

TEST_CASE("rnn training and sequence scoring") {
  const FeatureStore unit = random_store(10, 12);
  const auto train = random_sequences(18, 10, 13);
  const auto val = random_sequences(9, 10, 14);
  NextEffectModel m(tiny_rnn(), 3);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  cfg.seed = 2;
  const auto h = train_rnn(m, unit, train, val, cfg);
  CHECK(h.epochs.size() == 3);
  for (const auto& e : h.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK((e.val_accuracy >= 0.0 && e.val_accuracy <= 1.0));
  }
  const SequenceScore s = evaluate_sequences(m, unit, val);
  REQUIRE(s.accuracy_by_step.size() == 5);
  // Pooled accuracy is the count-weighted mean of per-step accuracies.
  double hits = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    if (s.count_by_step[k] == 0) {
      CHECK(std::isnan(s.accuracy_by_step[k]));
      continue;
    }
    hits += s.accuracy_by_step[k] * static_cast<double>(s.count_by_step[k]);
    n += s.count_by_step[k];
  }
  CHECK(n == val.size());
  CHECK(s.accuracy == doctest::Approx(hits / n).epsilon(1e-12));
  CHECK(s.count_by_step[0] == 3);
  CHECK(s.count_by_step[3] == 0);

  // Same seed, same result.
  NextEffectModel m2(tiny_rnn(), 3);
  const auto h2 = train_rnn(m2, unit, train, val, cfg);
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    CHECK(h.epochs[i].train_loss == h2.epochs[i].train_loss);
  }
}
