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

#include "stepfx/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "stepfx/error.hpp"
#include "stepfx/nn/optim.hpp"

namespace stepfx {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_config(const TrainConfig& c) {
  if (c.batch_size < 1) throw ValidationError("batch_size", "must be at least 1");
  if (c.max_epochs < 1) throw ValidationError("max_epochs", "must be at least 1");
  if (c.patience < 1) throw ValidationError("patience", "must be at least 1");
  if (!(c.learning_rate > 0.0)) throw ValidationError("learning_rate", "must be positive");
}

std::vector<nn::Tensor<float>> snapshot(const nn::ParamList<float>& params) {
  std::vector<nn::Tensor<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

void restore(const nn::ParamList<float>& params, const std::vector<nn::Tensor<float>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& idx, int size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += static_cast<std::size_t>(size)) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(
                                       std::min(idx.size(), i + static_cast<std::size_t>(size))));
  }
  return out;
}

struct ValScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Shared epoch loop. `batches(epoch)` lists the epoch's batches, `step`
// runs one optimizer step and returns the batch loss, `validate` scores
// held-out data and `train_loss` measures the training set in inference
// mode (only called when a target loss is configured).
template <typename Batches, typename Step, typename Validate, typename TrainLoss>
TrainingHistory run_epochs(const nn::ParamList<float>& params, const TrainConfig& cfg,
                           bool has_val, Batches batches, Step step, Validate validate,
                           TrainLoss train_loss) {
  TrainingHistory h;
  h.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<nn::Tensor<float>> best = snapshot(params);
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto list = batches(epoch);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < list.size(); ++b) {
      double loss;
      try {
        loss = step(list[b], epoch);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b + 1));
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b + 1));
      }
      sum += loss * static_cast<double>(list[b].size());
      count += list[b].size();
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = count ? sum / static_cast<double>(count) : kNaN;
    r.val_loss = kNaN;
    r.val_accuracy = kNaN;
    if (has_val) {
      const ValScore v = validate();
      r.val_loss = v.loss;
      r.val_accuracy = v.accuracy;
    }
    const bool target_hit =
        cfg.target_train_loss && train_loss() < *cfg.target_train_loss;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    h.epochs.push_back(r);
    if (cfg.on_epoch) cfg.on_epoch(r);

    const double monitored = has_val ? r.val_loss : r.train_loss;
    if (monitored < h.best_val_loss) {
      h.best_val_loss = monitored;
      h.best_epoch = epoch;
      best = snapshot(params);
      stale = 0;
    } else {
      ++stale;
    }
    if (target_hit) {
      // Keep the weights that met the target.
      h.best_epoch = epoch;
      h.best_val_loss = monitored;
      h.stop_reason = "target";
      return h;
    }
    if (stale >= cfg.patience) {
      h.stop_reason = "patience";
      restore(params, best);
      return h;
    }
  }
  h.stop_reason = "max_epochs";
  restore(params, best);
  return h;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

void to_unit_range(FeatureStore& store) {
  for (auto& m : store) m = normalize_for_model(m);
}

std::string TrainingHistory::to_csv() const {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  for (const auto& e : epochs) {
    out << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_accuracy
        << "," << e.seconds << "\n";
  }
  return out.str();
}

nlohmann::json TrainingHistory::summary() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json j = {{"epochs", epochs.size()},
                      {"best_epoch", best_epoch},
                      {"best_monitored_loss", num(best_val_loss)},
                      {"stop_reason", stop_reason}};
  if (!epochs.empty()) {
    j["final_train_loss"] = num(epochs.back().train_loss);
    j["final_val_loss"] = num(epochs.back().val_loss);
  }
  return j;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"batch_size", batch_size},
                      {"max_epochs", max_epochs},
                      {"patience", patience},
                      {"learning_rate", learning_rate},
                      {"seed", seed}};
  if (target_train_loss) j["target_train_loss"] = *target_train_loss;
  return j;
}

// ---------------------------------------------------------------------------
// Effect CNN

nn::Tensor<float> pair_inputs(const FeatureStore& unit, std::span<const PairExample> pairs,
                              std::span<const std::size_t> index) {
  if (index.empty()) throw ValidationError("batch", "empty batch");
  const Eigen::MatrixXf& first = unit.at(pairs[index[0]].target);
  const int h = static_cast<int>(first.rows()), w = static_cast<int>(first.cols());
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(h) * w;
  nn::Tensor<float> x({static_cast<int>(index.size()), kInputChannels, h, w});
  for (std::size_t b = 0; b < index.size(); ++b) {
    const PairExample& p = pairs[index[b]];
    float* base = x.data() + static_cast<std::ptrdiff_t>(b) * kInputChannels * plane;
    nn::MatrixMap<float>(base, h, w) = unit.at(p.target);
    nn::MatrixMap<float>(base + plane, h, w) = unit.at(p.current);
  }
  return x;
}

nn::Tensor<float> pair_targets(EffectId effect, std::span<const PairExample> pairs,
                               std::span<const std::size_t> index) {
  const int width = nn::head_width(head_layout(effect));
  nn::Tensor<float> t({static_cast<int>(index.size()), width});
  for (std::size_t b = 0; b < index.size(); ++b) {
    const auto labels = encode_labels(pairs[index[b]].params);
    std::copy(labels.begin(), labels.end(), t.data() + static_cast<std::ptrdiff_t>(b) * width);
  }
  return t;
}

PairLoss evaluate_pairs(const EffectModel& model, const FeatureStore& unit,
                        std::span<const PairExample> pairs, int batch_size) {
  const nn::HeadLayout& layout = head_layout(model.effect());
  PairLoss out;
  out.per_head.assign(layout.size(), 0.0);
  if (pairs.empty()) return out;
  double cont_sq = 0.0;
  std::size_t cont_n = 0;
  for (const auto& idx : chunk(iota(pairs.size()), batch_size)) {
    const nn::Tensor<float> y = model.infer(pair_inputs(unit, pairs, idx));
    const nn::Tensor<float> t = pair_targets(model.effect(), pairs, idx);
    const auto hl = nn::head_loss(y, t, layout);
    const double wgt = static_cast<double>(idx.size());
    for (std::size_t k = 0; k < layout.size(); ++k) out.per_head[k] += hl.per_head[k] * wgt;
    const int width = y.dim(1);
    for (const auto& s : layout) {
      if (s.kind != nn::HeadKind::kContinuous) continue;
      const auto d = (y.mat(y.dim(0), width).middleCols(s.offset, s.width) -
                      t.mat(t.dim(0), width).middleCols(s.offset, s.width))
                         .cast<double>();
      cont_sq += d.squaredNorm();
      cont_n += static_cast<std::size_t>(d.size());
    }
  }
  const double n = static_cast<double>(pairs.size());
  for (auto& v : out.per_head) {
    v /= n;
    out.total += v;
  }
  out.continuous_mse = cont_n ? cont_sq / static_cast<double>(cont_n) : 0.0;
  return out;
}

TrainingHistory train_effect_model(EffectModel& model, const FeatureStore& unit,
                                   std::span<const PairExample> train,
                                   std::span<const PairExample> val,
                                   const TrainConfig& cfg) {
  check_config(cfg);
  if (train.empty()) throw ValidationError("train", "no training pairs");
  for (const auto& p : train) {
    if (p.params.effect() != model.effect()) {
      throw ValidationError("effect", "pair labels are for " +
                                          std::string(to_string(p.params.effect())));
    }
  }
  auto& net = model.net();
  const nn::ParamList<float> params = net.params();
  nn::Adam<float> adam({cfg.learning_rate});
  const nn::HeadLayout& layout = head_layout(model.effect());
  Rng dropout_rng(derive_seed(cfg.seed, 2));

  auto batches = [&](int epoch) {
    auto order = iota(train.size());
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return chunk(order, cfg.batch_size);
  };
  auto step = [&](const std::vector<std::size_t>& idx, int) {
    const nn::Tensor<float> x = pair_inputs(unit, train, idx);
    const nn::Tensor<float> t = pair_targets(model.effect(), train, idx);
    nn::zero_grads(params);
    const nn::Tensor<float> y = net.forward(x, nn::Mode::kTrain, dropout_rng);
    const auto hl = nn::head_loss(y, t, layout);
    if (!std::isfinite(hl.total)) return hl.total;
    net.backward(hl.grad);
    adam.step(params);
    return hl.total;
  };
  auto validate = [&] { return ValScore{evaluate_pairs(model, unit, val).total, kNaN}; };
  auto train_loss = [&] { return evaluate_pairs(model, unit, train).continuous_mse; };
  return run_epochs(params, cfg, !val.empty(), batches, step, validate, train_loss);
}

// ---------------------------------------------------------------------------
// Next-effect RNN

std::pair<nn::Tensor<float>, nn::Tensor<float>> sequence_inputs(
    const FeatureStore& unit, std::span<const SequenceExample> seqs,
    std::span<const std::size_t> index) {
  if (index.empty()) throw ValidationError("batch", "empty batch");
  const int t_len = seqs[index[0]].step();
  const Eigen::MatrixXf& first = unit.at(seqs[index[0]].target);
  const int h = static_cast<int>(first.rows()), w = static_cast<int>(first.cols());
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(h) * w;
  const int b_len = static_cast<int>(index.size());
  nn::Tensor<float> specs({b_len, t_len, kInputChannels, h, w});
  nn::Tensor<float> used({b_len, t_len, kNumEffects});
  for (int b = 0; b < b_len; ++b) {
    const SequenceExample& s = seqs[index[static_cast<std::size_t>(b)]];
    if (s.step() != t_len) throw ShapeError("sequence batch mixes lengths");
    for (int t = 0; t < t_len; ++t) {
      float* base = specs.data() + (static_cast<std::ptrdiff_t>(b) * t_len + t) *
                                       kInputChannels * plane;
      nn::MatrixMap<float>(base, h, w) = unit.at(s.target);
      nn::MatrixMap<float>(base + plane, h, w) = unit.at(s.states[static_cast<std::size_t>(t)]);
      for (int e = 0; e < kNumEffects; ++e) {
        used[(static_cast<Eigen::Index>(b) * t_len + t) * kNumEffects + e] =
            s.used[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)] ? 1.0f : 0.0f;
      }
    }
  }
  return {std::move(specs), std::move(used)};
}

namespace {

nn::Tensor<float> one_hot_labels(std::span<const SequenceExample> seqs,
                                 std::span<const std::size_t> index) {
  nn::Tensor<float> t({static_cast<int>(index.size()), kNumEffects});
  for (std::size_t b = 0; b < index.size(); ++b) {
    t[static_cast<Eigen::Index>(b) * kNumEffects + rack_index(seqs[index[b]].label)] = 1.0f;
  }
  return t;
}

// Example indices grouped by sequence length, ascending.
std::map<int, std::vector<std::size_t>> buckets(std::span<const SequenceExample> seqs) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) out[seqs[i].step()].push_back(i);
  return out;
}

}  // namespace

SequenceScore evaluate_sequences(const NextEffectModel& model, const FeatureStore& unit,
                                 std::span<const SequenceExample> seqs, int batch_size) {
  SequenceScore out;
  out.accuracy_by_step.assign(kNumEffects, kNaN);
  out.count_by_step.assign(kNumEffects, 0);
  if (seqs.empty()) return out;
  std::vector<std::size_t> hits(kNumEffects, 0);
  double loss_sum = 0.0;
  for (const auto& [len, members] : buckets(seqs)) {
    for (const auto& idx : chunk(members, batch_size)) {
      const auto [specs, used] = sequence_inputs(unit, seqs, idx);
      const nn::Tensor<float> p = model.infer(specs, used);
      const nn::Tensor<float> t = one_hot_labels(seqs, idx);
      loss_sum += nn::loss_cce(p, t).value * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        Eigen::Index best = 0;
        p.mat().row(static_cast<Eigen::Index>(b)).maxCoeff(&best);
        const std::size_t k = static_cast<std::size_t>(std::min(len, kNumEffects) - 1);
        ++out.count_by_step[k];
        if (best == rack_index(seqs[idx[b]].label)) ++hits[k];
      }
    }
  }
  std::size_t total_hits = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    total_hits += hits[k];
    if (out.count_by_step[k]) {
      out.accuracy_by_step[k] =
          static_cast<double>(hits[k]) / static_cast<double>(out.count_by_step[k]);
    }
  }
  const double n = static_cast<double>(seqs.size());
  out.loss = loss_sum / n;
  out.accuracy = static_cast<double>(total_hits) / n;
  return out;
}

TrainingHistory train_rnn(NextEffectModel& model, const FeatureStore& unit,
                          std::span<const SequenceExample> train,
                          std::span<const SequenceExample> val, const TrainConfig& cfg) {
  check_config(cfg);
  if (train.empty()) throw ValidationError("train", "no training sequences");
  auto& net = model.net();
  const nn::ParamList<float> params = net.params();
  nn::Adam<float> adam({cfg.learning_rate});
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  const auto by_length = buckets(train);

  auto batches = [&](int epoch) {
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::vector<std::vector<std::size_t>> list;
    for (const auto& [len, members] : by_length) {
      auto order = members;
      rng.shuffle(order);
      for (auto& b : chunk(order, cfg.batch_size)) list.push_back(std::move(b));
    }
    rng.shuffle(list);
    return list;
  };
  auto step = [&](const std::vector<std::size_t>& idx, int) {
    const auto [specs, used] = sequence_inputs(unit, train, idx);
    const nn::Tensor<float> t = one_hot_labels(train, idx);
    nn::zero_grads(params);
    const nn::Tensor<float> p = net.forward({specs, used}, nn::Mode::kTrain, dropout_rng);
    const auto l = nn::loss_cce(p, t);
    if (!std::isfinite(l.value)) return l.value;
    net.backward(l.grad);
    adam.step(params);
    return l.value;
  };
  auto validate = [&] {
    const SequenceScore s = evaluate_sequences(model, unit, val);
    return ValScore{s.loss, s.accuracy};
  };
  auto train_loss = [&] { return evaluate_sequences(model, unit, train).loss; };
  return run_epochs(params, cfg, !val.empty(), batches, step, validate, train_loss);
}

}  // namespace stepfx
