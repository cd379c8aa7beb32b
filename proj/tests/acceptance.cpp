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

// Acceptance run: one PASS/FAIL line per criterion. Tolerances are pinned
// here and nowhere else. Exit status is nonzero if any criterion fails.
//
//   stepfx_acceptance [--work-dir DIR] [--keep] [--only 1,2,...] [--report DIR]
//
// Criteria 7 to 10 share one desk-scale run (500 chains, basic group):
// generation, training of all six models and every evaluation.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metric_oracle.hpp"
#include "stepfx/audio.hpp"
#include "stepfx/dataset.hpp"
#include "stepfx/effects.hpp"
#include "stepfx/engine.hpp"
#include "stepfx/eval.hpp"
#include "stepfx/features.hpp"
#include "stepfx/models.hpp"
#include "stepfx/nn/gradcheck.hpp"
#include "stepfx/nn/layers.hpp"
#include "stepfx/pipeline.hpp"
#include "stepfx/random.hpp"
#include "stepfx/synth.hpp"
#include "stepfx/training.hpp"

using namespace stepfx;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// -- pinned tolerances --------------------------------------------------------

constexpr double kGradTol = 1e-3;
constexpr double kGradSeconds = 120;
constexpr double kMetricRelTol = 1e-6;
constexpr int kMetricPairs = 10;
constexpr double kNeutralDb = -60.0;
constexpr double kAudibleDb = 1.0;
constexpr int kSweepPoints = 6;
constexpr int kSoundPairs = 50;
constexpr double kSoundMaeDb = 1e-6;
constexpr int kOverfitPairs = 64;
constexpr int kOverfitSequences = 32;
constexpr int kOverfitEpochs = 200;
constexpr double kOverfitMse = 0.01;
constexpr double kOverfitSeconds = 600;
constexpr int kDeskChains = 500;
constexpr double kDeskSeconds = 7200;
constexpr double kRnnAccuracy = 0.6;


struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void note(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

// -- 1. gradient integrity ----------------------------------------------------

template <typename L>
double layer_error(L& layer, const nn::Shape& in, std::uint64_t seed) {
  nn::LayerModule<double> m(layer);
  return nn::grad_check<double>(m, {in}, seed).max_rel_error;
}

Outcome gradient_integrity() {
  using namespace nn;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  int checks = 0;
  auto track = [&](const std::string& name, double err) {
    ++checks;
    if (!(err <= worst)) {
      worst = err;
      worst_name = name;
    }
  };
  for (const std::uint64_t seed : {11u, 23u, 37u}) {
    { Dense<double> l("fc", 4, 3); track("dense", layer_error(l, {2, 4}, seed)); }
    { Conv2d<double> l("conv", 2, 3, 3); track("conv2d", layer_error(l, {2, 2, 5, 6}, seed)); }
    { MaxPool2d<double> l("pool"); track("maxpool", layer_error(l, {2, 2, 4, 5}, seed)); }
    { Elu<double> l("elu"); track("elu", layer_error(l, {3, 7}, seed)); }
    { Sigmoid<double> l("sig"); track("sigmoid", layer_error(l, {3, 7}, seed)); }
    { Softmax<double> l("sm"); track("softmax", layer_error(l, {3, 5}, seed)); }
    { Dropout<double> l("drop", 0.5); track("dropout", layer_error(l, {4, 6}, seed)); }
    { Flatten<double> l("flat"); track("flatten", layer_error(l, {2, 3, 2, 2}, seed)); }
    { GlobalAvgPool<double> l("gap"); track("gap", layer_error(l, {2, 3, 3, 4}, seed)); }
    { BiLstm<double> l("lstm", 8, 4, true); track("bilstm_seq", layer_error(l, {2, 5, 8}, seed)); }
    { BiLstm<double> l("lstm", 8, 4, false); track("bilstm_last", layer_error(l, {2, 5, 8}, seed)); }
    {
      auto inner = std::make_unique<Sequential<double>>("step");
      inner->add<Conv2d<double>>("step.conv", 2, 2, 3);
      inner->add<GlobalAvgPool<double>>("step.gap");
      inner->add<Dense<double>>("step.fc", 2, 3);
      TimeDistributed<double> l("td", std::move(inner));
      track("time_distributed", layer_error(l, {2, 3, 2, 4, 4}, seed));
    }
    {  // softmax + categorical cross-entropy
      Sequential<double> s("cls");
      s.add<Dense<double>>("fc", 6, 5);
      s.add<Softmax<double>>("sm");
      Tensor<double> target({3, 5});
      target[1] = target[5 + 4] = target[10 + 0] = 1.0;
      LayerModule<double> m(s);
      track("softmax_cce", grad_check<double>(m, {{3, 6}}, seed,
                                              [&](const Tensor<double>& y, Tensor<double>* g) {
                                                auto l = loss_cce(y, target);
                                                if (g) *g = l.grad;
                                                return l.value;
                                              }).max_rel_error);
    }
    {  // mixed output heads, summed head losses
      const HeadLayout layout{{"mode", HeadKind::kCategorical, 0, 4},
                              {"drive", HeadKind::kContinuous, 4, 1},
                              {"boost", HeadKind::kBinary, 5, 1}};
      Sequential<double> s("heads");
      s.add<Dense<double>>("fc", 5, 6);
      s.add<OutputHeads<double>>("out", layout);
      Tensor<double> target({3, 6});
      Rng rng(seed);
      for (int r = 0; r < 3; ++r) {
        target[r * 6 + static_cast<int>(rng.index(4))] = 1.0;
        target[r * 6 + 4] = rng.uniform();
        target[r * 6 + 5] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      }
      LayerModule<double> m(s);
      track("output_heads", grad_check<double>(m, {{3, 5}}, seed,
                                               [&](const Tensor<double>& y, Tensor<double>* g) {
                                                 auto l = head_loss(y, target, layout);
                                                 if (g) *g = l.grad;
                                                 return l.total;
                                               }).max_rel_error);
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradSeconds,
          std::to_string(checks) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name +
              "), " + fmt("%.1f", secs) + " s"};
}

// -- 2. metric oracle ------------------------------------------------------------

AudioBuffer random_clip(std::uint64_t seed) {
  Rng rng(seed);
  const auto& presets = list_presets();
  const auto& preset = presets[rng.index(presets.size())];
  AudioBuffer dry = render_preset(preset, NoteEvent{48 + static_cast<int>(rng.index(25)), 127, 1.0},
                                  rng.index(1u << 30));
  EffectChain chain;
  for (const EffectId e : kAllEffects) {
    if (rng.uniform() < 0.5) chain.push_back(sample_parameters(e, rng.index(1u << 30)));
  }
  return apply_chain(dry, chain);
}

Outcome metric_oracle() {
  double worst = 0.0;
  bool identity_zero = true;
  for (int i = 0; i < kMetricPairs; ++i) {
    const AudioBuffer a = random_clip(1000 + 2 * i), b = random_clip(1001 + 2 * i);
    const MetricReport got = compute_metrics(a, b);
    const oracle::Metrics want = oracle::metrics(a, b);
    for (const auto& [g, w] : {std::pair{got.mse, want.mse}, {got.mae, want.mae},
                               {got.mfcc_dist, want.mfcc}, {got.lsd, want.lsd}}) {
      worst = std::max(worst, oracle::rel_err(g, w));
    }
    const MetricReport self = compute_metrics(a, a);
    identity_zero = identity_zero && self.mse == 0.0 && self.mae == 0.0 &&
                    self.mfcc_dist == 0.0 && self.lsd == 0.0;
  }
  return {worst < kMetricRelTol && identity_zero,
          std::to_string(kMetricPairs) + " pairs, worst relative error " + fmt("%.2e", worst) +
              ", identity " + (identity_zero ? "exactly 0" : "NOT 0")};
}

// -- 3. feature shapes -----------------------------------------------------------

Outcome feature_shapes() {
  bool ok = true;
  std::string why;
  for (const auto& p : list_presets()) {
    const auto mel = mel_spectrogram_db<double>(render_preset(p, {}, 3));
    const auto c = mfcc(mel, 20);
    if (mel.rows() != 128 || mel.cols() != 87 || c.rows() != 20 || c.cols() != 87) {
      ok = false;
      why = p.id + " wrong shape";
    }
    if (mel.maxCoeff() > 0.0 || mel.minCoeff() < -80.0) {
      ok = false;
      why = p.id + " outside [-80, 0]";
    }
  }
  const auto silent = mel_spectrogram_db<double>(AudioBuffer(Eigen::ArrayXf::Zero(kClipLength)));
  const bool floor = (silent.array() == -80.0).all();
  return {ok && floor, ok ? std::string("mel 128x87 in [-80, 0], mfcc 20x87 on ") +
                                std::to_string(list_presets().size()) + " presets, silence " +
                                (floor ? "at floor" : "NOT at floor")
                          : why};
}

// -- 4. DSP contracts ------------------------------------------------------------

/// Parameter vector with every slot at the middle of its first range.
ParameterVector middle(EffectId e) {
  const auto& schema = effect_schema(e);
  std::vector<double> v;
  for (const auto& s : schema) {
    v.push_back(s.kind == ParamKind::kCategorical ? 0.0
                                                  : 0.5 * (s.ranges[0].lo + s.ranges[0].hi));
  }
  return ParameterVector(e, v);
}

/// k-th of n points spread evenly along the union of the ranges.
double along(const ParameterSpec& s, int k, int n) {
  double total = 0.0;
  for (const auto& r : s.ranges) total += r.length();
  double at = total * k / (n - 1);
  for (const auto& r : s.ranges) {
    if (at <= r.length() + 1e-12) return std::min(r.lo + at, r.hi);
    at -= r.length();
  }
  return s.hi();
}

struct Sweep {
  double span = 0.0;       // MAE between the two ends
  double worst_dip = 0.0;  // largest decrease of distance-from-start, reported only
};

Sweep sweep(const AudioBuffer& probe, ParameterVector base, std::size_t slot) {
  const auto& spec = effect_schema(base.effect())[slot];
  std::vector<double> values(base.values().begin(), base.values().end());
  Eigen::MatrixXd first;
  Sweep s;
  double last = 0.0;
  for (int k = 0; k < kSweepPoints; ++k) {
    values[slot] = along(spec, k, kSweepPoints);
    const auto mel =
        mel_spectrogram_db<double>(apply_effect(probe, ParameterVector(base.effect(), values)));
    if (k == 0) {
      first = mel;
      continue;
    }
    const double d = mel_mae(mel, first);
    s.worst_dip = std::max(s.worst_dip, last - d);
    last = d;
  }
  s.span = last;
  return s;
}

Outcome dsp_contracts() {
  std::vector<std::string> problems;
  // Determinism.
  for (const auto& p : list_presets()) {
    const AudioBuffer a = render_preset(p, {}, 17);
    if (!(a == render_preset(p, {}, 17))) problems.push_back(p.id + " render not deterministic");
    for (const EffectId e : kAllEffects) {
      const auto pv = sample_parameters(e, 5);
      if (!(apply_effect(a, pv) == apply_effect(a, pv))) {
        problems.push_back(std::string(to_string(e)) + " not deterministic");
      }
    }
  }
  // Neutrality.
  const AudioBuffer saw = render_preset(find_preset("saw"), {}, 0);
  double worst_neutral = -1e9;
  for (const EffectId e : kAllEffects) {
    EffectOptions opt;
    opt.allow_range_gaps = e == EffectId::kEq;
    opt.bypass = e == EffectId::kReverb;
    const double r = residual_db(saw, apply_effect(saw, neutral_parameters(e), opt));
    worst_neutral = std::max(worst_neutral, r);
  }
  if (!(worst_neutral < kNeutralDb)) problems.push_back("neutral residual " + fmt("%.1f", worst_neutral));

  // Audibility sweeps. Probes per effect: the compressor low band needs a
  // low note to have anything to act on.
  const AudioBuffer low_square = render_preset(find_preset("square"), NoteEvent{36, 127, 1.0}, 0);
  const AudioBuffer sine = render_preset(find_preset("sine"), {}, 0);
  double min_span = 1e9, max_dip = 0.0;
  int sweeps = 0;
  auto run = [&](const std::string& name, const AudioBuffer& probe, const ParameterVector& base,
                 std::size_t slot) {
    const Sweep s = sweep(probe, base, slot);
    ++sweeps;
    min_span = std::min(min_span, s.span);
    max_dip = std::max(max_dip, s.worst_dip);
    if (!(s.span > kAudibleDb)) problems.push_back(name + " span " + fmt("%.2f", s.span) + " dB");
  };
  {
    ParameterVector base(EffectId::kCompressor);
    for (std::size_t k = 0; k < 3; ++k) {
      run("compressor." + effect_schema(EffectId::kCompressor)[k].name, low_square, base, k);
    }
  }
  for (int mode = 0; mode < 12; ++mode) {
    ParameterVector base = middle(EffectId::kDistortion);
    base.set("mode", mode);
    run("distortion." + std::string(distortion_modes()[static_cast<std::size_t>(mode)]) + ".drive", sine, base, 1);
  }
  {
    ParameterVector base = middle(EffectId::kEq);
    base.set("gain", 1.0);
    run("eq.cutoff", saw, base, 0);
    run("eq.resonance", saw, base, 1);
    base.set("cutoff", 0.5);
    run("eq.gain", saw, base, 2);
  }
  {
    ParameterVector base = middle(EffectId::kPhaser);
    base.set("depth", 1.0);
    for (std::size_t k = 0; k < 3; ++k) {
      run("phaser." + effect_schema(EffectId::kPhaser)[k].name, saw, base, k);
    }
  }
  {
    const ParameterVector base = middle(EffectId::kReverb);
    for (std::size_t k = 0; k < 3; ++k) {
      run("reverb." + effect_schema(EffectId::kReverb)[k].name, saw, base, k);
    }
  }
  std::string detail = "deterministic, neutral worst " + fmt("%.1f", worst_neutral) + " dB, " +
                       std::to_string(sweeps) + " sweeps min span " + fmt("%.2f", min_span) +
                       " dB, max dip " + fmt("%.3f", max_dip) + " dB";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

// -- 5. dataset soundness --------------------------------------------------------

ClipRecord toy(const std::string& id, const std::string& preset, std::uint64_t seed,
               EffectChain chain) {
  ClipRecord r;
  r.clip_id = id;
  r.preset_id = preset;
  r.render_seed = seed;
  r.chain = std::move(chain);
  r.feature_path = "features/" + id + ".f32";
  return r;
}

std::size_t toy_count() {
  // Compatible sets of (2 currents, 5 targets), (1, 3) and (3, 0).
  Manifest m;
  const auto comp = sample_parameters(EffectId::kCompressor, 4);
  const auto dist = sample_parameters(EffectId::kDistortion, 4);
  auto eq = [](double g) {
    ParameterVector p = sample_parameters(EffectId::kEq, 1);
    p.set("gain", g);
    return p;
  };
  for (int i = 0; i < 2; ++i) m.clips.push_back(toy("a" + std::to_string(i), "saw", 1, {comp}));
  for (int i = 0; i < 5; ++i) m.clips.push_back(toy("t" + std::to_string(i), "saw", 1, {comp, eq(0.08 * i)}));
  m.clips.push_back(toy("b", "sine", 2, {}));
  for (int i = 0; i < 3; ++i) m.clips.push_back(toy("u" + std::to_string(i), "sine", 2, {eq(0.7 + 0.1 * i)}));
  for (int i = 0; i < 3; ++i) m.clips.push_back(toy("c" + std::to_string(i), "square", 3, {dist}));
  return build_effect_pairs(m, EffectId::kEq, 0, 0).total;
}

Outcome dataset_soundness(const fs::path& work) {
  const fs::path dir = work / "soundness";
  fs::remove_all(dir);
  GenerateOptions o;
  o.chains = 12;
  o.seed = 31;
  o.out_dir = dir;
  const Manifest m = generate_clips(o);
  const FeatureStore features = load_feature_store(dir, m);
  Rng rng(77);
  double worst = 0.0;
  int checked = 0;
  for (const EffectId e : kAllEffects) {
    const PairSet set = build_effect_pairs(m, e, 0, 0);
    for (int i = 0; i < kSoundPairs / kNumEffects; ++i) {
      const PairExample& p = set.pairs[rng.index(set.pairs.size())];
      const AudioBuffer cur = render_clip(m.clips[p.current]);
      const auto mel = mel_spectrogram_db<float>(apply_effect(cur, p.params));
      worst = std::max(worst, mel_mae(mel, features[p.target]));
      ++checked;
    }
  }
  const std::size_t count = toy_count();
  const std::size_t expected = 2 * 5 + 1 * 3 + 3 * 0;
  fs::remove_all(dir);
  return {worst < kSoundMaeDb && checked == kSoundPairs && count == expected,
          std::to_string(checked) + " pairs, worst MAE " + fmt("%.2e", worst) +
              " dB; toy count " + std::to_string(count) + " (closed form " +
              std::to_string(expected) + ")"};
}

// -- 6. overfit sanity -----------------------------------------------------------

Outcome overfit(const fs::path& work) {
  const fs::path dir = work / "overfit";
  fs::remove_all(dir);
  RunConfig cfg;
  cfg.chains = 60;
  cfg.seed = 19;
  GenerateOptions o;
  o.chains = cfg.chains;
  o.seed = cfg.seed;
  o.out_dir = dir;
  generate_clips(o);
  Workspace ws(dir, cfg);

  bool ok = true;
  std::string detail;
  for (const EffectId e : kAllEffects) {
    const auto pairs = ws.pairs(e, SplitPart::kTrain, kOverfitPairs);
    EffectModel model(e, CnnConfig{}, derive_seed(cfg.seed, 40 + rack_index(e)));
    TrainConfig t;
    t.batch_size = 16;
    t.max_epochs = kOverfitEpochs;
    t.patience = kOverfitEpochs;
    t.seed = derive_seed(cfg.seed, 60 + rack_index(e));
    t.target_train_loss = kOverfitMse;
    const auto t0 = Clock::now();
    const TrainingHistory h = train_effect_model(model, ws.unit(), pairs, {}, t);
    const double secs = seconds_since(t0);
    const double mse = evaluate_pairs(model, ws.unit(), pairs).continuous_mse;
    const bool pass = pairs.size() == kOverfitPairs && mse < kOverfitMse && secs < kOverfitSeconds;
    ok = ok && pass;
    detail += std::string(to_string(e)) + " " + fmt("%.4f", mse) + "/" +
              std::to_string(h.epochs.size()) + "ep/" + fmt("%.0fs", secs) + (pass ? "" : " FAIL") +
              ", ";
    note("overfit " + std::string(to_string(e)) + ": mse " + fmt("%.5f", mse) + " after " +
         std::to_string(h.epochs.size()) + " epochs, " + fmt("%.0f s", secs));
  }
  {
    auto seqs = ws.sequences(SplitPart::kTrain);
    seqs.resize(std::min<std::size_t>(seqs.size(), kOverfitSequences));
    NextEffectModel model(RnnConfig{}, derive_seed(cfg.seed, 90));
    TrainConfig t;
    t.batch_size = 8;
    t.max_epochs = kOverfitEpochs;
    t.patience = kOverfitEpochs;
    t.seed = derive_seed(cfg.seed, 91);
    t.target_train_loss = 0.02;
    const auto t0 = Clock::now();
    const TrainingHistory h = train_rnn(model, ws.unit(), seqs, {}, t);
    const double secs = seconds_since(t0);
    const double acc = evaluate_sequences(model, ws.unit(), seqs).accuracy;
    const bool pass = seqs.size() == kOverfitSequences && acc == 1.0 && secs < kOverfitSeconds;
    ok = ok && pass;
    detail += "rnn acc " + fmt("%.3f", acc) + "/" + std::to_string(h.epochs.size()) + "ep/" +
              fmt("%.0fs", secs) + (pass ? "" : " FAIL");
    note("overfit rnn: accuracy " + fmt("%.4f", acc) + " after " +
         std::to_string(h.epochs.size()) + " epochs, " + fmt("%.0f s", secs));
  }
  fs::remove_all(dir);
  return {ok, detail};
}

// -- 7 to 10. desk-scale run -----------------------------------------------------

struct DeskRun {
  RunConfig cfg;
  fs::path data, models;
  double seconds = 0.0;
  std::shared_ptr<ModelRegistry> registry;
  SystemReport system;
  RnnEvalReport rnn;
  EffectEvalReport model_effects, oracle_effects;
};

DeskRun desk_run(const fs::path& work) {
  DeskRun d;
  d.cfg = RunConfig::profile("desk");
  d.cfg.chains = kDeskChains;
  d.data = work / "desk" / "data";
  d.models = work / "desk" / "models";
  fs::remove_all(work / "desk");
  fs::create_directories(d.models);
  const auto t0 = Clock::now();

  GenerateOptions o;
  o.group = d.cfg.group;
  o.chains = d.cfg.chains;
  o.seed = d.cfg.seed;
  o.out_dir = d.data;
  generate_clips(o);
  note("desk: generated " + std::to_string(d.cfg.chains) + " chains, " +
       fmt("%.0f s", seconds_since(t0)));

  Workspace ws(d.data, d.cfg);
  d.registry = std::make_shared<ModelRegistry>();
  for (const EffectId e : kAllEffects) {
    const TrainedEffect t = train_effect(ws, e, d.cfg);
    save_model(effect_model_path(d.models, e), *t.model);
    d.registry->set(std::shared_ptr<const EffectModel>(t.model));
    note("desk: " + std::string(to_string(e)) + " " + std::to_string(t.history.epochs.size()) +
         " epochs (" + t.history.stop_reason + "), " + std::to_string(t.train_pairs) +
         " pairs, " + fmt("%.0f s", seconds_since(t0)));
  }
  const TrainedRnn r = train_next_effect(ws, d.cfg);
  save_model(rnn_model_path(d.models), *r.model);
  d.registry->set(std::shared_ptr<const NextEffectModel>(r.model));
  note("desk: rnn " + std::to_string(r.history.epochs.size()) + " epochs, val accuracy " +
       fmt("%.3f", r.val_score.accuracy) + ", " + fmt("%.0f s", seconds_since(t0)));

  d.model_effects = eval_effects(ws, d.registry.get(), PredictorKind::kModel, d.cfg);
  d.oracle_effects = eval_effects(ws, nullptr, PredictorKind::kOracle, d.cfg);
  d.rnn = eval_rnn(ws, d.registry->next_effect(), d.cfg);
  d.system = eval_system(ws, d.registry, d.cfg);
  d.seconds = seconds_since(t0);

  const fs::path results = work / "desk" / "results";
  write_file(results / "system_raw.csv", d.system.raw_csv());
  write_file(results / "system_summary.csv", d.system.summary_csv());
  write_file(results / "rnn.csv", d.rnn.csv());
  write_file(results / "effects_model.csv", d.model_effects.csv());
  write_file(results / "effects_oracle.csv", d.oracle_effects.csv());
  std::fputs(d.system.text().c_str(), stderr);
  std::fputs(d.model_effects.text().c_str(), stderr);
  std::fputs(d.oracle_effects.text().c_str(), stderr);
  std::fputs(d.rnn.text().c_str(), stderr);
  return d;
}

Outcome desk_table1(const DeskRun& d) {
  const MetricReport& dl = d.system.delta;
  const bool negative = dl.mse < 0 && dl.mae < 0 && dl.mfcc_dist < 0 && dl.lsd < 0;
  bool step1_largest = d.system.step_count[0] > 0;
  for (std::size_t k = 1; k < kMaxSteps; ++k) {
    if (d.system.step_count[k] == 0) continue;
    step1_largest = step1_largest &&
                    std::abs(d.system.step_delta[0].mae) > std::abs(d.system.step_delta[k].mae);
  }
  std::string steps;
  for (std::size_t k = 0; k < kMaxSteps; ++k) {
    steps += (k ? " " : "") + format_number(d.system.step_delta[k].mae) + "(" +
             std::to_string(d.system.step_count[k]) + ")";
  }
  return {negative && step1_largest && d.seconds <= kDeskSeconds,
          std::to_string(d.system.cases.size()) + " cases; delta mse " + fmt("%.4f", dl.mse) +
              " mae " + fmt("%.3f", dl.mae) + " mfcc " + fmt("%.2f", dl.mfcc_dist) + " lsd " +
              fmt("%.3f", dl.lsd) + "; step MAE " + steps + "; total " +
              fmt("%.0f s", d.seconds)};
}

Outcome desk_table4(const DeskRun& d) {
  const double acc = d.rnn.score.accuracy;
  return {acc >= kRnnAccuracy, "held-out All accuracy " + fmt("%.4f", acc) + " over " +
                                   std::to_string(std::accumulate(d.rnn.score.count_by_step.begin(),
                                                                  d.rnn.score.count_by_step.end(),
                                                                  std::size_t{0})) +
                                   " predictions"};
}

Outcome desk_table3(const DeskRun& d) {
  bool oracle_ok = true;
  for (const auto& r : d.oracle_effects.rows) {
    oracle_ok = oracle_ok && r.delta.mse <= 0 && r.delta.mae <= 0 && r.delta.mfcc_dist <= 0 &&
                r.delta.lsd <= 0;
  }
  bool model_ok = true;
  std::string detail = "oracle " + std::string(oracle_ok ? "all <= 0" : "VIOLATED") + "; model MAE";
  for (const auto& r : d.model_effects.rows) {
    detail += " " + std::string(to_string(r.effect)) + " " + fmt("%.3f", r.delta.mae);
    if (r.effect == EffectId::kPhaser) {
      detail += " (exempt)";
      continue;
    }
    model_ok = model_ok && r.delta.mae < 0;
  }
  return {oracle_ok && model_ok && d.oracle_effects.rows.size() == kNumEffects, detail};
}

Outcome serialization(const fs::path& work, DeskRun& d) {
  std::vector<std::string> problems;
  // Models: load, save again, compare bytes and outputs.
  const fs::path again = work / "desk" / "resaved";
  fs::create_directories(again);
  const auto loaded = ModelRegistry::load(d.models);
  Workspace ws(d.data, d.cfg);
  const auto test_pairs = ws.pairs(EffectId::kReverb, SplitPart::kTest, 8);
  for (const EffectId e : kAllEffects) {
    save_model(effect_model_path(again, e), loaded->effect(e));
    if (read_file(effect_model_path(again, e)) != read_file(effect_model_path(d.models, e))) {
      problems.push_back(std::string(to_string(e)) + " model bytes differ");
    }
    std::vector<std::size_t> idx(test_pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto x = pair_inputs(ws.unit(), test_pairs, idx);
    if (d.registry->effect(e).infer(x).vec() != loaded->effect(e).infer(x).vec()) {
      problems.push_back(std::string(to_string(e)) + " outputs differ after reload");
    }
  }
  save_model(rnn_model_path(again), loaded->next_effect());
  if (read_file(rnn_model_path(again)) != read_file(rnn_model_path(d.models))) {
    problems.push_back("rnn model bytes differ");
  }
  // Dataset: manifest and feature files.
  const Manifest m = read_manifest(d.data);
  write_manifest(again, m);
  for (const char* f : {"manifest.jsonl", "dataset.json"}) {
    if (read_file(again / f) != read_file(d.data / f)) problems.push_back(std::string(f) + " differs");
  }
  for (std::size_t i = 0; i < m.clips.size(); i += 97) {
    const fs::path src = d.data / m.clips[i].feature_path;
    save_features(again / "f.f32", load_features(src));
    if (read_file(again / "f.f32") != read_file(src)) problems.push_back("feature file differs");
  }
  // Evaluation CSVs from the reloaded models must match the first run.
  const SystemReport sys = eval_system(ws, loaded, d.cfg);
  const EffectEvalReport eff = eval_effects(ws, loaded.get(), PredictorKind::kModel, d.cfg);
  const RnnEvalReport rnn = eval_rnn(ws, loaded->next_effect(), d.cfg);
  if (sys.raw_csv() != d.system.raw_csv()) problems.push_back("system_raw.csv differs");
  if (sys.summary_csv() != d.system.summary_csv()) problems.push_back("system_summary.csv differs");
  if (eff.csv() != d.model_effects.csv()) problems.push_back("effects_model.csv differs");
  if (rnn.csv() != d.rnn.csv()) problems.push_back("rnn.csv differs");
  std::string detail = "6 models, manifest, features and 4 evaluation CSVs";
  detail += problems.empty() ? " byte-identical" : "";
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stepfx acceptance run"};
  std::string work_arg = (fs::temp_directory_path() / "stepfx_acceptance").string();
  bool keep = false;
  std::vector<int> only;
  std::string report_arg;
  app.add_option("--work-dir", work_arg, "scratch directory");
  app.add_option("--report", report_arg,
                 "write acceptance.txt and the desk result tables here");
  app.add_flag("--keep", keep, "keep the scratch directory");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_arg;
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  std::string lines;
  auto emit = [&](const std::string& line) {
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    lines += line;
  };

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    const int n = std::snprintf(nullptr, 0, "%s %2d %-28s %s [%.0f s]\n", o.pass ? "PASS" : "FAIL",
                                id, name, o.detail.c_str(), seconds_since(t0));
    std::string line(static_cast<std::size_t>(n), '\0');
    std::snprintf(line.data(), line.size() + 1, "%s %2d %-28s %s [%.0f s]\n",
                  o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), seconds_since(t0));
    emit(line);
  };

  report(1, "gradient-integrity", gradient_integrity);
  report(2, "metric-oracle", metric_oracle);
  report(3, "feature-shapes", feature_shapes);
  report(4, "dsp-contracts", dsp_contracts);
  report(5, "dataset-soundness", [&] { return dataset_soundness(work); });
  report(6, "overfit-sanity", [&] { return overfit(work); });

  if (wanted(7) || wanted(8) || wanted(9) || wanted(10)) {
    std::optional<DeskRun> desk;
    std::string error;
    try {
      desk = desk_run(work);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto with_desk = [&](const std::function<Outcome(DeskRun&)>& fn) {
      return [&, fn] {
        if (!desk) return Outcome{false, "desk run failed: " + error};
        return fn(*desk);
      };
    };
    report(7, "desk-table1-system", with_desk(desk_table1));
    report(8, "desk-table4-next-effect", with_desk(desk_table4));
    report(9, "desk-table3-per-effect", with_desk(desk_table3));
    report(10, "serialization", with_desk([&](DeskRun& d) { return serialization(work, d); }));
  }

  emit(std::string(failures ? "FAIL" : "PASS") + ": " + std::to_string(failures) +
       " failing criteria\n");
  if (!report_arg.empty()) {
    const fs::path out = report_arg;
    fs::create_directories(out);
    write_file(out / "acceptance.txt", lines);
    const fs::path results = work / "desk" / "results";
    if (fs::exists(results))
      for (const auto& f : fs::directory_iterator(results))
        fs::copy_file(f.path(), out / f.path().filename(), fs::copy_options::overwrite_existing);
  }
  if (!keep) fs::remove_all(work);
  return failures ? 1 : 0;
}
