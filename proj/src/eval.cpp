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

#include "stepfx/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "stepfx/error.hpp"

namespace stepfx {
namespace {

constexpr std::array<const char*, 4> kMetricNames{"mse", "mae", "mfcc", "lsd"};

double field(const MetricReport& m, std::size_t i) {
  switch (i) {
    case 0: return m.mse;
    case 1: return m.mae;
    case 2: return m.mfcc_dist;
    default: return m.lsd;
  }
}

MetricReport& accumulate(MetricReport& acc, const MetricReport& m) {
  acc.mse += m.mse;
  acc.mae += m.mae;
  acc.mfcc_dist += m.mfcc_dist;
  acc.lsd += m.lsd;
  return acc;
}

MetricReport scaled(MetricReport m, double s) {
  m.mse *= s;
  m.mae *= s;
  m.mfcc_dist *= s;
  m.lsd *= s;
  return m;
}

// Full precision so aggregates can be recomputed exactly from raw rows.
std::string exact(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string exact_row(const MetricReport& m) {
  return exact(m.mse) + "," + exact(m.mae) + "," + exact(m.mfcc_dist) + "," + exact(m.lsd);
}

std::string chain_string(const EffectChain& chain) {
  std::string s;
  for (const auto& pv : chain) s += (s.empty() ? "" : "+") + std::string(to_string(pv.effect()));
  return s.empty() ? "none" : s;
}

std::string fixed(double v, int width, int precision) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%*.*f", width, precision, v);
  return buf;
}

}  // namespace

std::string format_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// System evaluation

std::vector<EvalCase> build_eval_cases(const Manifest& manifest,
                                       std::span<const std::uint64_t> chains,
                                       std::size_t limit) {
  const std::set<std::uint64_t> wanted(chains.begin(), chains.end());
  std::vector<EvalCase> out;
  for (const auto& r : manifest.clips) {
    if (!r.is_target || !wanted.count(r.chain_index)) continue;
    if (limit && out.size() >= limit) break;
    EvalCase c;
    c.id = r.clip_id;
    c.preset = r.preset_id;
    c.truth = r.chain;
    c.input = render_preset(find_preset(r.preset_id), NoteEvent{}, r.render_seed);
    c.target = apply_chain(c.input, r.chain);
    out.push_back(std::move(c));
  }
  return out;
}

SystemReport aggregate_system(std::string group, std::vector<CaseResult> cases) {
  if (cases.empty()) throw ValidationError("cases", "evaluation set is empty");
  SystemReport rep;
  rep.group = std::move(group);
  rep.cases = std::move(cases);
  for (const auto& c : rep.cases) {
    accumulate(rep.initial, c.initial);
    accumulate(rep.final_metrics, c.final_metrics);
    for (std::size_t k = 0; k < c.steps.size() && k < rep.step_delta.size(); ++k) {
      accumulate(rep.step_delta[k], c.steps[k].delta);
      ++rep.step_count[k];
    }
  }
  const double n = static_cast<double>(rep.cases.size());
  rep.initial = scaled(rep.initial, 1.0 / n);
  rep.final_metrics = scaled(rep.final_metrics, 1.0 / n);
  rep.delta = rep.final_metrics - rep.initial;
  for (std::size_t k = 0; k < rep.step_delta.size(); ++k) {
    const double c = static_cast<double>(rep.step_count[k]);
    rep.step_delta[k] = rep.step_count[k] ? scaled(rep.step_delta[k], 1.0 / c)
                                          : MetricReport{NAN, NAN, NAN, NAN};
  }
  return rep;
}

SystemReport evaluate_system(std::shared_ptr<const ModelRegistry> models,
                             std::span<const EvalCase> cases, std::string group,
                             int max_steps, double epsilon) {
  if (cases.empty()) throw ValidationError("cases", "evaluation set is empty");
  std::vector<CaseResult> results;
  for (const auto& c : cases) {
    SessionState s(c.input, c.target, models);
    s.set_epsilon(epsilon);
    CaseResult r;
    r.id = c.id;
    r.preset = c.preset;
    r.truth = c.truth;
    r.initial = s.metrics();
    const auto t0 = std::chrono::steady_clock::now();
    r.steps = run_full(s, max_steps);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.final_metrics = s.metrics();
    results.push_back(std::move(r));
  }
  return aggregate_system(std::move(group), std::move(results));
}

std::string SystemReport::raw_csv() const {
  std::ostringstream out;
  out << "case,preset,truth,steps,effects";
  for (const char* p : {"initial", "final"}) {
    for (const char* m : kMetricNames) out << "," << p << "_" << m;
  }
  for (int k = 1; k <= kMaxSteps; ++k) {
    for (const char* m : kMetricNames) out << ",step" << k << "_" << m;
  }
  out << "\n";
  for (const auto& c : cases) {
    std::string effects;
    for (const auto& s : c.steps) {
      effects += (effects.empty() ? "" : "+") + std::string(to_string(s.effect));
      if (s.marginal) effects += "*";
    }
    out << c.id << "," << c.preset << "," << chain_string(c.truth) << "," << c.steps.size()
        << "," << (effects.empty() ? "none" : effects) << "," << exact_row(c.initial) << ","
        << exact_row(c.final_metrics);
    for (std::size_t k = 0; k < static_cast<std::size_t>(kMaxSteps); ++k) {
      if (k < c.steps.size()) {
        out << "," << exact_row(c.steps[k].delta);
      } else {
        out << ",,,,";
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string SystemReport::summary_csv() const {
  std::ostringstream out;
  out << "group,metric,initial,final,delta";
  for (int k = 1; k <= kMaxSteps; ++k) out << ",step" << k;
  out << "\n";
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
    out << group << "," << kMetricNames[i] << "," << format_number(field(initial, i)) << ","
        << format_number(field(final_metrics, i)) << "," << format_number(field(delta, i));
    for (const auto& d : step_delta) out << "," << format_number(field(d, i));
    out << "\n";
  }
  out << group << ",count,,,";
  for (const auto n : step_count) out << "," << n;
  out << "\n";
  return out.str();
}

std::string SystemReport::text() const {
  std::ostringstream out;
  out << "Mean error against target audio (" << group << ", " << cases.size() << " cases)\n";
  out << "metric        initial        final        delta\n";
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-6s %14.4f %12.4f %12.4f\n", kMetricNames[i],
                  field(initial, i), field(final_metrics, i), field(delta, i));
    out << buf;
  }
  out << "\nMean error delta per step\nmetric";
  for (int k = 1; k <= kMaxSteps; ++k) out << "       step " << k;
  out << "\n";
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%-6s", kMetricNames[i]);
    out << buf;
    for (const auto& d : step_delta) {
      out << (std::isfinite(field(d, i)) ? fixed(field(d, i), 13, 4) : "            -");
    }
    out << "\n";
  }
  out << "n     ";
  for (const auto n : step_count) out << fixed(static_cast<double>(n), 13, 0);
  out << "\n\nPer-step means count only the cases that executed that step; "
         "a case stops after a marginal step (MAE gain below epsilon), after "
         "five steps, or when every effect is used.\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Per-effect evaluation

ParamPredictor oracle_predictor() {
  return [](const PairExample& p, const Eigen::MatrixXf&, const Eigen::MatrixXf&) {
    return p.params;
  };
}

ParamPredictor model_predictor(const EffectModel& model) {
  return [&model](const PairExample&, const Eigen::MatrixXf& target,
                  const Eigen::MatrixXf& current) { return model.predict(target, current); };
}

EffectEvalRow evaluate_effect(EffectId effect, const Manifest& manifest,
                              const FeatureStore& unit, std::span<const PairExample> pairs,
                              const ParamPredictor& predictor) {
  if (pairs.empty()) throw ValidationError("pairs", "no held-out pairs for evaluation");
  // Clips recur across pairs; render and analyze each once.
  std::map<std::size_t, std::pair<AudioBuffer, ClipFeatures>> cache;
  auto clip = [&](std::size_t i) -> const std::pair<AudioBuffer, ClipFeatures>& {
    auto it = cache.find(i);
    if (it == cache.end()) {
      AudioBuffer a = render_clip(manifest.clips.at(i));
      ClipFeatures f = analyze(a);
      it = cache.emplace(i, std::make_pair(std::move(a), std::move(f))).first;
    }
    return it->second;
  };
  EffectEvalRow row;
  row.effect = effect;
  for (const auto& p : pairs) {
    if (p.params.effect() != effect) {
      throw ValidationError("pairs", "pair labeled for " +
                                         std::string(to_string(p.params.effect())));
    }
    const auto& [cur_audio, cur_f] = clip(p.current);
    const ClipFeatures& tgt_f = clip(p.target).second;
    const ParameterVector pred = predictor(p, unit.at(p.target), unit.at(p.current));
    if (pred.effect() != effect) throw ValidationError("predictor", "returned another effect");
    accumulate(row.before, compute_metrics(cur_f, tgt_f));
    accumulate(row.after, compute_metrics(analyze(apply_effect(cur_audio, pred)), tgt_f));
    ++row.pairs;
  }
  const double n = static_cast<double>(row.pairs);
  row.before = scaled(row.before, 1.0 / n);
  row.after = scaled(row.after, 1.0 / n);
  row.delta = row.after - row.before;
  return row;
}

std::string EffectEvalReport::csv() const {
  std::ostringstream out;
  out << "group,predictor,effect,pairs";
  for (const char* p : {"before", "after", "delta"}) {
    for (const char* m : kMetricNames) out << "," << p << "_" << m;
  }
  out << "\n";
  for (const auto& r : rows) {
    out << group << "," << predictor << "," << to_string(r.effect) << "," << r.pairs;
    for (const MetricReport* m : {&r.before, &r.after, &r.delta}) {
      for (std::size_t i = 0; i < kMetricNames.size(); ++i) out << "," << format_number(field(*m, i));
    }
    out << "\n";
  }
  return out.str();
}

std::string EffectEvalReport::text() const {
  std::ostringstream out;
  out << "Effect model mean error reduction (" << group << ", " << predictor << ")\n";
  out << "effect           pairs        mse        mae       mfcc        lsd\n";
  bool phaser = false;
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %9zu %10.4f %10.4f %10.4f %10.4f%s\n",
                  std::string(to_string(r.effect)).c_str(), r.pairs, r.delta.mse, r.delta.mae,
                  r.delta.mfcc_dist, r.delta.lsd, r.effect == EffectId::kPhaser ? " *" : "");
    out << buf;
    phaser = phaser || r.effect == EffectId::kPhaser;
  }
  if (phaser) out << "\n* " << kPhaserCaveat << ".\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Next-effect accuracy

RnnEvalReport evaluate_rnn(const NextEffectModel& model, const FeatureStore& unit,
                           std::span<const SequenceExample> seqs, std::string group) {
  if (seqs.empty()) throw ValidationError("sequences", "evaluation set is empty");
  return {std::move(group), evaluate_sequences(model, unit, seqs)};
}

std::string RnnEvalReport::csv() const {
  std::ostringstream out;
  out << "group,step,count,accuracy\n";
  std::size_t total = 0;
  for (std::size_t k = 0; k < score.count_by_step.size(); ++k) {
    out << group << "," << k + 1 << "," << score.count_by_step[k] << ","
        << format_number(score.accuracy_by_step[k]) << "\n";
    total += score.count_by_step[k];
  }
  out << group << ",All," << total << "," << format_number(score.accuracy) << "\n";
  return out.str();
}

std::string RnnEvalReport::text() const {
  std::ostringstream out;
  out << "Next effect prediction accuracy (" << group << ")\n";
  out << "step     count   accuracy\n";
  std::size_t total = 0;
  for (std::size_t k = 0; k < score.count_by_step.size(); ++k) {
    char buf[64];
    if (score.count_by_step[k]) {
      std::snprintf(buf, sizeof buf, "%-6zu %7zu %10.3f\n", k + 1, score.count_by_step[k],
                    score.accuracy_by_step[k]);
    } else {
      std::snprintf(buf, sizeof buf, "%-6zu %7d %10s\n", k + 1, 0, "-");
    }
    out << buf;
    total += score.count_by_step[k];
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-6s %7zu %10.3f\n", "All", total, score.accuracy);
  out << buf << "chance is 0.2 at step 1\n";
  return out.str();
}

}  // namespace stepfx
