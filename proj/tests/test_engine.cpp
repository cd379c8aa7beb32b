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

#include <filesystem>
#include <regex>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "stepfx/error.hpp"
#include "stepfx/features.hpp"

using namespace stepfx;
namespace fs = std::filesystem;

namespace {

SessionState make_session() {
  const AudioBuffer dry = fixtures::clip("saw", 1);
  return SessionState(dry, fixtures::chained_target(dry), fixtures::tiny_registry());
}

double sum(const Probabilities& p) {
  double s = 0;
  for (const double v : p) s += v;
  return s;
}

}  // namespace

TEST_CASE("session input validation") {
  const auto reg = fixtures::tiny_registry();
  const AudioBuffer ok = fixtures::clip("sine");
  AudioBuffer short_clip(Eigen::ArrayXf::Zero(1000));
  try {
    SessionState s(short_clip, ok, reg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "input");
  }
  AudioBuffer nan = ok;
  nan.samples[10] = std::numeric_limits<float>::quiet_NaN();
  try {
    SessionState s(ok, nan, reg);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "target");
  }
  AudioBuffer slow = ok;
  slow.sample_rate = 48000;
  CHECK_THROWS_AS(SessionState(slow, ok, reg), ValidationError);
  CHECK_THROWS_AS(ModelRegistry().effect(EffectId::kEq), ArtifactError);
  CHECK_FALSE(ModelRegistry().complete());
  CHECK(reg->complete());
}

TEST_CASE("suggestions are pure and masked") {
  SessionState s = make_session();
  const AudioBuffer before = s.current();
  const Suggestion a = suggest_step(s);
  const Suggestion b = suggest_step(s);
  CHECK(a.effect == b.effect);
  CHECK(a.params == b.params);
  CHECK(a.probabilities == b.probabilities);
  CHECK(s.history().empty());
  CHECK(s.current() == before);
  CHECK(sum(a.probabilities) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_NOTHROW(validate(a.params));
  CHECK(a.params.effect() == a.effect);
  // argmax of the probabilities
  for (const double p : a.probabilities) CHECK(p <= a.probabilities[rack_index(a.effect)]);

  apply_step(s, a.params);
  const Probabilities p = next_effect_probabilities(s);
  CHECK(p[static_cast<std::size_t>(rack_index(a.effect))] == 0.0);
  CHECK(sum(p) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(suggest_step(s).effect != a.effect);
}

TEST_CASE("apply_step bookkeeping") {
  SessionState s = make_session();
  const MetricReport initial = s.metrics();
  CHECK(initial.mae > 0.0);
  ParameterVector d(EffectId::kDistortion);
  d.set("mode", 1);
  d.set("drive", 0.5);
  const AudioBuffer prev = s.current();
  const StepRecord r = apply_step(s, d);
  CHECK(r.index == 1);
  CHECK(r.effect == EffectId::kDistortion);
  CHECK(r.before.mae == initial.mae);
  CHECK(s.current() == apply_effect(prev, d));
  const MetricReport direct = compute_metrics(s.current(), s.target());
  CHECK(r.after.mse == direct.mse);
  CHECK(r.after.mae == direct.mae);
  CHECK(r.after.lsd == direct.lsd);
  CHECK(r.delta.mae == doctest::Approx(r.after.mae - r.before.mae).epsilon(1e-12));
  CHECK(std::abs(r.delta.mse - (r.after.mse - r.before.mse)) < 1e-9);
  CHECK(r.marginal == (r.before.mae - r.after.mae < s.epsilon()));
  CHECK(s.metrics().mae == r.after.mae);
  CHECK(s.used()[1]);
  CHECK(s.chain().size() == 1);
  CHECK(s.state_count() == 2);
  CHECK(std::regex_match(r.plan_line(),
                         std::regex(R"(Step 1: distortion, mode=hard_clip, drive=0\.50, MAE \d+\.\d{3}->\d+\.\d{3}( \(marginal\))?)")));
  const auto j = r.to_json();
  CHECK(j.at("effect") == "distortion");
  CHECK(j.at("before").contains("mfcc"));
  CHECK(j.at("probabilities").size() == 5);
  CHECK(j.at("probabilities").contains("reverb"));
  CHECK(sum(r.probabilities) == doctest::Approx(1.0).epsilon(1e-9));

  // Reuse and invalid parameters.
  CHECK_THROWS_AS(apply_step(s, d), ConflictError);
  ParameterVector bad(EffectId::kEq);
  bad.set("gain", 0.5);
  CHECK_THROWS_AS(apply_step(s, bad), ValidationError);
  CHECK(s.history().size() == 1);
  Probabilities wrong{0.5, 0.5, 0.5, 0.0, 0.0};
  CHECK_THROWS_AS(apply_step(s, sample_parameters(EffectId::kEq, 1), wrong), ValidationError);
}

TEST_CASE("undo restores the previous state exactly") {
  SessionState s = make_session();
  CHECK_THROWS_AS(undo_step(s), ConflictError);
  const AudioBuffer start = s.current();
  const MetricReport m0 = s.metrics();
  apply_step(s, sample_parameters(EffectId::kCompressor, 3));
  const AudioBuffer one = s.current();
  apply_step(s, sample_parameters(EffectId::kPhaser, 3));
  CHECK(s.replay() == s.current());
  undo_step(s);
  CHECK(s.current() == one);
  CHECK(s.history().size() == 1);
  CHECK_FALSE(s.used()[3]);
  undo_step(s);
  CHECK(s.current() == start);
  CHECK(s.metrics().mae == m0.mae);
  CHECK(s.history().empty());
  // A fresh application after undo numbers from 1 again.
  CHECK(apply_step(s, sample_parameters(EffectId::kPhaser, 3)).index == 1);
}

TEST_CASE("identical input and target: every step is marginal") {
  const AudioBuffer dry = fixtures::clip("triangle");
  SessionState s(dry, dry, fixtures::tiny_registry());
  CHECK(s.metrics().mae == 0.0);
  const auto records = run_full(s, 5);
  REQUIRE(records.size() == 1);
  CHECK(records[0].marginal);
  CHECK(records[0].plan_line().ends_with("(marginal)"));
}

TEST_CASE("run_full halts and never repeats an effect") {
  SessionState s = make_session();
  s.set_epsilon(-1e9);  // nothing is marginal
  const auto records = run_full(s, 5);
  CHECK(records.size() == 5);
  std::set<EffectId> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].index == static_cast<int>(i + 1));
    CHECK(seen.insert(records[i].effect).second);
    CHECK(sum(records[i].probabilities) == doctest::Approx(1.0).epsilon(1e-9));
    if (i > 0) CHECK(records[i].before.mae == records[i - 1].after.mae);
  }
  CHECK_THROWS_AS(next_effect_probabilities(s), ConflictError);
  CHECK(run_full(s, 5).empty());
  CHECK(text_plan(records).find("Step 5: ") != std::string::npos);
  SessionState t = make_session();
  t.set_epsilon(-1e9);
  CHECK(run_full(t, 2).size() == 2);
  CHECK_THROWS_AS(run_full(t, 0), ValidationError);
}

TEST_CASE("sessions persist and reload bit-identically") {
  SessionState s = make_session();
  s.set_epsilon(0.25);
  run_full(s, 3);
  const fs::path dir = fs::temp_directory_path() / "stepfx_test_engine_session";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_session(dir, s);
  const SessionState back = load_session(dir, fixtures::tiny_registry());
  CHECK(back.epsilon() == 0.25);
  CHECK(back.current() == s.current());
  CHECK(back.to_json().dump() == s.to_json().dump());
  write_file(dir / "session.json", "{\"format\": \"other\"}");
  CHECK_THROWS_AS(load_session(dir, fixtures::tiny_registry()), ArtifactError);
  fs::remove_all(dir);
}
