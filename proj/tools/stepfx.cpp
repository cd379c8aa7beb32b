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

// stepfx command line. Exit codes: 0 success, 2 bad input, 3 missing or
// corrupt artifacts, 1 anything else.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "stepfx/audio.hpp"
#include "stepfx/dataset.hpp"
#include "stepfx/engine.hpp"
#include "stepfx/error.hpp"
#include "stepfx/pipeline.hpp"
#include "stepfx/render.hpp"
#include "stepfx/service.hpp"

namespace fs = std::filesystem;
using namespace stepfx;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string profile = "full";
  std::string data_dir = "data";
  std::string models_dir = "models";
};

RunConfig resolve(const Globals& g) {
  const RunConfig base = RunConfig::profile(g.profile);
  RunConfig c = g.config.empty() ? base : RunConfig::load(g.config, base);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void write_report(const std::optional<std::string>& out, const std::string& name,
                  const std::string& csv) {
  if (!out) return;
  fs::create_directories(*out);
  write_file(fs::path(*out) / name, csv);
}

std::vector<EffectId> effects_arg(const std::string& name) {
  if (name == "all") return {kAllEffects.begin(), kAllEffects.end()};
  return {parse_effect(name)};
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stepfx: iterative effect-chain sound matching"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (overrides the config file)");
  app.add_option("--profile", g.profile, "Base configuration: full or desk")
      ->check(CLI::IsMember({"full", "desk"}))
      ->capture_default_str();
  app.add_option("--config", g.config, "JSON merged over the profile (see docs/formats.md)");
  app.add_option("--data-dir", g.data_dir, "Dataset directory")->capture_default_str();
  app.add_option("--models-dir", g.models_dir, "Model directory")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render clips and features for one preset group");
  std::optional<std::string> gen_group, gen_out;
  std::optional<int> gen_chains, gen_jobs;
  bool gen_audio = false;
  gen->add_option("--group", gen_group, "basic, adsr or lfo");
  gen->add_option("--chains", gen_chains, "Sampled effect chains");
  gen->add_option("--out", gen_out, "Output directory (default: --data-dir)");
  gen->add_option("--jobs", gen_jobs, "Worker threads");
  gen->add_flag("--audio", gen_audio, "Also write WAV files");

  // train-effect
  auto* te = app.add_subcommand("train-effect", "Train parameter models");
  std::string te_effect = "all";
  te->add_option("--effect", te_effect, "Effect name or 'all'")->capture_default_str();

  // train-rnn
  auto* tr = app.add_subcommand("train-rnn", "Train the next-effect model");

  // eval-*
  std::optional<std::string> eval_out;
  auto* ee = app.add_subcommand("eval-effects", "Per-effect error reduction table");
  std::string ee_predictor = "model";
  ee->add_option("--predictor", ee_predictor, "model, oracle or untrained")->capture_default_str();
  ee->add_option("--out", eval_out, "Directory for CSV output");
  auto* er = app.add_subcommand("eval-rnn", "Next-effect accuracy table");
  er->add_option("--out", eval_out, "Directory for CSV output");
  auto* es = app.add_subcommand("eval-system", "Per-step error table over held-out targets");
  es->add_option("--out", eval_out, "Directory for CSV output");

  // run
  auto* run = app.add_subcommand("run", "Match one input clip to one target clip");
  std::string run_input, run_target, run_out;
  std::optional<int> run_steps;
  std::optional<double> run_eps;
  run->add_option("--input", run_input, "Input WAV (44.1 kHz, 1 s)")->required();
  run->add_option("--target", run_target, "Target WAV (44.1 kHz, 1 s)")->required();
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--max-steps", run_steps, "Stop after this many steps");
  run->add_option("--epsilon", run_eps, "Marginal-step threshold in dB MAE");

  // render-fig
  auto* fig = app.add_subcommand("render-fig", "Spectrogram progression of a saved session");
  std::string fig_session, fig_out;
  fig->add_option("--session", fig_session, "Session directory written by 'run'")->required();
  fig->add_option("--out", fig_out, "Output directory")->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Local HTTP session service");
  std::string host = "127.0.0.1";
  int port = 8750;
  std::optional<std::string> session_dir;
  bool queue = false;
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port)->capture_default_str();
  srv->add_option("--session-dir", session_dir, "Persist sessions here");
  srv->add_flag("--queue", queue, "Queue concurrent mutations instead of answering 409");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve(g);
    const fs::path data = g.data_dir;
    const fs::path models = g.models_dir;

    if (*gen) {
      GenerateOptions o;
      o.group = gen_group ? parse_preset_group(*gen_group) : cfg.group;
      o.chains = gen_chains.value_or(cfg.chains);
      o.seed = cfg.seed;
      o.out_dir = gen_out ? fs::path(*gen_out) : data;
      o.write_audio = gen_audio;
      o.jobs = gen_jobs.value_or(cfg.jobs);
      const Manifest m = generate_clips(o);
      std::printf("%zu clips from %d chains written to %s\n", m.clips.size(), m.chains,
                  o.out_dir.string().c_str());
    } else if (*te) {
      Workspace ws(data, cfg);
      fs::create_directories(models);
      for (const EffectId e : effects_arg(te_effect)) {
        cfg.cnn_train.on_epoch = [e](const EpochRecord& r) {
          std::fprintf(stderr, "%s epoch %d train %.5f val %.5f\n",
                       std::string(to_string(e)).c_str(), r.epoch, r.train_loss, r.val_loss);
        };
        const TrainedEffect t = train_effect(ws, e, cfg);
        save_model(effect_model_path(models, e), *t.model);
        write_history(models, std::string(to_string(e)), t.history,
                      {{"train_pairs", t.train_pairs}, {"val_pairs", t.val_pairs}});
        std::printf("%s: %d epochs, best %d (%s), %zu train pairs\n",
                    std::string(to_string(e)).c_str(),
                    static_cast<int>(t.history.epochs.size()), t.history.best_epoch,
                    t.history.stop_reason.c_str(), t.train_pairs);
      }
    } else if (*tr) {
      Workspace ws(data, cfg);
      fs::create_directories(models);
      cfg.rnn_train.on_epoch = [](const EpochRecord& r) {
        std::fprintf(stderr, "rnn epoch %d train %.5f val %.5f acc %.3f\n", r.epoch,
                     r.train_loss, r.val_loss, r.val_accuracy);
      };
      const TrainedRnn t = train_next_effect(ws, cfg);
      save_model(rnn_model_path(models), *t.model);
      write_history(models, "rnn", t.history, {{"val_accuracy", t.val_score.accuracy}});
      std::printf("rnn: %d epochs, val accuracy %.4f\n",
                  static_cast<int>(t.history.epochs.size()), t.val_score.accuracy);
    } else if (*ee) {
      Workspace ws(data, cfg);
      const PredictorKind kind = parse_predictor(ee_predictor);
      std::shared_ptr<const ModelRegistry> reg;
      if (kind == PredictorKind::kModel) reg = ModelRegistry::load(models);
      const EffectEvalReport rep = eval_effects(ws, reg.get(), kind, cfg);
      std::fputs(rep.text().c_str(), stdout);
      write_report(eval_out, "effects_" + ee_predictor + ".csv", rep.csv());
    } else if (*er) {
      Workspace ws(data, cfg);
      const auto reg = ModelRegistry::load(models);
      const RnnEvalReport rep = eval_rnn(ws, reg->next_effect(), cfg);
      std::fputs(rep.text().c_str(), stdout);
      write_report(eval_out, "rnn.csv", rep.csv());
    } else if (*es) {
      Workspace ws(data, cfg);
      const SystemReport rep = eval_system(ws, ModelRegistry::load(models), cfg);
      std::fputs(rep.text().c_str(), stdout);
      write_report(eval_out, "system_raw.csv", rep.raw_csv());
      write_report(eval_out, "system_summary.csv", rep.summary_csv());
    } else if (*run) {
      SessionState state(read_wav(run_input), read_wav(run_target), ModelRegistry::load(models));
      state.set_epsilon(run_eps.value_or(cfg.epsilon));
      const auto records = run_full(state, run_steps.value_or(cfg.max_steps));
      const fs::path out = run_out;
      save_session(out, state);
      for (std::size_t k = 1; k < state.state_count(); ++k) {
        write_wav(out / ("step_" + std::to_string(k) + ".wav"), state.state_audio(k));
      }
      nlohmann::json steps = nlohmann::json::array();
      for (const auto& r : records) steps.push_back(r.to_json());
      write_file(out / "steps.json", steps.dump(2) + "\n");
      const std::string plan = text_plan(records);
      write_file(out / "plan.txt", plan);
      std::fputs(plan.c_str(), stdout);
    } else if (*fig) {
      const SessionState state = load_session(fig_session, ModelRegistry::load(models));
      for (const auto& p : render_progression(state, fig_out)) {
        std::printf("%s\n", p.string().c_str());
      }
    } else if (*srv) {
      ServiceConfig sc;
      if (session_dir) sc.session_dir = fs::path(*session_dir);
      sc.queue_mutations = queue;
      sc.seed = cfg.seed;
      sc.epsilon = cfg.epsilon;
      Service service(ModelRegistry::load(models), sc);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), port);
      if (!service.listen(host, port)) {
        std::fprintf(stderr, "error: cannot bind %s:%d\n", host.c_str(), port);
        return 1;
      }
      g_service = nullptr;
    }
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
