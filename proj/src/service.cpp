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

#include "stepfx/service.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cstdio>
#include <ctime>
#include <map>
#include <mutex>
#include <shared_mutex>

#include "httplib.h"
#include "json.hpp"
#include "stepfx/error.hpp"
#include "stepfx/random.hpp"
#include "stepfx/render.hpp"
#include "stepfx/synth.hpp"

namespace stepfx {

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string clean;
  for (const char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  }
  if (clean.size() % 4 != 0) throw ValidationError("wav_base64", "length is not a multiple of 4");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ValidationError("wav_base64", "malformed base64");
  std::size_t pad = 0;
  for (auto it = clean.rbegin(); it != clean.rend() && *it == '='; ++it) ++pad;
  out.resize(static_cast<std::size_t>(n) - std::min<std::size_t>(pad, 2));
  return out;
}

namespace {

using nlohmann::json;

struct SessionEntry {
  std::shared_mutex mu;
  std::unique_ptr<SessionState> state;
  std::optional<EffectChain> hidden;  // challenge ground truth
  bool revealed = false;
  std::string created;
};

json chain_json(const EffectChain& chain) {
  json out = json::array();
  for (const auto& pv : chain) {
    json params = json::object();
    for (const auto& [k, v] : pv.to_map()) params[k] = v;
    out.push_back({{"effect", to_string(pv.effect())}, {"params", params}});
  }
  return out;
}

ParameterVector params_from_json(EffectId e, const json& j) {
  if (!j.is_object()) throw ValidationError("params", "must be an object");
  std::map<std::string, double> values;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ValidationError(k, "must be a number");
    values[k] = v.get<double>();
  }
  for (const auto& spec : effect_schema(e)) {
    if (!values.count(spec.name)) throw ValidationError(spec.name, "missing parameter");
  }
  for (const auto& [k, v] : values) {
    const auto& schema = effect_schema(e);
    if (std::none_of(schema.begin(), schema.end(), [&](const auto& s) { return s.name == k; })) {
      throw ValidationError(k, "unknown parameter for " + std::string(to_string(e)));
    }
  }
  ParameterVector pv = ParameterVector::from_map(e, values);
  validate(pv);
  return pv;
}

EffectId effect_from_json(const json& j) {
  if (!j.is_string()) throw ValidationError("effect", "must be a string");
  return parse_effect(j.get<std::string>());
}

EffectChain chain_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("chain", "must be an array");
  EffectChain chain;
  for (const auto& entry : j) {
    if (!entry.is_object() || !entry.contains("effect") || !entry.contains("params")) {
      throw ValidationError("chain", "entries need effect and params");
    }
    const EffectId e = effect_from_json(entry.at("effect"));
    chain.push_back(params_from_json(e, entry.at("params")));
  }
  validate(chain);
  return chain;
}

AudioBuffer clip_from_json(const json& j, const std::string& field) {
  if (!j.is_object()) throw ValidationError(field, "must be an object");
  if (j.contains("wav_base64")) {
    if (!j.at("wav_base64").is_string()) throw ValidationError(field, "wav_base64 must be a string");
    try {
      return decode_wav(base64_decode(j.at("wav_base64").get<std::string>()));
    } catch (const ValidationError& e) {
      throw ValidationError(field, e.what());
    }
  }
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ValidationError("preset", "must be a string");
    const PresetDescriptor& preset = find_preset(j.at("preset").get<std::string>());
    std::uint64_t seed = 0;
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) {
        throw ValidationError("seed", "must be a non-negative integer");
      }
      seed = j.at("seed").get<std::uint64_t>();
    }
    NoteEvent note;
    if (j.contains("midi_note")) {
      if (!j.at("midi_note").is_number_integer()) throw ValidationError("midi_note", "must be an integer");
      note.midi_note = j.at("midi_note").get<int>();
      midi_to_freq(note.midi_note);  // range check
    }
    const AudioBuffer dry = render_preset(preset, note, seed);
    return j.contains("chain") ? apply_chain(dry, chain_from_json(j.at("chain"))) : dry;
  }
  throw ValidationError(field, "expects wav_base64 or preset");
}

EffectChain sample_hidden_chain(std::uint64_t seed, int count) {
  if (count < 1 || count > kNumEffects) {
    throw ValidationError("effects", "challenge needs 1 to 5 effects");
  }
  Rng rng(derive_seed(seed, 0));
  std::vector<EffectId> pool(kAllEffects.begin(), kAllEffects.end());
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  EffectChain chain;
  for (const EffectId e : pool) {
    chain.push_back(sample_parameters(e, derive_seed(seed, 100 + static_cast<std::uint64_t>(rack_index(e)))));
  }
  return chain;
}

std::string now_iso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json schemas_json() {
  json out = json::array();
  for (const EffectId e : kAllEffects) {
    json params = json::array();
    for (const auto& s : effect_schema(e)) {
      json ranges = json::array();
      for (const auto& r : s.ranges) ranges.push_back({r.lo, r.hi});
      json p = {{"name", s.name},
                {"kind", to_string(s.kind)},
                {"ranges", ranges},
                {"unit", s.physical_unit},
                {"physical_map", s.physical_map}};
      if (s.kind == ParamKind::kCategorical) {
        p["classes"] = s.classes;
        p["class_tokens"] = s.class_tokens;
      }
      params.push_back(p);
    }
    out.push_back({{"effect", to_string(e)}, {"rack_index", rack_index(e)}, {"params", params}});
  }
  return out;
}

json presets_json() {
  json out = json::array();
  for (const auto& p : list_presets()) {
    json osc = json::array();
    for (const auto& o : p.oscillators) {
      osc.push_back({{"shape", to_string(o.shape)},
                     {"detune_cents", o.detune_cents},
                     {"level", o.level}});
    }
    json j = {{"id", p.id}, {"group", to_string(p.group)}, {"oscillators", osc}};
    if (p.modulation) {
      j["lfo"] = {{"rate_hz", p.modulation->rate_hz},
                  {"depth", p.modulation->depth},
                  {"destination", to_string(p.modulation->destination)}};
    }
    out.push_back(j);
  }
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::string& field = "") {
  json body = {{"error", message}, {"status", status}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError("body", std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

struct Service::Impl {
  std::shared_ptr<const ModelRegistry> models;
  ServiceConfig config;
  httplib::Server server;
  mutable std::mutex map_mu;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions;
  std::uint64_t counter = 0;

  Impl(std::shared_ptr<const ModelRegistry> m, ServiceConfig c)
      : models(std::move(m)), config(std::move(c)) {
    if (config.session_dir) restore_sessions();
    routes();
  }

  // -- sessions -------------------------------------------------------------

  std::string next_id() {
    std::lock_guard lock(map_mu);
    for (;;) {
      char buf[20];
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(derive_seed(config.seed, ++counter)));
      if (!sessions.count(buf)) return buf;
    }
  }

  std::shared_ptr<SessionEntry> find(const std::string& id) const {
    std::lock_guard lock(map_mu);
    const auto it = sessions.find(id);
    if (it == sessions.end()) throw NotFoundError("unknown session " + id);
    return it->second;
  }

  // Exclusive lock for a mutation; 409 when busy unless queueing.
  std::unique_lock<std::shared_mutex> lock_for_write(SessionEntry& e) const {
    if (config.queue_mutations) return std::unique_lock(e.mu);
    std::unique_lock lock(e.mu, std::try_to_lock);
    if (!lock.owns_lock()) throw ConflictError("session is busy with another request");
    return lock;
  }

  void persist(const std::string& id, const SessionEntry& e) const {
    if (!config.session_dir) return;
    const auto dir = *config.session_dir / id;
    save_session(dir, *e.state);
    json meta = {{"created", e.created}, {"revealed", e.revealed}};
    if (e.hidden) meta["hidden"] = chain_json(*e.hidden);
    write_file(dir / "meta.json", meta.dump(2) + "\n");
  }

  void restore_sessions() {
    std::error_code ec;
    if (!std::filesystem::is_directory(*config.session_dir, ec)) return;
    std::vector<std::filesystem::path> dirs;
    for (const auto& d : std::filesystem::directory_iterator(*config.session_dir)) {
      if (d.is_directory()) dirs.push_back(d.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      auto e = std::make_shared<SessionEntry>();
      e->state = std::make_unique<SessionState>(load_session(d, models));
      const json meta = json::parse(read_file(d / "meta.json"));
      e->created = meta.value("created", "");
      e->revealed = meta.value("revealed", false);
      if (meta.contains("hidden")) e->hidden = chain_from_json(meta.at("hidden"));
      sessions[d.filename().string()] = std::move(e);
    }
  }

  json session_json(const std::string& id, const SessionEntry& e) const {
    const SessionState& s = *e.state;
    json j = s.to_json();
    j["id"] = id;
    j["created"] = e.created;
    j["challenge"] = e.hidden.has_value();
    j["epsilon"] = s.epsilon();
    j["state_count"] = s.state_count();
    const std::string base = "/sessions/" + id;
    json spectrograms = json::array(), audio = json::array();
    for (std::size_t k = 0; k < s.state_count(); ++k) {
      spectrograms.push_back(base + "/spectrogram/" + std::to_string(k));
      audio.push_back(base + "/audio/" + std::to_string(k));
    }
    j["spectrograms"] = {{"states", spectrograms}, {"target", base + "/spectrogram/target"}};
    j["audio"] = {{"states", audio}, {"target", base + "/audio/target"}};
    if (e.hidden && e.revealed) j["hidden_chain"] = chain_json(*e.hidden);
    return j;
  }

  // -- routes ---------------------------------------------------------------

  template <typename Fn>
  auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what(), e.field());
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  static std::size_t state_index(const std::string& text, const SessionState& s) {
    std::size_t k = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, k);
    if (ec != std::errc() || ptr != end || k >= s.state_count()) {
      throw NotFoundError("no state " + text);
    }
    return k;
  }

  void routes() {
    server.Get("/health", guarded([](const auto&, auto& res) {
      send_json(res, 200, {{"status", "ok"}});
    }));
    server.Get("/schemas", guarded([](const auto&, auto& res) {
      send_json(res, 200, schemas_json());
    }));
    server.Get("/presets", guarded([](const auto&, auto& res) {
      send_json(res, 200, presets_json());
    }));

    server.Post("/sessions", guarded([this](const auto& req, auto& res) { create(req, res); }));

    server.Get(R"(/sessions/([0-9a-f]+))", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto e = find(id);
      std::shared_lock lock(e->mu);
      send_json(res, 200, session_json(id, *e));
    }));

    server.Delete(R"(/sessions/([0-9a-f]+))", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto e = find(id);
      auto lock = lock_for_write(*e);
      {
        std::lock_guard map_lock(map_mu);
        sessions.erase(id);
      }
      if (config.session_dir) std::filesystem::remove_all(*config.session_dir / id);
      send_json(res, 200, {{"deleted", id}});
    }));

    server.Get(R"(/sessions/([0-9a-f]+)/suggest)", guarded([this](const auto& req, auto& res) {
      auto e = find(req.matches[1]);
      std::shared_lock lock(e->mu);
      send_json(res, 200, suggest_step(*e->state).to_json());
    }));

    server.Post(R"(/sessions/([0-9a-f]+)/steps)", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto e = find(id);
      const json body = parse_body(req);
      if (!body.contains("effect")) throw ValidationError("effect", "missing");
      if (!body.contains("params")) throw ValidationError("params", "missing");
      const EffectId effect = effect_from_json(body.at("effect"));
      const ParameterVector pv = params_from_json(effect, body.at("params"));
      auto lock = lock_for_write(*e);
      const StepRecord r = apply_step(*e->state, pv);
      persist(id, *e);
      send_json(res, 201, r.to_json());
    }));

    server.Delete(R"(/sessions/([0-9a-f]+)/steps/last)",
                  guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto e = find(id);
      auto lock = lock_for_write(*e);
      undo_step(*e->state);
      persist(id, *e);
      send_json(res, 200, session_json(id, *e));
    }));

    server.Post(R"(/sessions/([0-9a-f]+)/reveal)", guarded([this](const auto& req, auto& res) {
      const std::string id = req.matches[1];
      auto e = find(id);
      auto lock = lock_for_write(*e);
      if (!e->hidden) throw ConflictError("session has no hidden target chain");
      e->revealed = true;
      persist(id, *e);
      json applied = json::array();
      for (const auto& r : e->state->history()) applied.push_back(to_string(r.effect));
      send_json(res, 200, {{"hidden_chain", chain_json(*e->hidden)}, {"applied", applied}});
    }));

    server.Get(R"(/sessions/([0-9a-f]+)/audio/(\w+))", guarded([this](const auto& req, auto& res) {
      auto e = find(req.matches[1]);
      std::shared_lock lock(e->mu);
      const std::string which = req.matches[2];
      const AudioBuffer& a = which == "target" ? e->state->target()
                                               : e->state->state_audio(state_index(which, *e->state));
      res.status = 200;
      res.set_content(encode_wav(a), "audio/wav");
    }));

    server.Get(R"(/sessions/([0-9a-f]+)/spectrogram/(\w+))",
               guarded([this](const auto& req, auto& res) {
      auto e = find(req.matches[1]);
      std::shared_lock lock(e->mu);
      const std::string which = req.matches[2];
      const Eigen::MatrixXf& m = which == "target"
                                     ? e->state->target_mel_db()
                                     : e->state->state_mel_db(state_index(which, *e->state));
      res.status = 200;
      res.set_content(encode_png(spectrogram_image(m)), "image/png");
    }));
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    if (!body.is_object()) throw ValidationError("body", "must be a JSON object");
    if (!body.contains("input")) throw ValidationError("input", "missing");
    if (!body.contains("target")) throw ValidationError("target", "missing");
    AudioBuffer input = clip_from_json(body.at("input"), "input");
    auto e = std::make_shared<SessionEntry>();
    AudioBuffer target;
    const json& t = body.at("target");
    if (t.is_object() && t.contains("challenge")) {
      const json& c = t.at("challenge");
      if (!c.is_object()) throw ValidationError("challenge", "must be an object");
      const int count = c.value("effects", 2);
      const std::uint64_t seed = c.contains("seed") ? c.at("seed").get<std::uint64_t>()
                                                    : derive_seed(config.seed, 1u << 20 | counter);
      e->hidden = sample_hidden_chain(seed, count);
      target = apply_chain(input, *e->hidden);
    } else {
      target = clip_from_json(t, "target");
    }
    e->created = now_iso();
    e->state = std::make_unique<SessionState>(std::move(input), std::move(target), models);
    double epsilon = config.epsilon;
    if (body.contains("epsilon")) {
      if (!body.at("epsilon").is_number()) throw ValidationError("epsilon", "must be a number");
      epsilon = body.at("epsilon").get<double>();
    }
    e->state->set_epsilon(epsilon);
    const std::string id = next_id();
    {
      std::lock_guard lock(map_mu);
      sessions[id] = e;
    }
    persist(id, *e);
    std::shared_lock lock(e->mu);
    send_json(res, 201, session_json(id, *e));
  }
};

Service::Service(std::shared_ptr<const ModelRegistry> models, ServiceConfig config)
    : impl_(std::make_unique<Impl>(std::move(models), std::move(config))) {}

Service::~Service() { stop(); }

bool Service::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int Service::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

void Service::serve() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->map_mu);
  return impl_->sessions.size();
}

}  // namespace stepfx
