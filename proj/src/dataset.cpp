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

#include "stepfx/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "stepfx/error.hpp"
#include "stepfx/features.hpp"
#include "stepfx/random.hpp"

namespace stepfx {
namespace {

namespace fs = std::filesystem;

constexpr int kDatasetVersion = 1;
constexpr char kFeatureMagic[4] = {'S', 'F', 'X', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kDtypeFloat32 = 1;

// Stream ids for derive_seed.
constexpr std::uint64_t kSubsetStream = 0;
constexpr std::uint64_t kParamStream = 100;
constexpr std::uint64_t kRenderStream = 1000;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::size_t preset_index(const std::string& id) {
  const auto& all = list_presets();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].id == id) return i;
  }
  throw ValidationError("preset", "unknown preset '" + id + "'");
}

nlohmann::json chain_to_json(const EffectChain& chain) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& pv : chain) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, v] : pv.to_map()) params[name] = v;
    out.push_back({{"effect", to_string(pv.effect())}, {"params", params}});
  }
  return out;
}

EffectChain chain_from_json(const nlohmann::json& j) {
  EffectChain chain;
  for (const auto& entry : j) {
    const EffectId e = parse_effect(entry.at("effect").get<std::string>());
    chain.push_back(ParameterVector::from_map(
        e, entry.at("params").get<std::map<std::string, double>>()));
  }
  validate(chain);
  return chain;
}

EffectChain subset_chain(const EffectChain& full, EffectMask mask) {
  EffectChain out;
  for (const auto& pv : full) {
    if (mask & (1u << rack_index(pv.effect()))) out.push_back(pv);
  }
  return out;
}

std::string clip_id(PresetGroup group, std::uint64_t chain_index,
                    const std::string& preset, EffectMask mask) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s-c%05llu-%s-m%02u",
                std::string(to_string(group)).c_str(),
                static_cast<unsigned long long>(chain_index), preset.c_str(), mask);
  return buf;
}

// Key that identifies a rendered state independent of which clip holds it.
std::string state_key(const std::string& preset, std::uint64_t render_seed,
                      const EffectChain& chain) {
  return preset + "|" + std::to_string(render_seed) + "|" + chain_to_json(chain).dump();
}

struct ChainRenders {
  std::vector<ClipRecord> records;
  std::vector<Eigen::MatrixXf> features;
  std::vector<AudioBuffer> audio;
};

ChainRenders render_chain(const GenerateOptions& opt, std::uint64_t chain_index,
                          const std::vector<PresetDescriptor>& presets) {
  ChainRenders out;
  const EffectChain full = sample_chain(opt.seed, chain_index);
  const EffectMask full_mask = mask_of(full);
  const std::uint64_t chain_seed = derive_seed(opt.seed, chain_index);
  for (const auto& preset : presets) {
    const std::uint64_t render_seed =
        derive_seed(chain_seed, kRenderStream + preset_index(preset.id));
    // Every subset of the chain, built from the subset without its last
    // (highest rack index) effect: one effect application per state.
    std::map<EffectMask, AudioBuffer> states;
    states[0] = render_preset(preset, NoteEvent{}, render_seed);
    for (EffectMask m = 1; m <= full_mask; ++m) {
      if ((m & full_mask) != m) continue;
      const int last = std::bit_width(m) - 1;
      const EffectMask prev = m & ~(1u << last);
      const auto& pv = *std::find_if(full.begin(), full.end(), [&](const auto& p) {
        return rack_index(p.effect()) == last;
      });
      states[m] = apply_effect(states.at(prev), pv);
    }
    for (const auto& [m, audio] : states) {
      ClipRecord r;
      r.preset_id = preset.id;
      r.chain_index = chain_index;
      r.render_seed = render_seed;
      r.chain = subset_chain(full, m);
      r.is_target = m == full_mask;
      r.clip_id = clip_id(opt.group, chain_index, preset.id, m);
      r.feature_path = "features/" + r.clip_id + ".f32";
      if (opt.write_audio) r.audio_path = "audio/" + r.clip_id + ".wav";
      out.features.push_back(mel_spectrogram_db<float>(audio));
      if (opt.write_audio) out.audio.push_back(audio);
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace

EffectMask mask_of(const EffectChain& chain) {
  EffectMask m = 0;
  for (const auto& pv : chain) m |= 1u << rack_index(pv.effect());
  return m;
}

// ---------------------------------------------------------------------------
// Records and manifest

nlohmann::json ClipRecord::to_json() const {
  nlohmann::json j = {{"clip_id", clip_id},
                      {"preset", preset_id},
                      {"chain_index", chain_index},
                      {"render_seed", render_seed},
                      {"chain", chain_to_json(chain)},
                      {"is_target", is_target},
                      {"features", feature_path}};
  j["audio"] = audio_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(audio_path);
  return j;
}

ClipRecord ClipRecord::from_json(const nlohmann::json& j) {
  ClipRecord r;
  r.clip_id = j.at("clip_id").get<std::string>();
  r.preset_id = j.at("preset").get<std::string>();
  r.chain_index = j.at("chain_index").get<std::uint64_t>();
  r.render_seed = j.at("render_seed").get<std::uint64_t>();
  r.chain = chain_from_json(j.at("chain"));
  r.is_target = j.at("is_target").get<bool>();
  r.feature_path = j.at("features").get<std::string>();
  if (j.contains("audio") && !j.at("audio").is_null()) {
    r.audio_path = j.at("audio").get<std::string>();
  }
  return r;
}

nlohmann::json Manifest::header() const {
  return {{"format", "stepfx-dataset"},
          {"version", kDatasetVersion},
          {"group", to_string(group)},
          {"seed", seed},
          {"chains", chains},
          {"clips", clips.size()},
          {"note", {{"midi", NoteEvent{}.midi_note},
                    {"velocity", NoteEvent{}.velocity},
                    {"duration_s", NoteEvent{}.duration_s}}},
          {"features", {{"bands", kNumMels},
                        {"frames", kClipFrames},
                        {"dtype", "float32"},
                        {"unit", "dB re clip max, floor -80"}}}};
}

EffectChain sample_chain(std::uint64_t seed, std::uint64_t chain_index) {
  const std::uint64_t chain_seed = derive_seed(seed, chain_index);
  Rng rng(derive_seed(chain_seed, kSubsetStream));
  const EffectMask mask = 1 + static_cast<EffectMask>(rng.index(kAllEffectsMask));
  EffectChain chain;
  for (const EffectId e : kAllEffects) {
    if (mask & (1u << rack_index(e))) {
      chain.push_back(sample_parameters(
          e, derive_seed(chain_seed, kParamStream + static_cast<std::uint64_t>(rack_index(e)))));
    }
  }
  return chain;
}

Manifest generate_clips(const GenerateOptions& opt) {
  if (opt.chains < 1) throw ValidationError("chains", "must be at least 1");
  if (opt.jobs < 1) throw ValidationError("jobs", "must be at least 1");
  const auto presets = list_presets(opt.group);
  {
    std::error_code ec;
    fs::create_directories(opt.out_dir / "features", ec);
    if (ec) {
      throw ArtifactError("cannot create " + (opt.out_dir / "features").string() +
                          ": " + ec.message());
    }
  }

  std::vector<ChainRenders> per_chain(static_cast<std::size_t>(opt.chains));
  auto work = [&](int worker) {
    for (int c = worker; c < opt.chains; c += opt.jobs) {
      ChainRenders r = render_chain(opt, static_cast<std::uint64_t>(c), presets);
      for (std::size_t i = 0; i < r.records.size(); ++i) {
        save_features(opt.out_dir / r.records[i].feature_path, r.features[i]);
        if (opt.write_audio) write_wav(opt.out_dir / r.records[i].audio_path, r.audio[i]);
      }
      r.features.clear();
      r.audio.clear();
      per_chain[static_cast<std::size_t>(c)] = std::move(r);
    }
  };
  if (opt.jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(opt.jobs));
    for (int w = 0; w < opt.jobs; ++w) {
      threads.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Manifest m;
  m.group = opt.group;
  m.seed = opt.seed;
  m.chains = opt.chains;
  for (auto& r : per_chain) {
    for (auto& rec : r.records) m.clips.push_back(std::move(rec));
  }
  write_manifest(opt.out_dir, m);
  return m;
}

void write_manifest(const fs::path& dir, const Manifest& manifest) {
  std::string lines;
  for (const auto& r : manifest.clips) lines += r.to_json().dump() + "\n";
  write_file(dir / "manifest.jsonl", lines);
  write_file(dir / "dataset.json", manifest.header().dump(2) + "\n");
}

Manifest read_manifest(const fs::path& dir) {
  Manifest m;
  try {
    const auto header = nlohmann::json::parse(read_file(dir / "dataset.json"));
    if (header.value("format", "") != "stepfx-dataset") {
      throw ArtifactError(dir.string() + " is not a stepfx dataset");
    }
    if (header.value("version", 0) != kDatasetVersion) {
      throw ArtifactError("dataset version mismatch in " + dir.string());
    }
    m.group = parse_preset_group(header.at("group").get<std::string>());
    m.seed = header.at("seed").get<std::uint64_t>();
    m.chains = header.at("chains").get<int>();
    std::istringstream in(read_file(dir / "manifest.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) m.clips.push_back(ClipRecord::from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

AudioBuffer render_clip(const ClipRecord& record) {
  const AudioBuffer dry =
      render_preset(find_preset(record.preset_id), NoteEvent{}, record.render_seed);
  return apply_chain(dry, record.chain);
}

// ---------------------------------------------------------------------------
// Feature files

void save_features(const fs::path& path, const Eigen::MatrixXf& mel_db) {
  static_assert(std::endian::native == std::endian::little);
  std::string out(kFeatureMagic, 4);
  auto put = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  put(kFeatureVersion);
  put(kDtypeFloat32);
  put(2);
  put(static_cast<std::uint32_t>(mel_db.rows()));
  put(static_cast<std::uint32_t>(mel_db.cols()));
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = mel_db;
  out.append(reinterpret_cast<const char*>(rm.data()),
             static_cast<std::size_t>(rm.size()) * sizeof(float));
  write_file(path, out);
}

Eigen::MatrixXf load_features(const fs::path& path) {
  const std::string bytes = read_file(path);
  auto u32 = [&](std::size_t pos) {
    if (pos + 4 > bytes.size()) throw ArtifactError(path.string() + ": truncated feature file");
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    return v;
  };
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw ArtifactError(path.string() + ": not a feature file");
  }
  if (u32(4) != kFeatureVersion) throw ArtifactError(path.string() + ": version mismatch");
  if (u32(8) != kDtypeFloat32) throw ArtifactError(path.string() + ": unsupported dtype");
  if (u32(12) != 2) throw ArtifactError(path.string() + ": expected a 2-D matrix");
  const std::uint32_t rows = u32(16), cols = u32(20);
  const std::size_t need = 24 + static_cast<std::size_t>(rows) * cols * sizeof(float);
  if (bytes.size() != need) throw ArtifactError(path.string() + ": payload size mismatch");
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  std::memcpy(rm.data(), bytes.data() + 24, need - 24);
  return rm;
}

FeatureStore load_feature_store(const fs::path& dir, const Manifest& m) {
  FeatureStore store;
  store.reserve(m.clips.size());
  for (const auto& r : m.clips) store.push_back(load_features(dir / r.feature_path));
  return store;
}

// ---------------------------------------------------------------------------
// Pairs

PairSet build_effect_pairs(const Manifest& manifest, EffectId effect,
                           std::size_t cap, std::uint64_t seed) {
  const int e = rack_index(effect);
  const EffectMask before = (1u << e) - 1;  // effects earlier in the rack
  // key -> (currents, targets), in first-seen order for determinism.
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>
      sets;
  for (std::size_t i = 0; i < manifest.clips.size(); ++i) {
    const ClipRecord& r = manifest.clips[i];
    const EffectMask m = mask_of(r.chain);
    std::string key;
    bool is_target = false;
    if (m & (1u << e)) {
      if ((m & ~before) != (1u << e)) continue;  // effect is not last
      EffectChain rest;
      for (const auto& pv : r.chain) {
        if (pv.effect() != effect) rest.push_back(pv);
      }
      key = state_key(r.preset_id, r.render_seed, rest);
      is_target = true;
    } else {
      if (m & ~before) continue;  // holds an effect after `effect`
      key = state_key(r.preset_id, r.render_seed, r.chain);
    }
    auto [it, inserted] = sets.try_emplace(key);
    if (inserted) keys.push_back(key);
    (is_target ? it->second.second : it->second.first).push_back(i);
  }

  PairSet out;
  out.effect = effect;
  for (const auto& key : keys) {
    const auto& [currents, targets] = sets.at(key);
    for (const std::size_t c : currents) {
      for (const std::size_t t : targets) {
        const ClipRecord& tr = manifest.clips[t];
        const auto it = std::find_if(tr.chain.begin(), tr.chain.end(),
                                     [&](const auto& pv) { return pv.effect() == effect; });
        out.pairs.push_back({c, t, *it, tr.chain_index});
      }
    }
  }
  out.total = out.pairs.size();
  if (out.total == 0) {
    throw ValidationError("effect", std::string(to_string(effect)) +
                                        " is absent from every chain in the manifest");
  }
  if (cap > 0 && out.total > cap) {
    std::vector<std::size_t> idx(out.total);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 0x9a1f));
    for (std::size_t i = 0; i < cap; ++i) {
      std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<PairExample> kept;
    kept.reserve(cap);
    for (const std::size_t i : idx) kept.push_back(out.pairs[i]);
    out.pairs = std::move(kept);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequences

std::string_view to_string(OrderingPolicy policy) {
  switch (policy) {
    case OrderingPolicy::kGreedyImprovement: return "greedy-improvement";
    case OrderingPolicy::kRandomPermutation: return "random-permutation";
  }
  return "?";
}

OrderingPolicy parse_policy(std::string_view name) {
  if (name == "greedy-improvement" || name == "greedy") {
    return OrderingPolicy::kGreedyImprovement;
  }
  if (name == "random-permutation" || name == "random") {
    return OrderingPolicy::kRandomPermutation;
  }
  throw ValidationError("policy", "unknown ordering policy '" + std::string(name) + "'");
}

namespace {

// (preset, render seed, mask) -> clip index, for clips of one chain.
using StateIndex = std::map<std::tuple<std::string, std::uint64_t, EffectMask>, std::size_t>;

StateIndex index_states(const Manifest& m, std::uint64_t chain_index) {
  StateIndex idx;
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    const auto& r = m.clips[i];
    if (r.chain_index == chain_index) idx[{r.preset_id, r.render_seed, mask_of(r.chain)}] = i;
  }
  return idx;
}

std::size_t find_state(const StateIndex& idx, const ClipRecord& target, EffectMask mask) {
  const auto it = idx.find({target.preset_id, target.render_seed, mask});
  if (it == idx.end()) {
    throw ArtifactError("manifest lacks the intermediate state " + std::to_string(mask) +
                        " for " + target.clip_id);
  }
  return it->second;
}

std::vector<EffectId> greedy_from(const Manifest& m, const FeatureStore& f,
                                  const StateIndex& idx, std::size_t target) {
  const ClipRecord& t = m.clips[target];
  const Eigen::MatrixXf& goal = f.at(target);
  const double base = mel_mae(f.at(find_state(idx, t, 0)), goal);
  std::vector<std::pair<double, EffectId>> gains;
  for (const auto& pv : t.chain) {
    const std::size_t solo = find_state(idx, t, 1u << rack_index(pv.effect()));
    gains.emplace_back(base - mel_mae(f.at(solo), goal), pv.effect());
  }
  std::stable_sort(gains.begin(), gains.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<EffectId> order;
  for (const auto& g : gains) order.push_back(g.second);
  return order;
}

}  // namespace

std::vector<EffectId> greedy_order(const Manifest& manifest, const FeatureStore& features,
                                   std::size_t target_clip) {
  const auto idx = index_states(manifest, manifest.clips.at(target_clip).chain_index);
  return greedy_from(manifest, features, idx, target_clip);
}

std::vector<SequenceExample> build_rnn_sequences(const Manifest& manifest,
                                                 const FeatureStore& features,
                                                 OrderingPolicy policy,
                                                 std::uint64_t seed) {
  if (features.size() != manifest.clips.size()) {
    throw ValidationError("features", "feature store does not match the manifest");
  }
  // Group clip indices by chain once.
  std::map<std::uint64_t, StateIndex> by_chain;
  for (std::size_t i = 0; i < manifest.clips.size(); ++i) {
    const auto& r = manifest.clips[i];
    by_chain[r.chain_index][{r.preset_id, r.render_seed, mask_of(r.chain)}] = i;
  }
  std::vector<SequenceExample> out;
  for (std::size_t i = 0; i < manifest.clips.size(); ++i) {
    const ClipRecord& t = manifest.clips[i];
    if (!t.is_target || t.chain.empty()) continue;
    const StateIndex& idx = by_chain.at(t.chain_index);
    std::vector<EffectId> order;
    if (policy == OrderingPolicy::kGreedyImprovement) {
      order = greedy_from(manifest, features, idx, i);
    } else {
      for (const auto& pv : t.chain) order.push_back(pv.effect());
      Rng rng(derive_seed(seed, fnv1a(t.clip_id)));
      rng.shuffle(order);
    }
    for (std::size_t j = 0; j < order.size(); ++j) {
      SequenceExample ex;
      ex.target = i;
      ex.order = order;
      ex.label = order[j];
      ex.chain_index = t.chain_index;
      EffectMask mask = 0;
      std::array<bool, kNumEffects> used{};
      for (std::size_t s = 0; s <= j; ++s) {
        if (s > 0) {
          mask |= 1u << rack_index(order[s - 1]);
          used[static_cast<std::size_t>(rack_index(order[s - 1]))] = true;
        }
        ex.states.push_back(find_state(idx, t, mask));
        ex.used.push_back(used);
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

Split split_dataset(std::span<const std::uint64_t> groups, double val_frac,
                    double test_frac, std::uint64_t seed) {
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0) {
    throw ValidationError("fractions", "validation + test fractions must be in [0, 1)");
  }
  if (groups.size() < 20) {
    throw ValidationError("dataset", "needs at least 20 examples to split, got " +
                                         std::to_string(groups.size()));
  }
  std::vector<std::uint64_t> unique(groups.begin(), groups.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  Rng rng(derive_seed(seed, 0x5b17));
  rng.shuffle(unique);

  std::map<std::uint64_t, std::size_t> size;
  for (const auto g : groups) ++size[g];
  const auto n = static_cast<double>(groups.size());
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * n));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * n));
  std::map<std::uint64_t, int> part;  // 0 train, 1 val, 2 test
  std::size_t in_test = 0, in_val = 0;
  for (const auto g : unique) {
    if (in_test < n_test) {
      part[g] = 2;
      in_test += size[g];
    } else if (in_val < n_val) {
      part[g] = 1;
      in_val += size[g];
    } else {
      part[g] = 0;
    }
  }
  Split s;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    switch (part[groups[i]]) {
      case 0: s.train.push_back(i); break;
      case 1: s.val.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  return s;
}

std::vector<std::uint64_t> chain_groups(std::span<const PairExample> pairs) {
  std::vector<std::uint64_t> g;
  for (const auto& p : pairs) g.push_back(p.chain_index);
  return g;
}

std::vector<std::uint64_t> chain_groups(std::span<const SequenceExample> seqs) {
  std::vector<std::uint64_t> g;
  for (const auto& s : seqs) g.push_back(s.chain_index);
  return g;
}

std::string fingerprint(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

}  // namespace stepfx
