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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "stepfx/effects.hpp"
#include "stepfx/synth.hpp"

namespace stepfx {

/// Bit e (rack index) set for every effect in a chain.
using EffectMask = std::uint32_t;
inline constexpr EffectMask kAllEffectsMask = (1u << kNumEffects) - 1;

EffectMask mask_of(const EffectChain& chain);

/// One rendered clip: a preset note with a subset of a sampled chain
/// applied in rack order.
struct ClipRecord {
  std::string clip_id;
  std::string preset_id;
  std::uint64_t chain_index = 0;  // sampled chain, shared by the group's presets
  std::uint64_t render_seed = 0;  // oscillator and LFO start phases
  EffectChain chain;              // rack order
  bool is_target = false;         // the full sampled chain
  std::string audio_path;         // relative to the dataset root; may be empty
  std::string feature_path;       // relative to the dataset root

  nlohmann::json to_json() const;
  static ClipRecord from_json(const nlohmann::json& j);
};

struct Manifest {
  PresetGroup group = PresetGroup::kBasic;
  std::uint64_t seed = 0;
  int chains = 0;
  std::vector<ClipRecord> clips;

  nlohmann::json header() const;
};

struct GenerateOptions {
  PresetGroup group = PresetGroup::kBasic;
  int chains = 500;
  std::uint64_t seed = 7;
  std::filesystem::path out_dir;
  bool write_audio = false;
  int jobs = 1;
};

/// Samples `chains` nonempty effect subsets (uniform over the 31) with
/// sample_parameters, and for each preset of the group renders the dry
/// note and every sub-subset of the chain. Writes dataset.json,
/// manifest.jsonl and features/*.f32 (plus audio/*.wav when asked).
Manifest generate_clips(const GenerateOptions& options);

/// Deterministic effect subset and parameters for one chain index.
EffectChain sample_chain(std::uint64_t seed, std::uint64_t chain_index);

void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& dir);

/// Re-renders a clip from (preset, render seed, chain).
AudioBuffer render_clip(const ClipRecord& record);

/// Feature file: "SFXF", u32 version 1, u32 dtype 1 (float32), u32 ndim,
/// u32 dims[ndim], then row-major little-endian float32 (bands x frames).
void save_features(const std::filesystem::path& path, const Eigen::MatrixXf& mel_db);
Eigen::MatrixXf load_features(const std::filesystem::path& path);

/// Mel dB matrices for every clip, in manifest order.
using FeatureStore = std::vector<Eigen::MatrixXf>;
FeatureStore load_feature_store(const std::filesystem::path& dir, const Manifest& m);

// ---------------------------------------------------------------------------
// CNN pairs

struct PairExample {
  std::size_t current = 0;  // clip index
  std::size_t target = 0;   // clip index
  ParameterVector params{EffectId::kCompressor};  // labels for the effect
  std::uint64_t chain_index = 0;
};

struct PairSet {
  EffectId effect = EffectId::kCompressor;
  std::vector<PairExample> pairs;
  std::size_t total = 0;  // Cartesian count before the cap
};

/// Clips are compatible when they share preset, render seed and every
/// parameter of the current chain; a target is current + effect where the
/// effect comes after all current effects in rack order, so re-applying
/// the labeled effect to the current audio reproduces the target exactly.
/// Each compatible set contributes |currents| x |targets| pairs; the result
/// is uniformly subsampled to `cap` (0 means no cap).
PairSet build_effect_pairs(const Manifest& manifest, EffectId effect,
                           std::size_t cap, std::uint64_t seed);

// ---------------------------------------------------------------------------
// RNN sequences

enum class OrderingPolicy { kGreedyImprovement, kRandomPermutation };

std::string_view to_string(OrderingPolicy policy);
OrderingPolicy parse_policy(std::string_view name);

struct SequenceExample {
  std::size_t target = 0;           // clip index of the full chain
  std::vector<std::size_t> states;  // clip index per step, states[0] = dry
  std::vector<std::array<bool, kNumEffects>> used;  // cumulative, per step
  EffectId label = EffectId::kCompressor;
  std::vector<EffectId> order;  // full step order of the chain
  std::uint64_t chain_index = 0;

  int step() const noexcept { return static_cast<int>(states.size()); }
};

/// Greedy order: effects sorted by descending single-effect MAE reduction
/// MAE(dry, target) - MAE(dry + e, target), ties by rack order.
std::vector<EffectId> greedy_order(const Manifest& manifest, const FeatureStore& features,
                                   std::size_t target_clip);

/// For every target clip of chain length k, emits k examples (prefix
/// lengths 0..k-1) whose label is the next effect in policy order.
std::vector<SequenceExample> build_rnn_sequences(const Manifest& manifest,
                                                 const FeatureStore& features,
                                                 OrderingPolicy policy,
                                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Partitions example indices so that no group (chain) spans two parts.
/// Groups are shuffled and assigned to test, then validation, until each
/// reaches its rounded target size; the rest is training data.
Split split_dataset(std::span<const std::uint64_t> groups, double val_frac = 0.10,
                    double test_frac = 0.05, std::uint64_t seed = 0);

std::vector<std::uint64_t> chain_groups(std::span<const PairExample> pairs);
std::vector<std::uint64_t> chain_groups(std::span<const SequenceExample> seqs);

/// 64-bit FNV-1a as 16 hex digits.
std::string fingerprint(std::string_view bytes);

}  // namespace stepfx
