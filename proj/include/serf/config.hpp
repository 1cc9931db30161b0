// Copyright 2026 The SERF Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SERF_CONFIG_HPP_
#define SERF_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "serf/embednet.hpp"
#include "serf/featurex.hpp"

namespace serf {

enum class ClassifierKind { DT, GB, XG, LR };

const char* classifier_name(ClassifierKind kind);
ClassifierKind parse_classifier(const std::string& tag);  // throws ConfigError

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::XG;
  // trees
  int tree_depth = 4;
  std::int64_t min_samples_leaf = 5;
  // boosting
  int rounds = 40;
  double learning_rate = 0.3;
  double dart_dropout = 0.1;  // forced to 0 for GB
  // logistic regression
  double l2_penalty = 1e-3;
  int lr_max_iters = 500;
};

struct RunConfig {
  std::string mode = "synth";  // "synth" | "edf"

  // synth mode
  int synth_subjects = 20;
  int synth_epochs = 200;

  // edf mode: parallel arrays of signal and label paths, one per subject
  std::vector<std::string> edf_paths;
  std::vector<std::string> label_paths;
  std::string label_schema = "aasm";  // "aasm" | "rk"

  double target_rate = 100.0;
  double epoch_seconds = 30.0;
  ChannelMap channel_map;  // empty = default synthetic montage

  double split_ratio = 0.9;
  std::uint64_t seed = 7;
  EmbedderConfig embedder;  // input dims filled from the data at run time
  double lambda = 1.0;
  ClassifierConfig classifier;
  std::string out_dir = "out";
};

// Fixed per-stage seed offsets derived from the one global seed.
constexpr std::uint64_t kSeedOffsetSynth = 1;
constexpr std::uint64_t kSeedOffsetSplit = 2;
constexpr std::uint64_t kSeedOffsetEmbed = 3;
constexpr std::uint64_t kSeedOffsetBoost = 4;
constexpr std::uint64_t kSeedOffsetPermute = 5;

inline std::uint64_t stage_seed(const RunConfig& config, std::uint64_t offset) {
  return config.seed + offset;
}

// Montage matching SynthDatasetOptions::channel_labels.
ChannelMap default_synth_channel_map();

// Lossless JSON round-trip (doubles at full precision).
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);  // throws ConfigError

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

// Reduced embedder preset for the scaled synthetic experiment.
EmbedderConfig reduced_embedder_preset();

}  // namespace serf

#endif  // SERF_CONFIG_HPP_
