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

#include "serf/config.hpp"

#include <fstream>

namespace serf {

const char* classifier_name(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::DT: return "dt";
    case ClassifierKind::GB: return "gb";
    case ClassifierKind::XG: return "xg";
    case ClassifierKind::LR: return "lr";
  }
  return "?";
}

ClassifierKind parse_classifier(const std::string& tag) {
  if (tag == "dt") return ClassifierKind::DT;
  if (tag == "gb") return ClassifierKind::GB;
  if (tag == "xg") return ClassifierKind::XG;
  if (tag == "lr") return ClassifierKind::LR;
  throw ConfigError("unknown classifier '" + tag + "' (expected dt, gb, xg, or lr)");
}

ChannelMap default_synth_channel_map() {
  ChannelMap map;
  map.eeg = {"EEG1", "EEG2"};
  map.emg = {"EMG1"};
  map.pairs = {{"EEG1", "EEG2"}};
  return map;
}

EmbedderConfig reduced_embedder_preset() {
  EmbedderConfig cfg;
  cfg.conv_out_channels = {16, 8, 8};
  cfg.conv_kernels = {51, 11, 11};
  cfg.pool_widths = {4, 4, 4};
  cfg.lstm_hidden = 16;
  cfg.learning_rate = 1e-3;
  cfg.train_epochs = 2;
  return cfg;
}

namespace {

nlohmann::json channel_map_json(const ChannelMap& map) {
  nlohmann::json j;
  j["eeg"] = map.eeg;
  j["eog"] = map.eog;
  j["emg"] = map.emg;
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : map.pairs) pairs.push_back({a, b});
  j["pairs"] = pairs;
  return j;
}

ChannelMap channel_map_from_json(const nlohmann::json& j) {
  ChannelMap map;
  map.eeg = j.value("eeg", std::vector<std::string>{});
  map.eog = j.value("eog", std::vector<std::string>{});
  map.emg = j.value("emg", std::vector<std::string>{});
  for (const auto& pair : j.value("pairs", nlohmann::json::array())) {
    if (!pair.is_array() || pair.size() != 2)
      throw ConfigError("channel_map.pairs entries must be [left, right]");
    map.pairs.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
  }
  return map;
}

nlohmann::json embedder_json(const EmbedderConfig& cfg) {
  nlohmann::json j;
  j["conv_out_channels"] = cfg.conv_out_channels;
  j["conv_kernels"] = cfg.conv_kernels;
  j["pool_widths"] = cfg.pool_widths;
  j["lstm_hidden"] = cfg.lstm_hidden;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["train_epochs"] = cfg.train_epochs;
  j["max_sequence"] = cfg.max_sequence;
  return j;
}

EmbedderConfig embedder_from_json(const nlohmann::json& j) {
  EmbedderConfig cfg;
  cfg.conv_out_channels = j.value("conv_out_channels", cfg.conv_out_channels);
  cfg.conv_kernels = j.value("conv_kernels", cfg.conv_kernels);
  cfg.pool_widths = j.value("pool_widths", cfg.pool_widths);
  cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.train_epochs = j.value("train_epochs", cfg.train_epochs);
  cfg.max_sequence = j.value("max_sequence", cfg.max_sequence);
  return cfg;
}

}  // namespace

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j;
  j["mode"] = config.mode;
  j["synth_subjects"] = config.synth_subjects;
  j["synth_epochs"] = config.synth_epochs;
  j["edf_paths"] = config.edf_paths;
  j["label_paths"] = config.label_paths;
  j["label_schema"] = config.label_schema;
  j["target_rate"] = config.target_rate;
  j["epoch_seconds"] = config.epoch_seconds;
  j["channel_map"] = channel_map_json(config.channel_map);
  j["split_ratio"] = config.split_ratio;
  j["seed"] = config.seed;
  j["embedder"] = embedder_json(config.embedder);
  j["lambda"] = config.lambda;
  const auto& clf = config.classifier;
  j["classifier"] = {{"kind", classifier_name(clf.kind)},
                     {"tree_depth", clf.tree_depth},
                     {"min_samples_leaf", clf.min_samples_leaf},
                     {"rounds", clf.rounds},
                     {"learning_rate", clf.learning_rate},
                     {"dart_dropout", clf.dart_dropout},
                     {"l2_penalty", clf.l2_penalty},
                     {"lr_max_iters", clf.lr_max_iters}};
  j["out_dir"] = config.out_dir;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig config;
  try {
    config.mode = j.value("mode", config.mode);
    config.synth_subjects = j.value("synth_subjects", config.synth_subjects);
    config.synth_epochs = j.value("synth_epochs", config.synth_epochs);
    config.edf_paths = j.value("edf_paths", config.edf_paths);
    config.label_paths = j.value("label_paths", config.label_paths);
    config.label_schema = j.value("label_schema", config.label_schema);
    config.target_rate = j.value("target_rate", config.target_rate);
    config.epoch_seconds = j.value("epoch_seconds", config.epoch_seconds);
    if (j.contains("channel_map")) config.channel_map = channel_map_from_json(j.at("channel_map"));
    config.split_ratio = j.value("split_ratio", config.split_ratio);
    config.seed = j.value("seed", config.seed);
    if (j.contains("embedder")) config.embedder = embedder_from_json(j.at("embedder"));
    config.lambda = j.value("lambda", config.lambda);
    if (j.contains("classifier")) {
      const auto& c = j.at("classifier");
      config.classifier.kind = parse_classifier(c.value("kind", std::string("xg")));
      config.classifier.tree_depth = c.value("tree_depth", config.classifier.tree_depth);
      config.classifier.min_samples_leaf =
          c.value("min_samples_leaf", config.classifier.min_samples_leaf);
      config.classifier.rounds = c.value("rounds", config.classifier.rounds);
      config.classifier.learning_rate = c.value("learning_rate", config.classifier.learning_rate);
      config.classifier.dart_dropout = c.value("dart_dropout", config.classifier.dart_dropout);
      config.classifier.l2_penalty = c.value("l2_penalty", config.classifier.l2_penalty);
      config.classifier.lr_max_iters = c.value("lr_max_iters", config.classifier.lr_max_iters);
    }
    config.out_dir = j.value("out_dir", config.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }

  if (config.mode != "synth" && config.mode != "edf")
    throw ConfigError("mode must be 'synth' or 'edf', got '" + config.mode + "'");
  if (!(config.split_ratio > 0.0 && config.split_ratio < 1.0))
    throw ConfigError("split_ratio must lie in (0, 1)");
  if (config.label_schema != "aasm" && config.label_schema != "rk")
    throw ConfigError("label_schema must be 'aasm' or 'rk'");
  if (config.mode == "edf") {
    if (config.edf_paths.empty()) throw ConfigError("edf mode requires edf_paths");
    if (config.edf_paths.size() != config.label_paths.size())
      throw ConfigError("edf_paths and label_paths must have equal length");
  }
  if (config.mode == "synth" && (config.synth_subjects < 2 || config.synth_epochs < 1))
    throw ConfigError("synth mode needs at least 2 subjects and 1 epoch each");
  if (config.target_rate <= 0 || config.epoch_seconds <= 0)
    throw ConfigError("target_rate and epoch_seconds must be positive");
  if (config.lambda < 0) throw ConfigError("lambda must be non-negative");
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << to_json(config).dump(2) << "\n";
}

}  // namespace serf
