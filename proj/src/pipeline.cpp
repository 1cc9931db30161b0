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

#include "serf/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "serf/blockfile.hpp"
#include "serf/dsp.hpp"
#include "serf/synthgen.hpp"

namespace serf {

namespace fs = std::filesystem;

// --- splitting ---------------------------------------------------------------

std::pair<std::vector<std::string>, std::vector<std::string>> split_subjects(
    const std::vector<std::string>& subject_ids, double ratio, std::uint64_t seed) {
  if (subject_ids.size() < 2) throw TooFewSubjects("split_subjects: need at least 2 subjects");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split_subjects: ratio must be in (0, 1)");
  std::vector<std::string> ids = subject_ids;
  Rng rng(seed);
  for (std::int64_t i = static_cast<std::int64_t>(ids.size()) - 1; i > 0; --i)
    std::swap(ids[i], ids[rng.below(i + 1)]);
  const auto n = static_cast<std::int64_t>(ids.size());
  std::int64_t n_train = std::max<std::int64_t>(1, static_cast<std::int64_t>(ratio * n));
  if (n_train >= n) n_train = n - 1;  // test split stays nonempty
  return {std::vector<std::string>(ids.begin(), ids.begin() + n_train),
          std::vector<std::string>(ids.begin() + n_train, ids.end())};
}

// --- classifier head ---------------------------------------------------------

Eigen::MatrixXd FittedClassifier::proba(const Eigen::MatrixXd& x) const {
  switch (kind) {
    case ClassifierKind::DT: return predict_proba(tree, x);
    case ClassifierKind::GB:
    case ClassifierKind::XG: return predict_proba(ensemble, x);
    case ClassifierKind::LR: return predict_proba(logistic, x);
  }
  throw ConfigError("FittedClassifier: unknown kind");
}

std::vector<Stage> FittedClassifier::predict(const Eigen::MatrixXd& x) const {
  return proba_argmax(proba(x));
}

std::vector<std::string> ModelBundle::selected_names() const {
  std::vector<std::string> names;
  names.reserve(mask.kept_indices.size());
  for (std::int64_t idx : mask.kept_indices) names.push_back(descriptors[idx].name);
  return names;
}

// --- ingestion ---------------------------------------------------------------

EpochSet ingest_recording(const Recording& recording, const std::vector<StageAnnotation>& labels,
                          const ChannelMap& map, double target_rate, double epoch_seconds,
                          const std::string& subject_id) {
  SegmentOptions options;
  options.epoch_seconds = epoch_seconds;
  options.target_rate = target_rate;
  options.channels = map.all_channels();
  for (const std::string& label : options.channels)
    if (!recording.find_channel(label))
      throw ChannelMissing("recording '" + recording.id + "' lacks channel '" + label + "'");
  EpochSet epochs = segment_epochs(recording, labels, options);
  for (auto& id : epochs.subject_ids) id = subject_id;
  return epochs;
}

// --- bundle serialization ------------------------------------------------------

namespace {

void put_matrix(BlockFile& bf, const std::string& name, const Eigen::MatrixXd& m) {
  bf.put_f64(name, std::vector<double>(m.data(), m.data() + m.size()));
  bf.meta["shapes"][name] = {m.rows(), m.cols()};
}

Eigen::MatrixXd get_matrix(const BlockFile& bf, const std::string& name) {
  const auto& shape = bf.meta.at("shapes").at(name);
  const Eigen::Index rows = shape[0], cols = shape[1];
  const auto& values = bf.get_f64(name);
  if (static_cast<Eigen::Index>(values.size()) != rows * cols)
    throw CorruptBundle("bundle: block '" + name + "' size mismatch");
  Eigen::MatrixXd m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void put_vector(BlockFile& bf, const std::string& name, const Eigen::VectorXd& v) {
  bf.put_f64(name, std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd get_vector(const BlockFile& bf, const std::string& name) {
  const auto& values = bf.get_f64(name);
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json descriptor_json(const FeatureDescriptor& d) {
  nlohmann::json j;
  j["name"] = d.name;
  j["kind"] = static_cast<int>(d.kind);
  j["channels"] = d.channels;
  if (d.band) j["band"] = {d.band->first, d.band->second};
  if (d.statistic) j["statistic"] = *d.statistic;
  return j;
}

FeatureDescriptor descriptor_from_json(const nlohmann::json& j) {
  FeatureDescriptor d;
  d.name = j.at("name");
  d.kind = static_cast<FeatureKind>(j.at("kind").get<int>());
  d.channels = j.at("channels").get<std::vector<std::string>>();
  if (j.contains("band")) d.band = {j["band"][0].get<double>(), j["band"][1].get<double>()};
  if (j.contains("statistic")) d.statistic = j["statistic"].get<std::string>();
  return d;
}

void put_decision_tree(BlockFile& bf, const std::string& prefix, const DecisionTreeModel& tree) {
  const auto n = tree.nodes.size();
  std::vector<std::int64_t> split_col(n), left(n), right(n), majority(n);
  std::vector<double> threshold(n), fraction(n), gain(n), ratios(n * kNumStages);
  for (size_t i = 0; i < n; ++i) {
    const TreeNode& node = tree.nodes[i];
    split_col[i] = node.split_col;
    left[i] = node.left;
    right[i] = node.right;
    majority[i] = static_cast<std::int64_t>(node.majority);
    threshold[i] = node.threshold;
    fraction[i] = node.fraction;
    gain[i] = node.gain;
    for (int k = 0; k < kNumStages; ++k) ratios[i * kNumStages + k] = node.class_ratio[k];
  }
  bf.put_i64(prefix + "split_col", std::move(split_col));
  bf.put_i64(prefix + "left", std::move(left));
  bf.put_i64(prefix + "right", std::move(right));
  bf.put_i64(prefix + "majority", std::move(majority));
  bf.put_f64(prefix + "threshold", std::move(threshold));
  bf.put_f64(prefix + "fraction", std::move(fraction));
  bf.put_f64(prefix + "gain", std::move(gain));
  bf.put_f64(prefix + "ratios", std::move(ratios));
  bf.put_str(prefix + "feature_names", tree.feature_names);
  bf.meta[prefix + "max_depth"] = tree.max_depth;
  bf.meta[prefix + "min_samples_leaf"] = tree.min_samples_leaf;
}

DecisionTreeModel get_decision_tree(const BlockFile& bf, const std::string& prefix) {
  DecisionTreeModel tree;
  const auto& split_col = bf.get_i64(prefix + "split_col");
  const auto& left = bf.get_i64(prefix + "left");
  const auto& right = bf.get_i64(prefix + "right");
  const auto& majority = bf.get_i64(prefix + "majority");
  const auto& threshold = bf.get_f64(prefix + "threshold");
  const auto& fraction = bf.get_f64(prefix + "fraction");
  const auto& gain = bf.get_f64(prefix + "gain");
  const auto& ratios = bf.get_f64(prefix + "ratios");
  tree.nodes.resize(split_col.size());
  for (size_t i = 0; i < split_col.size(); ++i) {
    TreeNode& node = tree.nodes[i];
    node.split_col = static_cast<std::int32_t>(split_col[i]);
    node.left = static_cast<std::int32_t>(left[i]);
    node.right = static_cast<std::int32_t>(right[i]);
    node.majority = static_cast<Stage>(majority[i]);
    node.threshold = threshold[i];
    node.fraction = fraction[i];
    node.gain = gain[i];
    for (int k = 0; k < kNumStages; ++k) node.class_ratio[k] = ratios[i * kNumStages + k];
  }
  tree.feature_names = bf.get_str(prefix + "feature_names");
  tree.max_depth = bf.meta.value(prefix + "max_depth", 4);
  tree.min_samples_leaf = bf.meta.value(prefix + "min_samples_leaf", std::int64_t{1});
  return tree;
}

void put_ensemble(BlockFile& bf, const std::string& prefix, const BoostedEnsemble& ens) {
  std::vector<std::int64_t> node_counts, split_col, left, right;
  std::vector<double> threshold, value, gain;
  for (const auto& round : ens.trees)
    for (const RegressionTree& tree : round) {
      node_counts.push_back(static_cast<std::int64_t>(tree.nodes.size()));
      for (const RegressionTreeNode& node : tree.nodes) {
        split_col.push_back(node.split_col);
        left.push_back(node.left);
        right.push_back(node.right);
        threshold.push_back(node.threshold);
        value.push_back(node.value);
        gain.push_back(node.gain);
      }
    }
  bf.put_i64(prefix + "node_counts", std::move(node_counts));
  bf.put_i64(prefix + "split_col", std::move(split_col));
  bf.put_i64(prefix + "left", std::move(left));
  bf.put_i64(prefix + "right", std::move(right));
  bf.put_f64(prefix + "threshold", std::move(threshold));
  bf.put_f64(prefix + "value", std::move(value));
  bf.put_f64(prefix + "gain", std::move(gain));
  bf.put_f64(prefix + "scale", ens.scale);
  bf.put_f64(prefix + "base_score",
             std::vector<double>(ens.base_score.begin(), ens.base_score.end()));
  bf.put_str(prefix + "feature_names", ens.feature_names);
  bf.meta[prefix + "learning_rate"] = ens.learning_rate;
  bf.meta[prefix + "dart_dropout"] = ens.dart_dropout;
  bf.meta[prefix + "rounds"] = ens.trees.size();
}

BoostedEnsemble get_ensemble(const BlockFile& bf, const std::string& prefix) {
  BoostedEnsemble ens;
  const auto& node_counts = bf.get_i64(prefix + "node_counts");
  const auto& split_col = bf.get_i64(prefix + "split_col");
  const auto& left = bf.get_i64(prefix + "left");
  const auto& right = bf.get_i64(prefix + "right");
  const auto& threshold = bf.get_f64(prefix + "threshold");
  const auto& value = bf.get_f64(prefix + "value");
  const auto& gain = bf.get_f64(prefix + "gain");
  const size_t rounds = bf.meta.at(prefix + "rounds");
  if (node_counts.size() != rounds * kNumStages)
    throw CorruptBundle("bundle: ensemble node_counts inconsistent");
  ens.trees.resize(rounds);
  size_t cursor = 0, tree_idx = 0;
  for (size_t r = 0; r < rounds; ++r)
    for (int k = 0; k < kNumStages; ++k, ++tree_idx) {
      RegressionTree& tree = ens.trees[r][k];
      const auto count = static_cast<size_t>(node_counts[tree_idx]);
      if (cursor + count > split_col.size())
        throw CorruptBundle("bundle: ensemble nodes truncated");
      tree.nodes.resize(count);
      for (size_t i = 0; i < count; ++i, ++cursor) {
        RegressionTreeNode& node = tree.nodes[i];
        node.split_col = static_cast<std::int32_t>(split_col[cursor]);
        node.left = static_cast<std::int32_t>(left[cursor]);
        node.right = static_cast<std::int32_t>(right[cursor]);
        node.threshold = threshold[cursor];
        node.value = value[cursor];
        node.gain = gain[cursor];
      }
    }
  ens.scale = bf.get_f64(prefix + "scale");
  const auto& base = bf.get_f64(prefix + "base_score");
  std::copy(base.begin(), base.end(), ens.base_score.begin());
  ens.feature_names = bf.get_str(prefix + "feature_names");
  ens.learning_rate = bf.meta.at(prefix + "learning_rate");
  ens.dart_dropout = bf.meta.at(prefix + "dart_dropout");
  return ens;
}

nlohmann::json embedder_config_json(const EmbedderConfig& cfg) {
  nlohmann::json j;
  j["conv_out_channels"] = cfg.conv_out_channels;
  j["conv_kernels"] = cfg.conv_kernels;
  j["pool_widths"] = cfg.pool_widths;
  j["lstm_hidden"] = cfg.lstm_hidden;
  j["num_classes"] = cfg.num_classes;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["train_epochs"] = cfg.train_epochs;
  j["max_sequence"] = cfg.max_sequence;
  j["seed"] = cfg.seed;
  j["input_channels"] = cfg.input_channels;
  j["input_length"] = cfg.input_length;
  return j;
}

EmbedderConfig embedder_config_from_json(const nlohmann::json& j) {
  EmbedderConfig cfg;
  cfg.conv_out_channels = j.at("conv_out_channels").get<std::vector<int>>();
  cfg.conv_kernels = j.at("conv_kernels").get<std::vector<int>>();
  cfg.pool_widths = j.at("pool_widths").get<std::vector<int>>();
  cfg.lstm_hidden = j.at("lstm_hidden");
  cfg.num_classes = j.at("num_classes");
  cfg.learning_rate = j.at("learning_rate");
  cfg.adam_beta1 = j.at("adam_beta1");
  cfg.adam_beta2 = j.at("adam_beta2");
  cfg.adam_eps = j.at("adam_eps");
  cfg.train_epochs = j.at("train_epochs");
  cfg.max_sequence = j.at("max_sequence");
  cfg.seed = j.at("seed");
  cfg.input_channels = j.at("input_channels");
  cfg.input_length = j.at("input_length");
  return cfg;
}

void put_embedder(BlockFile& bf, const EmbedderModel& model) {
  bf.meta["embedder_config"] = embedder_config_json(model.config);
  auto& mutable_model = const_cast<EmbedderModel&>(model);
  for_each_param(mutable_model, [&](const std::string& name, auto& param) {
    put_matrix(bf, "embed/" + name, Eigen::MatrixXd(param));
  });
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    put_vector(bf, "embed/conv" + std::to_string(i) + "/bn_run_mean", model.blocks[i].bn_run_mean);
    put_vector(bf, "embed/conv" + std::to_string(i) + "/bn_run_var", model.blocks[i].bn_run_var);
  }
}

EmbedderModel get_embedder(const BlockFile& bf) {
  EmbedderModel model = init_model(embedder_config_from_json(bf.meta.at("embedder_config")));
  model.training = false;
  for_each_param(model, [&](const std::string& name, auto& param) {
    const Eigen::MatrixXd m = get_matrix(bf, "embed/" + name);
    if (m.rows() != param.rows() || m.cols() != param.cols())
      throw CorruptBundle("bundle: parameter '" + name + "' shape mismatch");
    param = m;
  });
  for (size_t i = 0; i < model.blocks.size(); ++i) {
    model.blocks[i].bn_run_mean = get_vector(bf, "embed/conv" + std::to_string(i) + "/bn_run_mean");
    model.blocks[i].bn_run_var = get_vector(bf, "embed/conv" + std::to_string(i) + "/bn_run_var");
  }
  return model;
}

void put_classifier(BlockFile& bf, const FittedClassifier& classifier) {
  bf.meta["classifier_kind"] = classifier_name(classifier.kind);
  switch (classifier.kind) {
    case ClassifierKind::DT: put_decision_tree(bf, "clf/tree/", classifier.tree); break;
    case ClassifierKind::GB:
    case ClassifierKind::XG: put_ensemble(bf, "clf/ens/", classifier.ensemble); break;
    case ClassifierKind::LR:
      put_matrix(bf, "clf/lr/w", classifier.logistic.w);
      put_vector(bf, "clf/lr/b", classifier.logistic.b);
      bf.meta["logistic_l2"] = classifier.logistic.l2_penalty;
      bf.meta["logistic_converged"] = classifier.logistic.converged;
      break;
  }
}

FittedClassifier get_classifier(const BlockFile& bf) {
  FittedClassifier classifier;
  classifier.kind = parse_classifier(bf.meta.at("classifier_kind"));
  switch (classifier.kind) {
    case ClassifierKind::DT: classifier.tree = get_decision_tree(bf, "clf/tree/"); break;
    case ClassifierKind::GB:
    case ClassifierKind::XG: classifier.ensemble = get_ensemble(bf, "clf/ens/"); break;
    case ClassifierKind::LR:
      classifier.logistic.w = get_matrix(bf, "clf/lr/w");
      classifier.logistic.b = get_vector(bf, "clf/lr/b");
      classifier.logistic.l2_penalty = bf.meta.value("logistic_l2", 0.0);
      classifier.logistic.converged = bf.meta.value("logistic_converged", false);
      break;
  }
  return classifier;
}

void check_artifact_kind(const BlockFile& bf, const std::string& expected) {
  const std::string kind = bf.meta.value("artifact", std::string());
  if (kind != expected)
    throw CorruptBundle("expected a '" + expected + "' artifact, found '" + kind + "'");
}

}  // namespace

void save_bundle(const ModelBundle& bundle, const std::string& path) {
  BlockFile bf;
  bf.meta["bundle_version"] = ModelBundle::kBundleVersion;
  bf.meta["run_config"] = to_json(bundle.config);
  bf.meta["lambda"] = bundle.map.lambda;
  bf.meta["mask_m_prime"] = bundle.mask.m_prime;
  bf.meta["mask_m"] = bundle.mask.m;

  std::vector<std::string> descriptor_texts;
  for (const auto& d : bundle.descriptors) descriptor_texts.push_back(descriptor_json(d).dump());
  bf.put_str("descriptors", std::move(descriptor_texts));
  bf.put_i64("mask/kept_indices", bundle.mask.kept_indices);
  bf.put_f64("mask/f_stats", bundle.mask.f_stats);
  bf.put_f64("standardization/mean", bundle.map.standardization.mean);
  bf.put_f64("standardization/std", bundle.map.standardization.std);
  put_matrix(bf, "map/t", bundle.map.t);
  put_embedder(bf, bundle.embedder);
  put_classifier(bf, bundle.classifier);
  put_matrix(bf, "validation/rows", bundle.validation_rows);
  put_matrix(bf, "validation/proba", bundle.validation_proba);
  bf.write_file(path);
}

ModelBundle load_bundle(const std::string& path) {
  BlockFile bf = BlockFile::read_file(path);
  const std::uint32_t version = bf.meta.value("bundle_version", 0u);
  if (version != ModelBundle::kBundleVersion)
    throw VersionMismatch("bundle version " + std::to_string(version) +
                          " is not supported (this build reads version " +
                          std::to_string(ModelBundle::kBundleVersion) + ")");

  ModelBundle bundle;
  bundle.config = run_config_from_json(bf.meta.at("run_config"));
  for (const std::string& text : bf.get_str("descriptors"))
    bundle.descriptors.push_back(descriptor_from_json(nlohmann::json::parse(text)));
  bundle.mask.kept_indices = bf.get_i64("mask/kept_indices");
  bundle.mask.f_stats = bf.get_f64("mask/f_stats");
  bundle.mask.m_prime = bf.meta.at("mask_m_prime");
  bundle.mask.m = bf.meta.at("mask_m");
  bundle.map.lambda = bf.meta.at("lambda");
  bundle.map.standardization.mean = bf.get_f64("standardization/mean");
  bundle.map.standardization.std = bf.get_f64("standardization/std");
  bundle.map.t = get_matrix(bf, "map/t");
  bundle.embedder = get_embedder(bf);
  bundle.classifier = get_classifier(bf);
  bundle.validation_rows = get_matrix(bf, "validation/rows");
  bundle.validation_proba = get_matrix(bf, "validation/proba");
  return bundle;
}

bool verify_bundle(const ModelBundle& bundle) {
  if (bundle.validation_rows.rows() == 0) return true;
  const Eigen::MatrixXd proba = bundle.classifier.proba(bundle.validation_rows);
  if (proba.rows() != bundle.validation_proba.rows() ||
      proba.cols() != bundle.validation_proba.cols())
    return false;
  return std::memcmp(proba.data(), bundle.validation_proba.data(),
                     sizeof(double) * proba.size()) == 0;
}

// --- the pipeline --------------------------------------------------------------

namespace {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(stage) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string(stage) + ": " + e.what());
  }
}

std::vector<double> flatten_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i * m.cols() + j] = m(i, j);
  return out;
}

FittedClassifier fit_classifier(const ClassifierConfig& cfg, const Eigen::MatrixXd& s,
                                const std::vector<Stage>& y, std::vector<std::string> names,
                                std::uint64_t boost_seed) {
  FittedClassifier clf;
  clf.kind = cfg.kind;
  switch (cfg.kind) {
    case ClassifierKind::DT:
      clf.tree = fit_tree(s, y, cfg.tree_depth, cfg.min_samples_leaf, std::move(names));
      break;
    case ClassifierKind::GB:
      clf.ensemble = fit_boosted(s, y, cfg.rounds, cfg.learning_rate, cfg.tree_depth, 0.0,
                                 boost_seed, std::move(names));
      break;
    case ClassifierKind::XG:
      clf.ensemble = fit_boosted(s, y, cfg.rounds, cfg.learning_rate, cfg.tree_depth,
                                 cfg.dart_dropout, boost_seed, std::move(names));
      break;
    case ClassifierKind::LR:
      clf.logistic = fit_logistic(s, y, cfg.l2_penalty, cfg.lr_max_iters);
      break;
  }
  return clf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& raw_config) {
  RunConfig config = raw_config;
  if (config.channel_map.all_channels().empty()) {
    if (config.mode == "synth")
      config.channel_map = default_synth_channel_map();
    else
      throw ConfigError("run_pipeline: edf mode requires an explicit channel_map");
  }
  fs::create_directories(config.out_dir);
  const fs::path out_dir(config.out_dir);
  save_run_config(config, (out_dir / "config.json").string());

  // ingest one subject at a time so only the segmented epochs stay resident
  std::vector<EpochSet> per_subject;
  std::vector<std::string> subject_ids;
  run_stage("ingest", [&] {
    auto take = [&](EpochSet epochs) {
      if (epochs.n() == 0) return;
      subject_ids.push_back(epochs.subject_ids.front());
      per_subject.push_back(std::move(epochs));
    };
    if (config.mode == "synth") {
      SynthDatasetOptions options;
      options.channel_labels = config.channel_map.all_channels();
      options.rate = config.target_rate;
      for (int s = 0; s < config.synth_subjects; ++s) {
        const auto [recording, annotations] =
            synth_subject(s, config.synth_epochs, default_stage_markov(),
                          stage_seed(config, kSeedOffsetSynth), options);
        take(ingest_recording(recording, annotations, config.channel_map, config.target_rate,
                              config.epoch_seconds, recording.id));
      }
    } else {
      for (size_t i = 0; i < config.edf_paths.size(); ++i) {
        const Recording recording = read_edf_file(config.edf_paths[i]);
        std::ifstream in(config.label_paths[i]);
        if (!in) throw DataError("cannot read labels '" + config.label_paths[i] + "'");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto annotations = read_stage_labels(
            text, config.label_schema == "rk" ? LabelSchema::RK : LabelSchema::AASM);
        const std::string subject =
            recording.id.empty() ? fs::path(config.edf_paths[i]).stem().string() : recording.id;
        take(ingest_recording(recording, annotations, config.channel_map, config.target_rate,
                              config.epoch_seconds, subject));
      }
    }
    if (per_subject.empty()) throw EmptyAfterFiltering("no scored epochs in the dataset");
    return 0;
  });

  // split by subject
  PipelineResult result;
  run_stage("split", [&] {
    auto [train_ids, test_ids] =
        split_subjects(subject_ids, config.split_ratio, stage_seed(config, kSeedOffsetSplit));
    result.train_subjects = std::move(train_ids);
    result.test_subjects = std::move(test_ids);
    return 0;
  });
  EpochSet train_set, test_set;
  {
    const std::set<std::string> train_ids(result.train_subjects.begin(),
                                          result.train_subjects.end());
    for (size_t i = 0; i < per_subject.size(); ++i) {
      EpochSet& dst = train_ids.count(subject_ids[i]) ? train_set : test_set;
      if (dst.n() == 0)
        dst = std::move(per_subject[i]);
      else
        dst.append(per_subject[i]);
      per_subject[i] = EpochSet{};  // release each subject as it is consumed
    }
  }
  if (train_set.n() == 0 || test_set.n() == 0)
    throw DataError("split: a split side has no scored epochs");

  // expert features on the training subjects only
  const FeatureMatrix features = run_stage("features", [&] {
    FeatureMatrix f = extract_features(train_set, config.channel_map);
    write_feature_csv(f, (out_dir / "features_train.csv").string());
    write_descriptor_sidecar(f.descriptors, (out_dir / "feature_descriptors.tsv").string());
    return f;
  });

  ModelBundle& bundle = result.bundle;
  bundle.config = config;
  bundle.descriptors = features.descriptors;

  const FeatureMatrix selected = run_stage("select", [&] {
    bundle.mask = select_top(features, train_set.labels);
    std::string csv = "index,name,f_stat,kept\n";
    for (std::int64_t j = 0; j < features.m(); ++j) {
      const bool kept = std::find(bundle.mask.kept_indices.begin(),
                                  bundle.mask.kept_indices.end(),
                                  j) != bundle.mask.kept_indices.end();
      char buf[320];
      std::snprintf(buf, sizeof(buf), "%lld,%s,%.17g,%d\n", static_cast<long long>(j),
                    features.descriptors[j].name.c_str(), bundle.mask.f_stats[j], kept ? 1 : 0);
      csv += buf;
    }
    write_text((out_dir / "selection.csv").string(), csv);
    return apply_mask(features, bundle.mask);
  });

  // embedder
  run_stage("train-embed", [&] {
    EmbedderConfig ecfg = config.embedder;
    ecfg.input_channels = static_cast<int>(train_set.c());
    ecfg.input_length = static_cast<int>(train_set.l());
    ecfg.num_classes = kNumStages;
    ecfg.seed = stage_seed(config, kSeedOffsetEmbed);
    bundle.embedder = init_model(ecfg);
    result.embed_stats = train(bundle.embedder, train_set, ecfg);
    write_loss_trace_csv(result.embed_stats, (out_dir / "loss_trace.csv").string());
    return 0;
  });

  // embeddings, ridge map, representative matrix
  Eigen::MatrixXd s_train;
  run_stage("fit-map", [&] {
    const Eigen::MatrixXd h_train = extract_embeddings(bundle.embedder, train_set);
    Standardization stats;
    const Eigen::MatrixXd f_std = standardize(to_eigen(selected), &stats, true);
    bundle.map = fit_map(f_std, h_train, config.lambda);
    bundle.map.standardization = std::move(stats);
    s_train = represent(bundle.map, h_train);
    return 0;
  });

  // interpretable classifier on the representative matrix
  const std::vector<std::string> names = bundle.selected_names();
  run_stage("train-clf", [&] {
    bundle.classifier = fit_classifier(config.classifier, s_train, train_set.labels, names,
                                       stage_seed(config, kSeedOffsetBoost));
    return 0;
  });

  // evaluation on held-out subjects
  Eigen::MatrixXd s_test, test_proba;
  run_stage("evaluate", [&] {
    const Eigen::MatrixXd h_test = extract_embeddings(bundle.embedder, test_set);
    s_test = represent(bundle.map, h_test);
    test_proba = bundle.classifier.proba(s_test);
    const std::vector<Stage> preds = proba_argmax(test_proba);
    result.report = summarize(test_set.labels, preds, flatten_row_major(test_proba));
    write_text((out_dir / "report.txt").string(), result.report.to_text());
    write_text((out_dir / "report.csv").string(), result.report.to_csv_row(true));
    return 0;
  });

  // explanations
  run_stage("explain", [&] {
    // Non-DT classifiers get a CART surrogate of the same depth for the
    // Fig 3-style diagram; importances below explain the real model.
    const DecisionTreeModel diagram_tree =
        config.classifier.kind == ClassifierKind::DT
            ? bundle.classifier.tree
            : fit_tree(s_train, train_set.labels, config.classifier.tree_depth,
                       config.classifier.min_samples_leaf, names);
    result.dot_text = export_tree_dot(diagram_tree);
    write_text((out_dir / "tree.dot").string(), result.dot_text);

    result.permutation = permutation_importance(
        [&](const Eigen::MatrixXd& x) { return bundle.classifier.predict(x); }, s_test,
        test_set.labels, names, ImportanceMetric::Kappa, 3,
        stage_seed(config, kSeedOffsetPermute));
    write_importance_csv(result.permutation, (out_dir / "importance_permutation.csv").string());

    if (config.classifier.kind == ClassifierKind::DT)
      result.split_gain = split_gain_importance(bundle.classifier.tree);
    else if (config.classifier.kind != ClassifierKind::LR)
      result.split_gain = split_gain_importance(bundle.classifier.ensemble);
    if (!result.split_gain.entries.empty())
      write_importance_csv(result.split_gain, (out_dir / "importance_split_gain.csv").string());
    return 0;
  });

  // bundle with a validation sample for bit-for-bit load checks
  run_stage("bundle", [&] {
    const Eigen::Index n_val = std::min<Eigen::Index>(50, s_test.rows());
    bundle.validation_rows = s_test.topRows(n_val);
    bundle.validation_proba = test_proba.topRows(n_val);
    save_bundle(bundle, (out_dir / "bundle.serf").string());
    return 0;
  });

  return result;
}

// --- scoring ---------------------------------------------------------------------

namespace {

// Cut every complete epoch of the recording without requiring labels.
EpochSet segment_all_epochs(const Recording& recording, const ChannelMap& map, double target_rate,
                            double epoch_seconds) {
  EpochSet epochs;
  epochs.rate = target_rate;
  epochs.epoch_seconds = epoch_seconds;
  epochs.channel_labels = map.all_channels();
  const auto epoch_len = static_cast<std::int64_t>(epoch_seconds * target_rate + 0.5);

  std::vector<std::vector<double>> resampled;
  std::int64_t min_len = -1;
  for (const std::string& label : epochs.channel_labels) {
    const Channel* channel = recording.find_channel(label);
    if (!channel)
      throw ChannelMissing("recording '" + recording.id + "' lacks channel '" + label + "'");
    resampled.push_back(dsp::resample(channel->samples, channel->sampling_rate, target_rate));
    const auto len = static_cast<std::int64_t>(resampled.back().size());
    min_len = min_len < 0 ? len : std::min(min_len, len);
  }
  const std::int64_t n = min_len / epoch_len;
  if (n == 0) throw EmptyAfterFiltering("recording shorter than one epoch");
  epochs.data.resize(n * static_cast<std::int64_t>(resampled.size()) * epoch_len);
  epochs.labels.assign(n, Stage::Unscored);
  epochs.subject_ids.assign(n, recording.id);
  for (std::int64_t e = 0; e < n; ++e)
    for (size_t ch = 0; ch < resampled.size(); ++ch)
      std::copy(resampled[ch].begin() + e * epoch_len, resampled[ch].begin() + (e + 1) * epoch_len,
                epochs.epoch_channel(e, static_cast<std::int64_t>(ch)));
  return epochs;
}

std::string tree_path_attribution(const DecisionTreeModel& tree, const Eigen::MatrixXd& s,
                                  Eigen::Index row) {
  std::string out;
  std::int32_t node = 0;
  while (tree.nodes[node].split_col >= 0) {
    const TreeNode& cur = tree.nodes[node];
    if (!out.empty()) out += "; ";
    const std::string name = cur.split_col < static_cast<std::int32_t>(tree.feature_names.size())
                                 ? tree.feature_names[cur.split_col]
                                 : "f" + std::to_string(cur.split_col);
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %s %.6g", s(row, cur.split_col) <= cur.threshold ? "<=" : ">",
                  cur.threshold);
    out += name + buf;
    node = s(row, cur.split_col) <= cur.threshold ? cur.left : cur.right;
  }
  return out;
}

}  // namespace

ScoreResult score_recording(const ModelBundle& bundle, const Recording& recording) {
  const RunConfig& config = bundle.config;
  ChannelMap map = config.channel_map;
  if (map.all_channels().empty()) map = default_synth_channel_map();
  const EpochSet epochs =
      segment_all_epochs(recording, map, config.target_rate, config.epoch_seconds);

  const Eigen::MatrixXd h = extract_embeddings(bundle.embedder, epochs);
  const Eigen::MatrixXd s = represent(bundle.map, h);
  ScoreResult result;
  result.probabilities = bundle.classifier.proba(s);
  result.hypnogram = proba_argmax(result.probabilities);

  const std::vector<std::string> names = bundle.selected_names();
  result.attributions.resize(epochs.n());
  if (bundle.classifier.kind == ClassifierKind::DT) {
    for (std::int64_t e = 0; e < epochs.n(); ++e)
      result.attributions[e] = tree_path_attribution(bundle.classifier.tree, s, e);
  } else if (bundle.classifier.kind == ClassifierKind::LR) {
    for (std::int64_t e = 0; e < epochs.n(); ++e) {
      const int cls = static_cast<int>(result.hypnogram[e]);
      std::vector<std::pair<double, Eigen::Index>> contrib;
      for (Eigen::Index j = 0; j < s.cols(); ++j)
        contrib.push_back({std::abs(bundle.classifier.logistic.w(j, cls) * s(e, j)), j});
      std::stable_sort(contrib.begin(), contrib.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::string out;
      for (size_t k = 0; k < std::min<size_t>(5, contrib.size()); ++k) {
        if (!out.empty()) out += "; ";
        out += names[contrib[k].second];
      }
      result.attributions[e] = out;
    }
  } else {
    const ImportanceReport gains = split_gain_importance(bundle.classifier.ensemble);
    std::string top;
    for (size_t k = 0; k < std::min<size_t>(5, gains.entries.size()); ++k) {
      if (!top.empty()) top += "; ";
      top += gains.entries[k].name;
    }
    for (auto& a : result.attributions) a = top;
  }
  return result;
}

// --- per-stage artifact files -----------------------------------------------------

namespace {

std::vector<std::int64_t> stages_to_i64(const std::vector<Stage>& labels) {
  std::vector<std::int64_t> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<std::int64_t>(labels[i]);
  return out;
}

std::vector<Stage> i64_to_stages(const std::vector<std::int64_t>& values) {
  std::vector<Stage> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0 || values[i] > 5) throw CorruptBundle("artifact: invalid stage label");
    out[i] = static_cast<Stage>(values[i]);
  }
  return out;
}

}  // namespace

void save_epochs(const EpochSet& epochs, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "epochs";
  bf.meta["rate"] = epochs.rate;
  bf.meta["epoch_seconds"] = epochs.epoch_seconds;
  bf.put_f64("data", epochs.data);
  bf.put_i64("labels", stages_to_i64(epochs.labels));
  bf.put_str("subject_ids", epochs.subject_ids);
  bf.put_str("channel_labels", epochs.channel_labels);
  bf.write_file(path);
}

EpochSet load_epochs(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "epochs");
  EpochSet epochs;
  epochs.rate = bf.meta.at("rate");
  epochs.epoch_seconds = bf.meta.at("epoch_seconds");
  epochs.data = bf.get_f64("data");
  epochs.labels = i64_to_stages(bf.get_i64("labels"));
  epochs.subject_ids = bf.get_str("subject_ids");
  epochs.channel_labels = bf.get_str("channel_labels");
  if (epochs.subject_ids.size() != epochs.labels.size() ||
      static_cast<std::int64_t>(epochs.data.size()) != epochs.n() * epochs.c() * epochs.l())
    throw CorruptBundle("epochs artifact: inconsistent sizes");
  return epochs;
}

void save_features(const FeatureMatrix& features, const std::vector<Stage>& labels,
                   const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "features";
  bf.meta["rows"] = features.n;
  bf.put_f64("values", features.values);
  bf.put_i64("labels", stages_to_i64(labels));
  std::vector<std::string> descriptor_texts;
  for (const auto& d : features.descriptors) descriptor_texts.push_back(descriptor_json(d).dump());
  bf.put_str("descriptors", std::move(descriptor_texts));
  bf.write_file(path);
}

std::pair<FeatureMatrix, std::vector<Stage>> load_features(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "features");
  FeatureMatrix features;
  features.n = bf.meta.at("rows");
  features.values = bf.get_f64("values");
  for (const std::string& text : bf.get_str("descriptors"))
    features.descriptors.push_back(descriptor_from_json(nlohmann::json::parse(text)));
  if (static_cast<std::int64_t>(features.values.size()) != features.n * features.m())
    throw CorruptBundle("features artifact: inconsistent sizes");
  return {std::move(features), i64_to_stages(bf.get_i64("labels"))};
}

void save_mask(const SelectionMask& mask, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "mask";
  bf.meta["m_prime"] = mask.m_prime;
  bf.meta["m"] = mask.m;
  bf.put_i64("kept_indices", mask.kept_indices);
  bf.put_f64("f_stats", mask.f_stats);
  bf.write_file(path);
}

SelectionMask load_mask(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "mask");
  SelectionMask mask;
  mask.m_prime = bf.meta.at("m_prime");
  mask.m = bf.meta.at("m");
  mask.kept_indices = bf.get_i64("kept_indices");
  mask.f_stats = bf.get_f64("f_stats");
  return mask;
}

void save_labeled_matrix(const LabeledMatrix& matrix, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "labeled_matrix";
  put_matrix(bf, "values", matrix.values);
  bf.put_i64("labels", stages_to_i64(matrix.labels));
  bf.put_str("subjects", matrix.subjects);
  bf.write_file(path);
}

LabeledMatrix load_labeled_matrix(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "labeled_matrix");
  LabeledMatrix matrix;
  matrix.values = get_matrix(bf, "values");
  matrix.labels = i64_to_stages(bf.get_i64("labels"));
  matrix.subjects = bf.get_str("subjects");
  return matrix;
}

void save_embedder(const EmbedderModel& model, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "embedder";
  put_embedder(bf, model);
  bf.write_file(path);
}

EmbedderModel load_embedder(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "embedder");
  return get_embedder(bf);
}

void save_linear_map(const LinearMap& map, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "linear_map";
  bf.meta["lambda"] = map.lambda;
  put_matrix(bf, "t", map.t);
  bf.put_f64("mean", map.standardization.mean);
  bf.put_f64("std", map.standardization.std);
  bf.write_file(path);
}

LinearMap load_linear_map(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "linear_map");
  LinearMap map;
  map.lambda = bf.meta.at("lambda");
  map.t = get_matrix(bf, "t");
  map.standardization.mean = bf.get_f64("mean");
  map.standardization.std = bf.get_f64("std");
  return map;
}

void save_classifier(const FittedClassifier& classifier,
                     const std::vector<std::string>& feature_names, const std::string& path) {
  BlockFile bf;
  bf.meta["artifact"] = "classifier";
  put_classifier(bf, classifier);
  bf.put_str("feature_names", feature_names);
  bf.write_file(path);
}

std::pair<FittedClassifier, std::vector<std::string>> load_classifier(const std::string& path) {
  const BlockFile bf = BlockFile::read_file(path);
  check_artifact_kind(bf, "classifier");
  return {get_classifier(bf), bf.get_str("feature_names")};
}

}  // namespace serf
