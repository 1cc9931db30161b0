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

#ifndef SERF_PIPELINE_HPP_
#define SERF_PIPELINE_HPP_

#include <string>
#include <utility>
#include <vector>

#include "serf/config.hpp"
#include "serf/embednet.hpp"
#include "serf/evalmetrics.hpp"
#include "serf/featsel.hpp"
#include "serf/interpret.hpp"
#include "serf/linmap.hpp"
#include "serf/simpleclf.hpp"

namespace serf {

struct TooFewSubjects : DataError {
  using DataError::DataError;
};
struct ChannelMissing : DataError {
  using DataError::DataError;
};

// Seeded shuffle then prefix split; train = max(1, floor(ratio * n)),
// test always nonempty.
std::pair<std::vector<std::string>, std::vector<std::string>> split_subjects(
    const std::vector<std::string>& subject_ids, double ratio, std::uint64_t seed);

// The fitted classifier head; exactly one member is populated.
struct FittedClassifier {
  ClassifierKind kind = ClassifierKind::XG;
  DecisionTreeModel tree;
  BoostedEnsemble ensemble;
  LogisticModel logistic;

  Eigen::MatrixXd proba(const Eigen::MatrixXd& x) const;
  std::vector<Stage> predict(const Eigen::MatrixXd& x) const;
};

struct ModelBundle {
  static constexpr std::uint32_t kBundleVersion = 1;

  RunConfig config;
  std::vector<FeatureDescriptor> descriptors;  // full catalog, pre-selection
  SelectionMask mask;
  EmbedderModel embedder;
  LinearMap map;  // carries the feature standardization
  FittedClassifier classifier;

  // Sample of representative-space rows with their stored predictions,
  // used to verify a loaded bundle reproduces inference bit-for-bit.
  Eigen::MatrixXd validation_rows;
  Eigen::MatrixXd validation_proba;

  std::vector<std::string> selected_names() const;
};

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);  // VersionMismatch, CorruptBundle
// True when inference on the stored validation rows is bit-identical.
bool verify_bundle(const ModelBundle& bundle);

struct PipelineResult {
  ModelBundle bundle;
  EvalReport report;
  TrainStats embed_stats;
  std::string dot_text;
  ImportanceReport permutation;  // per-stage F1 deltas on the test split
  ImportanceReport split_gain;   // empty entries for LR
  std::vector<std::string> train_subjects, test_subjects;
};

// ingest -> features -> select -> embed -> map -> represent -> classify
// -> evaluate -> explain; persists every stage artifact under
// config.out_dir; deterministic in (config, seed).
PipelineResult run_pipeline(const RunConfig& config);

struct ScoreResult {
  std::vector<Stage> hypnogram;
  Eigen::MatrixXd probabilities;           // n x 5
  std::vector<std::string> attributions;   // per epoch
};

// Score one recording through the frozen pipeline. Attribution is the
// decision path for a tree, the top-5 split-gain features for an
// ensemble, and the top-5 per-epoch weight contributions for LR.
ScoreResult score_recording(const ModelBundle& bundle, const Recording& recording);

// Shared ingestion helper: segment + label one recording into epochs of
// the bundle/run geometry, tagged with subject_id.
EpochSet ingest_recording(const Recording& recording, const std::vector<StageAnnotation>& labels,
                          const ChannelMap& map, double target_rate, double epoch_seconds,
                          const std::string& subject_id);

// --- per-stage artifact files -------------------------------------------------
// Every intermediate the CLI passes between subcommands is a checksummed
// block file; all loaders throw CorruptBundle / VersionMismatch.

// A matrix whose rows stay aligned with epoch labels and subjects
// (embeddings H or representative features S).
struct LabeledMatrix {
  Eigen::MatrixXd values;
  std::vector<Stage> labels;
  std::vector<std::string> subjects;
};

void save_epochs(const EpochSet& epochs, const std::string& path);
EpochSet load_epochs(const std::string& path);
void save_features(const FeatureMatrix& features, const std::vector<Stage>& labels,
                   const std::string& path);
std::pair<FeatureMatrix, std::vector<Stage>> load_features(const std::string& path);
void save_mask(const SelectionMask& mask, const std::string& path);
SelectionMask load_mask(const std::string& path);
void save_labeled_matrix(const LabeledMatrix& matrix, const std::string& path);
LabeledMatrix load_labeled_matrix(const std::string& path);
void save_embedder(const EmbedderModel& model, const std::string& path);
EmbedderModel load_embedder(const std::string& path);
void save_linear_map(const LinearMap& map, const std::string& path);
LinearMap load_linear_map(const std::string& path);
void save_classifier(const FittedClassifier& classifier,
                     const std::vector<std::string>& feature_names, const std::string& path);
std::pair<FittedClassifier, std::vector<std::string>> load_classifier(const std::string& path);

}  // namespace serf

#endif  // SERF_PIPELINE_HPP_
