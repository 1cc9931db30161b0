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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "serf/blockfile.hpp"
#include "serf/common.hpp"
#include "serf/pipeline.hpp"
#include "serf/synthgen.hpp"

using namespace serf;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_run_config(const std::string& out_dir, std::uint64_t seed = 7) {
  RunConfig cfg;
  cfg.mode = "synth";
  cfg.synth_subjects = 4;
  cfg.synth_epochs = 30;
  cfg.split_ratio = 0.75;  // 3 train / 1 test subjects
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  cfg.lambda = 1.0;
  cfg.embedder.conv_out_channels = {4, 4};
  cfg.embedder.conv_kernels = {9, 5};
  cfg.embedder.pool_widths = {4, 4};
  cfg.embedder.lstm_hidden = 4;
  cfg.embedder.learning_rate = 1e-3;
  cfg.embedder.train_epochs = 1;
  cfg.embedder.max_sequence = 30;
  cfg.classifier.kind = ClassifierKind::XG;
  cfg.classifier.rounds = 8;
  cfg.classifier.tree_depth = 3;
  return cfg;
}

EpochSet small_epochs(std::uint64_t seed) {
  const auto dataset = synth_dataset(2, 6, default_stage_markov(), seed);
  EpochSet all;
  for (const auto& [rec, ann] : dataset) {
    const EpochSet one =
        ingest_recording(rec, ann, default_synth_channel_map(), 100.0, 30.0, rec.id);
    if (all.labels.empty())
      all = one;
    else
      all.append(one);
  }
  return all;
}

}  // namespace

TEST_CASE("split_subjects honors the ratio and keeps the test side nonempty") {
  std::vector<std::string> ten;
  for (int i = 0; i < 10; ++i) ten.push_back("s" + std::to_string(i));
  const auto [train, test] = split_subjects(ten, 0.9, 5);
  CHECK(train.size() == 9);
  CHECK(test.size() == 1);
  std::set<std::string> all(train.begin(), train.end());
  all.insert(test.begin(), test.end());
  CHECK(all.size() == 10);  // disjoint and exhaustive

  const auto [t2, v2] = split_subjects({"a", "b"}, 0.9, 5);
  CHECK(t2.size() == 1);
  CHECK(v2.size() == 1);

  // deterministic in the seed
  const auto again = split_subjects(ten, 0.9, 5);
  CHECK(again.first == train);
  CHECK(again.second == test);
  const auto other = split_subjects(ten, 0.9, 6);
  CHECK((other.first != train || other.second != test));

  CHECK_THROWS_AS(split_subjects({"only"}, 0.9, 1), TooFewSubjects);
  CHECK_THROWS_AS(split_subjects({}, 0.9, 1), TooFewSubjects);
}

TEST_CASE("artifact round-trips preserve epochs, features, masks, and matrices") {
  const EpochSet epochs = small_epochs(11);

  const std::string epath = "/tmp/serf_test_epochs.serf";
  save_epochs(epochs, epath);
  const EpochSet eback = load_epochs(epath);
  CHECK(eback.data == epochs.data);
  CHECK(eback.labels == epochs.labels);
  CHECK(eback.subject_ids == epochs.subject_ids);
  CHECK(eback.channel_labels == epochs.channel_labels);
  CHECK(eback.rate == epochs.rate);
  CHECK(eback.epoch_seconds == epochs.epoch_seconds);

  const FeatureMatrix features = extract_features(epochs, default_synth_channel_map());
  const std::string fpath = "/tmp/serf_test_features.serf";
  save_features(features, epochs.labels, fpath);
  const auto [fback, lback] = load_features(fpath);
  CHECK(fback.values == features.values);
  CHECK(lback == epochs.labels);
  REQUIRE(fback.descriptors.size() == features.descriptors.size());
  CHECK(fback.descriptors[0].name == features.descriptors[0].name);

  const SelectionMask mask = select_top(features, epochs.labels);
  const std::string mpath = "/tmp/serf_test_mask.serf";
  save_mask(mask, mpath);
  const SelectionMask mback = load_mask(mpath);
  CHECK(mback.kept_indices == mask.kept_indices);
  CHECK(mback.f_stats == mask.f_stats);
  CHECK(mback.m == mask.m);
  CHECK(mback.m_prime == mask.m_prime);

  LabeledMatrix lm;
  lm.values = Eigen::MatrixXd::Random(7, 3);
  lm.labels = std::vector<Stage>(7, Stage::N2);
  lm.subjects = std::vector<std::string>(7, "s0");
  const std::string lmpath = "/tmp/serf_test_labeled.serf";
  save_labeled_matrix(lm, lmpath);
  const LabeledMatrix lmback = load_labeled_matrix(lmpath);
  CHECK(lmback.values == lm.values);
  CHECK(lmback.labels == lm.labels);
  CHECK(lmback.subjects == lm.subjects);
}

TEST_CASE("embedder, linear map, and classifier artifacts round-trip bit-for-bit") {
  const EpochSet epochs = small_epochs(13);
  EmbedderConfig ecfg;
  ecfg.conv_out_channels = {3, 2};
  ecfg.conv_kernels = {7, 3};
  ecfg.pool_widths = {4, 4};
  ecfg.lstm_hidden = 3;
  ecfg.train_epochs = 1;
  ecfg.max_sequence = 12;
  ecfg.seed = 3;
  ecfg.input_channels = static_cast<int>(epochs.c());
  ecfg.input_length = static_cast<int>(epochs.l());
  EmbedderModel model = init_model(ecfg);
  train(model, epochs, ecfg);

  const std::string empath = "/tmp/serf_test_embedder.serf";
  save_embedder(model, empath);
  const EmbedderModel mback = load_embedder(empath);
  CHECK(extract_embeddings(mback, epochs) == extract_embeddings(model, epochs));

  const Eigen::MatrixXd h = extract_embeddings(model, epochs);
  const FeatureMatrix features = extract_features(epochs, default_synth_channel_map());
  Eigen::MatrixXd f(features.n, features.m());
  for (std::int64_t i = 0; i < features.n; ++i)
    for (std::int64_t j = 0; j < features.m(); ++j) f(i, j) = features.at(i, j);
  Standardization stats;
  const Eigen::MatrixXd fz = standardize(f, &stats, true);
  LinearMap map = fit_map(fz, h, 1.0);
  map.standardization = stats;
  const std::string lpath = "/tmp/serf_test_linmap.serf";
  save_linear_map(map, lpath);
  const LinearMap lmback = load_linear_map(lpath);
  CHECK(lmback.t == map.t);
  CHECK(lmback.lambda == map.lambda);
  CHECK(lmback.standardization.mean == map.standardization.mean);
  CHECK(lmback.standardization.std == map.standardization.std);

  const Eigen::MatrixXd s = represent(map, h);
  for (ClassifierKind kind :
       {ClassifierKind::DT, ClassifierKind::GB, ClassifierKind::XG, ClassifierKind::LR}) {
    FittedClassifier clf;
    clf.kind = kind;
    switch (kind) {
      case ClassifierKind::DT:
        clf.tree = fit_tree(s, epochs.labels, 3, 1);
        break;
      case ClassifierKind::GB:
        clf.ensemble = fit_boosted(s, epochs.labels, 5, 0.3, 3, 0.0, 9);
        break;
      case ClassifierKind::XG:
        clf.ensemble = fit_boosted(s, epochs.labels, 5, 0.3, 3, 0.2, 9);
        break;
      case ClassifierKind::LR:
        clf.logistic = fit_logistic(s, epochs.labels, 1e-3, 50);
        break;
    }
    const std::string cpath = "/tmp/serf_test_clf.serf";
    save_classifier(clf, {"a", "b", "c"}, cpath);
    const auto [cback, names] = load_classifier(cpath);
    CHECK(cback.kind == kind);
    CHECK(names == std::vector<std::string>{"a", "b", "c"});
    CHECK(cback.proba(s) == clf.proba(s));
  }
}

TEST_CASE("run_pipeline produces every artifact and a self-verifying bundle") {
  const std::string out_dir = "/tmp/serf_test_run1";
  fs::remove_all(out_dir);
  const RunConfig cfg = tiny_run_config(out_dir);
  const PipelineResult result = run_pipeline(cfg);

  for (const char* name :
       {"config.json", "features_train.csv", "feature_descriptors.tsv", "selection.csv",
        "loss_trace.csv", "report.txt", "report.csv", "tree.dot", "importance_permutation.csv",
        "importance_split_gain.csv", "bundle.serf"}) {
    CAPTURE(name);
    CHECK(fs::exists(fs::path(out_dir) / name));
  }

  CHECK(result.report.n_epochs == 30);  // one held-out subject
  CHECK(result.report.accuracy > 0.0);
  CHECK(!result.embed_stats.loss_trace.empty());
  CHECK(result.dot_text.find("digraph") == 0);
  CHECK(!result.permutation.entries.empty());
  CHECK(result.train_subjects.size() == 3);
  CHECK(result.test_subjects.size() == 1);

  CHECK(verify_bundle(result.bundle));
  CHECK(result.bundle.validation_rows.rows() > 0);
  CHECK(result.bundle.selected_names().size() ==
        static_cast<size_t>(result.bundle.mask.m));
}

TEST_CASE("reruns with the same config give byte-identical bundles and reports") {
  const std::string out1 = "/tmp/serf_test_det1";
  fs::remove_all(out1);
  const RunConfig cfg = tiny_run_config(out1, 21);
  run_pipeline(cfg);
  const auto bundle1 = read_bytes(fs::path(out1) / "bundle.serf");
  const auto report1 = read_bytes(fs::path(out1) / "report.csv");
  const auto dot1 = read_bytes(fs::path(out1) / "tree.dot");
  const auto perm1 = read_bytes(fs::path(out1) / "importance_permutation.csv");
  run_pipeline(cfg);  // identical config, fresh process state
  CHECK(read_bytes(fs::path(out1) / "bundle.serf") == bundle1);
  CHECK(read_bytes(fs::path(out1) / "report.csv") == report1);
  CHECK(read_bytes(fs::path(out1) / "tree.dot") == dot1);
  CHECK(read_bytes(fs::path(out1) / "importance_permutation.csv") == perm1);
}

TEST_CASE("saved bundles reload with bit-identical inference") {
  const std::string out_dir = "/tmp/serf_test_run_reload";
  fs::remove_all(out_dir);
  const PipelineResult result = run_pipeline(tiny_run_config(out_dir, 31));
  const std::string bundle_path = (fs::path(out_dir) / "bundle.serf").string();

  const ModelBundle loaded = load_bundle(bundle_path);
  CHECK(verify_bundle(loaded));
  CHECK(loaded.classifier.proba(result.bundle.validation_rows) ==
        result.bundle.validation_proba);
  CHECK(loaded.mask.kept_indices == result.bundle.mask.kept_indices);
  CHECK(loaded.map.t == result.bundle.map.t);
  CHECK(loaded.config.seed == result.bundle.config.seed);

  // truncation is detected
  const auto bytes = read_bytes(bundle_path);
  const std::string cut_path = "/tmp/serf_test_cut.serf";
  std::ofstream cut(cut_path, std::ios::binary);
  cut.write(reinterpret_cast<const char*>(bytes.data()), bytes.size() / 2);
  cut.close();
  CHECK_THROWS_AS(load_bundle(cut_path), CorruptBundle);

  // a future bundle_version is rejected with both versions named
  BlockFile bf = BlockFile::read_file(bundle_path);
  bf.meta["bundle_version"] = 42;
  const std::string future_path = "/tmp/serf_test_future.serf";
  bf.write_file(future_path);
  CHECK_THROWS_WITH_AS(load_bundle(future_path), doctest::Contains("42"), VersionMismatch);
}

TEST_CASE("score_recording is deterministic and explains each epoch") {
  const std::string out_dir = "/tmp/serf_test_run_score";
  fs::remove_all(out_dir);
  const PipelineResult result = run_pipeline(tiny_run_config(out_dir, 41));

  const auto fresh = synth_dataset(1, 8, default_stage_markov(), 99);
  const Recording& rec = fresh[0].first;

  const ScoreResult s1 = score_recording(result.bundle, rec);
  const ScoreResult s2 = score_recording(result.bundle, rec);
  CHECK(s1.hypnogram.size() == 8);
  CHECK(s1.probabilities.rows() == 8);
  CHECK(s1.hypnogram == s2.hypnogram);
  CHECK(s1.probabilities == s2.probabilities);
  REQUIRE(s1.attributions.size() == 8);
  for (const std::string& a : s1.attributions) CHECK(!a.empty());
  for (Eigen::Index i = 0; i < 8; ++i)
    CHECK(s1.probabilities.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));

  // missing channel is reported by name
  Recording broken = rec;
  broken.channels.erase(broken.channels.begin());  // drop EEG1
  CHECK_THROWS_WITH_AS(score_recording(result.bundle, broken), doctest::Contains("EEG1"),
                       ChannelMissing);
}

TEST_CASE("pipeline works for every classifier head") {
  for (ClassifierKind kind : {ClassifierKind::DT, ClassifierKind::LR}) {
    const std::string out_dir =
        std::string("/tmp/serf_test_run_") + classifier_name(kind);
    fs::remove_all(out_dir);
    RunConfig cfg = tiny_run_config(out_dir, 51);
    cfg.classifier.kind = kind;
    const PipelineResult result = run_pipeline(cfg);
    CHECK(verify_bundle(result.bundle));
    CHECK(fs::exists(fs::path(out_dir) / "tree.dot"));  // LR gets a surrogate diagram
    if (kind == ClassifierKind::LR) CHECK(result.split_gain.entries.empty());
  }
}
