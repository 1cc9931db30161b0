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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "serf/pipeline.hpp"
#include "serf/synthgen.hpp"

namespace fs = std::filesystem;
using namespace serf;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> classifier;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool out_required = true) {
  cmd->add_option("--config", opts.config_path, "run configuration JSON");
  cmd->add_option("--seed", opts.seed, "override the config seed");
  auto* out_opt = cmd->add_option("--out", opts.out, "output path");
  if (out_required) out_opt->required();
  cmd->add_option("--classifier", opts.classifier, "classifier tag")
      ->check(CLI::IsMember({"dt", "gb", "xg", "lr"}));
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig config = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.classifier) config.classifier.kind = parse_classifier(*opts.classifier);
  if (!opts.out.empty()) config.out_dir = opts.out;
  return config;
}

ChannelMap effective_channel_map(const RunConfig& config) {
  if (!config.channel_map.all_channels().empty()) return config.channel_map;
  if (config.mode == "synth") return default_synth_channel_map();
  throw ConfigError("edf mode requires an explicit channel_map in the config");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

EpochSet ingest_dataset(const RunConfig& config) {
  const ChannelMap map = effective_channel_map(config);
  EpochSet combined;
  if (config.mode == "synth") {
    SynthDatasetOptions options;
    options.channel_labels = map.all_channels();
    options.rate = config.target_rate;
    for (const auto& [recording, annotations] :
         synth_dataset(config.synth_subjects, config.synth_epochs, default_stage_markov(),
                       config.seed + kSeedOffsetSynth, options)) {
      EpochSet epochs = ingest_recording(recording, annotations, map, config.target_rate,
                                         config.epoch_seconds, recording.id);
      if (epochs.n() > 0) combined.append(epochs);
    }
  } else {
    for (size_t i = 0; i < config.edf_paths.size(); ++i) {
      const Recording recording = read_edf_file(config.edf_paths[i]);
      const auto annotations =
          read_stage_labels(read_text_file(config.label_paths[i]),
                            config.label_schema == "rk" ? LabelSchema::RK : LabelSchema::AASM);
      const std::string subject =
          recording.id.empty() ? fs::path(config.edf_paths[i]).stem().string() : recording.id;
      EpochSet epochs = ingest_recording(recording, annotations, map, config.target_rate,
                                         config.epoch_seconds, subject);
      if (epochs.n() > 0) combined.append(epochs);
    }
  }
  if (combined.n() == 0) throw EmptyAfterFiltering("no scored epochs in the dataset");
  return combined;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SERF: interpretable sleep staging via representative expert features"};
  app.require_subcommand(1);

  CommonOpts opts;

  // synth -----------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic PSG dataset as EDF files");
  add_common(synth, opts);
  synth->callback([&] {
    const RunConfig config = resolve_config(opts);
    fs::create_directories(opts.out);
    const ChannelMap map = effective_channel_map(config);
    SynthDatasetOptions options;
    options.channel_labels = map.all_channels();
    options.rate = config.target_rate;
    for (const auto& [recording, annotations] :
         synth_dataset(config.synth_subjects, config.synth_epochs, default_stage_markov(),
                       config.seed + kSeedOffsetSynth, options)) {
      write_edf_file(recording, (fs::path(opts.out) / (recording.id + ".edf")).string());
      write_text((fs::path(opts.out) / (recording.id + ".labels.csv")).string(),
                 write_stage_labels(annotations));
    }
    std::printf("wrote %d synthetic recordings to %s\n", config.synth_subjects, opts.out.c_str());
  });

  // ingest ----------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "segment recordings into a labeled epochs artifact");
  add_common(ingest, opts);
  ingest->callback([&] {
    const RunConfig config = resolve_config(opts);
    const EpochSet epochs = ingest_dataset(config);
    save_epochs(epochs, opts.out);
    std::printf("ingested %lld epochs x %lld channels\n", static_cast<long long>(epochs.n()),
                static_cast<long long>(epochs.c()));
  });

  // features ---------------------------------------------------------------
  std::string in_path, model_path, map_path, mask_path, features_path, clf_path, bundle_path,
      edf_path;
  auto* features_cmd = app.add_subcommand("features", "extract expert features from epochs");
  add_common(features_cmd, opts);
  features_cmd->add_option("--in", in_path, "epochs artifact")->required();
  features_cmd->callback([&] {
    const RunConfig config = resolve_config(opts);
    const EpochSet epochs = load_epochs(in_path);
    const FeatureMatrix features = extract_features(epochs, effective_channel_map(config));
    save_features(features, epochs.labels, opts.out);
    write_feature_csv(features, opts.out + ".csv");
    std::printf("extracted %lld features for %lld epochs\n",
                static_cast<long long>(features.m()), static_cast<long long>(features.n));
  });

  // select ------------------------------------------------------------------
  auto* select = app.add_subcommand("select", "ANOVA feature selection");
  add_common(select, opts);
  select->add_option("--in", in_path, "features artifact")->required();
  select->callback([&] {
    const auto [features, labels] = load_features(in_path);
    const SelectionMask mask = select_top(features, labels);
    save_mask(mask, opts.out);
    std::printf("kept %lld of %lld features\n", static_cast<long long>(mask.m),
                static_cast<long long>(mask.m_prime));
  });

  // train-embed ---------------------------------------------------------------
  auto* train_embed = app.add_subcommand("train-embed", "train the CNN-BiLSTM embedder");
  add_common(train_embed, opts);
  train_embed->add_option("--in", in_path, "epochs artifact")->required();
  train_embed->callback([&] {
    const RunConfig config = resolve_config(opts);
    const EpochSet epochs = load_epochs(in_path);
    EmbedderConfig ecfg = config.embedder;
    ecfg.input_channels = static_cast<int>(epochs.c());
    ecfg.input_length = static_cast<int>(epochs.l());
    ecfg.seed = config.seed + kSeedOffsetEmbed;
    EmbedderModel model = init_model(ecfg);
    const TrainStats stats = train(model, epochs, ecfg);
    save_embedder(model, opts.out);
    write_loss_trace_csv(stats, opts.out + ".loss.csv");
    std::printf("trained embedder: %zu optimizer steps, final loss %.6f\n",
                stats.loss_trace.size(), stats.loss_trace.empty() ? 0.0 : stats.loss_trace.back());
  });

  // embed -----------------------------------------------------------------------
  auto* embed = app.add_subcommand("embed", "extract embeddings H for an epochs artifact");
  add_common(embed, opts);
  embed->add_option("--in", in_path, "epochs artifact")->required();
  embed->add_option("--model", model_path, "embedder artifact")->required();
  embed->callback([&] {
    const EpochSet epochs = load_epochs(in_path);
    const EmbedderModel model = load_embedder(model_path);
    LabeledMatrix h;
    h.values = extract_embeddings(model, epochs);
    h.labels = epochs.labels;
    h.subjects = epochs.subject_ids;
    save_labeled_matrix(h, opts.out);
    std::printf("embedded %lld epochs into dimension %lld\n",
                static_cast<long long>(h.values.rows()), static_cast<long long>(h.values.cols()));
  });

  // fit-map ------------------------------------------------------------------------
  auto* fit_map_cmd = app.add_subcommand("fit-map", "fit the ridge map T from features to H");
  add_common(fit_map_cmd, opts);
  fit_map_cmd->add_option("--features", features_path, "features artifact")->required();
  fit_map_cmd->add_option("--mask", mask_path, "selection mask artifact")->required();
  fit_map_cmd->add_option("--embeddings", in_path, "embeddings artifact")->required();
  fit_map_cmd->callback([&] {
    const RunConfig config = resolve_config(opts);
    const auto [features, labels] = load_features(features_path);
    const SelectionMask mask = load_mask(mask_path);
    const LabeledMatrix h = load_labeled_matrix(in_path);
    Standardization stats;
    const Eigen::MatrixXd f_std = standardize(to_eigen(apply_mask(features, mask)), &stats, true);
    if (f_std.rows() != h.values.rows())
      throw DataError("fit-map: features and embeddings disagree on the row count");
    LinearMap map = fit_map(f_std, h.values, config.lambda);
    map.standardization = std::move(stats);
    save_linear_map(map, opts.out);
    std::printf("fitted map T: %lld x %lld (lambda %.6g)\n",
                static_cast<long long>(map.t.rows()), static_cast<long long>(map.t.cols()),
                map.lambda);
  });

  // represent -------------------------------------------------------------------------
  auto* represent_cmd = app.add_subcommand("represent", "representative matrix S = H T^T");
  add_common(represent_cmd, opts);
  represent_cmd->add_option("--map", map_path, "linear map artifact")->required();
  represent_cmd->add_option("--embeddings", in_path, "embeddings artifact")->required();
  represent_cmd->callback([&] {
    const LinearMap map = load_linear_map(map_path);
    LabeledMatrix s = load_labeled_matrix(in_path);
    s.values = represent(map, s.values);
    save_labeled_matrix(s, opts.out);
    std::printf("represented %lld epochs over %lld expert axes\n",
                static_cast<long long>(s.values.rows()), static_cast<long long>(s.values.cols()));
  });

  // train-clf ---------------------------------------------------------------------------
  auto* train_clf = app.add_subcommand("train-clf", "fit the interpretable classifier on S");
  add_common(train_clf, opts);
  train_clf->add_option("--in", in_path, "representative matrix artifact")->required();
  train_clf->add_option("--features", features_path, "features artifact (names)");
  train_clf->add_option("--mask", mask_path, "selection mask artifact (names)");
  train_clf->callback([&] {
    const RunConfig config = resolve_config(opts);
    const LabeledMatrix s = load_labeled_matrix(in_path);
    std::vector<std::string> names;
    if (!features_path.empty() && !mask_path.empty()) {
      const auto [features, labels] = load_features(features_path);
      for (std::int64_t idx : load_mask(mask_path).kept_indices)
        names.push_back(features.descriptors[idx].name);
    }
    FittedClassifier clf;
    clf.kind = config.classifier.kind;
    const auto& cc = config.classifier;
    switch (cc.kind) {
      case ClassifierKind::DT:
        clf.tree = fit_tree(s.values, s.labels, cc.tree_depth, cc.min_samples_leaf, names);
        break;
      case ClassifierKind::GB:
        clf.ensemble = fit_boosted(s.values, s.labels, cc.rounds, cc.learning_rate, cc.tree_depth,
                                   0.0, config.seed + kSeedOffsetBoost, names);
        break;
      case ClassifierKind::XG:
        clf.ensemble = fit_boosted(s.values, s.labels, cc.rounds, cc.learning_rate, cc.tree_depth,
                                   cc.dart_dropout, config.seed + kSeedOffsetBoost, names);
        break;
      case ClassifierKind::LR:
        clf.logistic = fit_logistic(s.values, s.labels, cc.l2_penalty, cc.lr_max_iters);
        break;
    }
    save_classifier(clf, names, opts.out);
    std::printf("trained %s classifier on %lld epochs\n", classifier_name(cc.kind),
                static_cast<long long>(s.values.rows()));
  });

  // evaluate -------------------------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "score a representative matrix against labels");
  add_common(evaluate, opts);
  evaluate->add_option("--in", in_path, "representative matrix artifact")->required();
  evaluate->add_option("--clf", clf_path, "classifier artifact")->required();
  evaluate->callback([&] {
    const LabeledMatrix s = load_labeled_matrix(in_path);
    const auto [clf, names] = load_classifier(clf_path);
    const Eigen::MatrixXd proba = clf.proba(s.values);
    std::vector<double> flat(proba.size());
    for (Eigen::Index i = 0; i < proba.rows(); ++i)
      for (Eigen::Index j = 0; j < proba.cols(); ++j) flat[i * proba.cols() + j] = proba(i, j);
    const EvalReport report = summarize(s.labels, proba_argmax(proba), flat);
    write_text(opts.out, report.to_text());
    write_text(opts.out + ".csv", report.to_csv_row(true));
    std::fputs(report.to_text().c_str(), stdout);
  });

  // explain ----------------------------------------------------------------------------------
  auto* explain = app.add_subcommand("explain", "DOT diagram and feature-importance reports");
  add_common(explain, opts);
  explain->add_option("--in", in_path, "representative matrix artifact")->required();
  explain->add_option("--clf", clf_path, "classifier artifact")->required();
  explain->callback([&] {
    const RunConfig config = resolve_config(opts);
    const LabeledMatrix s = load_labeled_matrix(in_path);
    const auto [clf, names] = load_classifier(clf_path);
    fs::create_directories(opts.out);
    const DecisionTreeModel tree =
        clf.kind == ClassifierKind::DT
            ? clf.tree
            : fit_tree(s.values, s.labels, config.classifier.tree_depth,
                       config.classifier.min_samples_leaf, names);
    write_text((fs::path(opts.out) / "tree.dot").string(), export_tree_dot(tree));
    const ImportanceReport perm = permutation_importance(
        [&clf = clf](const Eigen::MatrixXd& x) { return clf.predict(x); }, s.values, s.labels,
        names, ImportanceMetric::Kappa, 3, config.seed + kSeedOffsetPermute);
    write_importance_csv(perm, (fs::path(opts.out) / "importance_permutation.csv").string());
    if (clf.kind == ClassifierKind::DT)
      write_importance_csv(split_gain_importance(clf.tree),
                           (fs::path(opts.out) / "importance_split_gain.csv").string());
    else if (clf.kind != ClassifierKind::LR)
      write_importance_csv(split_gain_importance(clf.ensemble),
                           (fs::path(opts.out) / "importance_split_gain.csv").string());
    std::printf("wrote explanations to %s\n", opts.out.c_str());
  });

  // pipeline ------------------------------------------------------------------------------------
  auto* pipeline = app.add_subcommand("pipeline", "run the full SERF pipeline");
  add_common(pipeline, opts, /*out_required=*/false);
  pipeline->callback([&] {
    RunConfig config = resolve_config(opts);
    const PipelineResult result = run_pipeline(config);
    std::fputs(result.report.to_text().c_str(), stdout);
  });

  // score ----------------------------------------------------------------------------------------
  auto* score = app.add_subcommand("score", "score one EDF recording with a trained bundle");
  add_common(score, opts);
  score->add_option("--bundle", bundle_path, "model bundle")->required();
  score->add_option("--edf", edf_path, "EDF recording")->required();
  score->callback([&] {
    const ModelBundle bundle = load_bundle(bundle_path);
    const ScoreResult result = score_recording(bundle, read_edf_file(edf_path));
    std::string csv = "epoch,stage,p_wake,p_n1,p_n2,p_n3,p_rem,attribution\n";
    for (size_t e = 0; e < result.hypnogram.size(); ++e) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f,\"%s\"\n", e,
                    stage_name(result.hypnogram[e]), result.probabilities(e, 0),
                    result.probabilities(e, 1), result.probabilities(e, 2),
                    result.probabilities(e, 3), result.probabilities(e, 4),
                    result.attributions[e].c_str());
      csv += buf;
    }
    write_text(opts.out, csv);
    std::printf("scored %zu epochs -> %s\n", result.hypnogram.size(), opts.out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  }
  return 0;
}
