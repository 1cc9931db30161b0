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

#include "serf/interpret.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace serf {

namespace {

// Hue per stage (degrees / 360) for the DOT fill color.
constexpr double kStageHue[kNumStages] = {0.58, 0.13, 0.33, 0.08, 0.78};

std::string format_sig3(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string ratio_row(const std::array<double, kNumStages>& ratio) {
  std::string out = "[";
  for (int k = 0; k < kNumStages; ++k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", ratio[k]);
    out += buf;
    if (k + 1 < kNumStages) out += ", ";
  }
  return out + "]";
}

std::string feature_label(const DecisionTreeModel& tree, std::int32_t col) {
  if (col >= 0 && col < static_cast<std::int32_t>(tree.feature_names.size()))
    return tree.feature_names[col];
  return "f" + std::to_string(col);
}

void sort_entries(ImportanceReport& report) {
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) {
                     if (a.overall != b.overall) return a.overall > b.overall;
                     return a.name < b.name;
                   });
}

double per_stage_f1(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred, int stage) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    const bool t = static_cast<int>(y_true[i]) == stage;
    const bool p = static_cast<int>(y_pred[i]) == stage;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
  }
  return (2 * tp + fp + fn) > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
}

double overall_metric(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred,
                      ImportanceMetric metric) {
  if (metric == ImportanceMetric::Kappa) return kappa(y_true, y_pred);
  return summarize(y_true, y_pred).macro_f1;
}

}  // namespace

std::string export_tree_dot(const DecisionTreeModel& tree) {
  if (tree.nodes.empty()) throw MissingStats("export_tree_dot: tree has no nodes");
  for (const TreeNode& node : tree.nodes)
    if (node.fraction <= 0.0) throw MissingStats("export_tree_dot: node statistics missing");

  std::string out = "digraph serf_tree {\n  node [shape=box, style=filled, fontname=\"Helvetica\"];\n";
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& node = tree.nodes[i];
    const double purity =
        *std::max_element(node.class_ratio.begin(), node.class_ratio.end());
    std::string label;
    if (node.split_col >= 0) {
      label += feature_label(tree, node.split_col) + "\\n";
      label += "\xe2\x89\xa4 " + format_sig3(node.threshold) + "\\n";
    }
    char pct[32];
    std::snprintf(pct, sizeof(pct), "%.1f%% of data", node.fraction * 100.0);
    label += std::string(pct) + "\\n";
    label += ratio_row(node.class_ratio) + "\\n";
    label += stage_name(node.majority);
    char color[48];
    std::snprintf(color, sizeof(color), "%.3f %.3f 1.000",
                  kStageHue[static_cast<int>(node.majority)], purity);
    out += "  n" + std::to_string(i) + " [label=\"" + label + "\", fillcolor=\"" + color + "\"];\n";
    if (node.split_col >= 0) {
      out += "  n" + std::to_string(i) + " -> n" + std::to_string(node.left) +
             " [label=\"yes\"];\n";
      out += "  n" + std::to_string(i) + " -> n" + std::to_string(node.right) +
             " [label=\"no\"];\n";
    }
  }
  out += "}\n";
  return out;
}

ImportanceReport permutation_importance(
    const std::function<std::vector<Stage>(const Eigen::MatrixXd&)>& predict_fn,
    const Eigen::MatrixXd& x, const std::vector<Stage>& y,
    const std::vector<std::string>& feature_names, ImportanceMetric metric, int repeats,
    std::uint64_t seed) {
  if (x.rows() < 10) throw DataError("permutation_importance: need at least 10 rows");
  if (static_cast<Eigen::Index>(y.size()) != x.rows())
    throw DataError("permutation_importance: label count mismatch");
  if (repeats < 1) throw ConfigError("permutation_importance: repeats must be positive");

  const std::vector<Stage> baseline_pred = predict_fn(x);
  const double baseline = overall_metric(y, baseline_pred, metric);
  std::array<double, kNumStages> baseline_f1;
  for (int k = 0; k < kNumStages; ++k) baseline_f1[k] = per_stage_f1(y, baseline_pred, k);

  ImportanceReport report;
  report.method = "permutation";
  const Eigen::Index n = x.rows();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    ImportanceEntry entry;
    entry.name = j < static_cast<Eigen::Index>(feature_names.size())
                     ? feature_names[j]
                     : "f" + std::to_string(j);
    Rng col_rng(Rng(seed).derive(static_cast<std::uint64_t>(j)).next_u64());
    double sum_overall = 0.0;
    std::array<double, kNumStages> sum_f1{};
    Eigen::MatrixXd shuffled = x;
    for (int r = 0; r < repeats; ++r) {
      // Fisher-Yates on column j only.
      shuffled.col(j) = x.col(j);
      for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(shuffled(i, j), shuffled(col_rng.below(i + 1), j));
      const std::vector<Stage> pred = predict_fn(shuffled);
      sum_overall += overall_metric(y, pred, metric);
      for (int k = 0; k < kNumStages; ++k) sum_f1[k] += per_stage_f1(y, pred, k);
    }
    entry.overall = baseline - sum_overall / repeats;
    for (int k = 0; k < kNumStages; ++k) entry.per_stage[k] = baseline_f1[k] - sum_f1[k] / repeats;
    report.entries.push_back(std::move(entry));
  }
  sort_entries(report);
  return report;
}

namespace {

ImportanceReport normalize_gains(std::vector<ImportanceEntry> entries) {
  double total = 0.0;
  for (const auto& e : entries) total += e.overall;
  if (total > 0.0)
    for (auto& e : entries) {
      e.overall /= total;
      for (double& v : e.per_stage) v /= total;
    }
  ImportanceReport report;
  report.method = "split_gain";
  report.entries = std::move(entries);
  sort_entries(report);
  return report;
}

std::vector<ImportanceEntry> named_entries(const std::vector<std::string>& names,
                                           std::int64_t count) {
  std::vector<ImportanceEntry> entries(count);
  for (std::int64_t j = 0; j < count; ++j)
    entries[j].name = j < static_cast<std::int64_t>(names.size()) ? names[j]
                                                                  : "f" + std::to_string(j);
  return entries;
}

std::int64_t max_split_col(std::int64_t current, std::int32_t col) {
  return std::max(current, static_cast<std::int64_t>(col) + 1);
}

}  // namespace

ImportanceReport split_gain_importance(const DecisionTreeModel& tree) {
  if (tree.nodes.empty()) throw NotTreeBased("split_gain_importance: empty tree");
  std::int64_t cols = static_cast<std::int64_t>(tree.feature_names.size());
  for (const TreeNode& node : tree.nodes)
    if (node.split_col >= 0) cols = max_split_col(cols, node.split_col);
  auto entries = named_entries(tree.feature_names, cols);
  for (const TreeNode& node : tree.nodes) {
    if (node.split_col < 0) continue;
    entries[node.split_col].overall += node.gain;
    // attribute the gain across stages by the node's class mix
    for (int k = 0; k < kNumStages; ++k)
      entries[node.split_col].per_stage[k] += node.gain * node.class_ratio[k];
  }
  return normalize_gains(std::move(entries));
}

ImportanceReport split_gain_importance(const BoostedEnsemble& ensemble) {
  if (ensemble.trees.empty()) throw NotTreeBased("split_gain_importance: empty ensemble");
  std::int64_t cols = static_cast<std::int64_t>(ensemble.feature_names.size());
  for (const auto& round : ensemble.trees)
    for (const RegressionTree& tree : round)
      for (const RegressionTreeNode& node : tree.nodes)
        if (node.split_col >= 0) cols = max_split_col(cols, node.split_col);
  auto entries = named_entries(ensemble.feature_names, cols);
  for (const auto& round : ensemble.trees)
    for (int k = 0; k < kNumStages; ++k)
      for (const RegressionTreeNode& node : round[k].nodes) {
        if (node.split_col < 0) continue;
        entries[node.split_col].overall += node.gain;
        entries[node.split_col].per_stage[k] += node.gain;
      }
  return normalize_gains(std::move(entries));
}

std::string importance_to_text(const ImportanceReport& report) {
  std::string out = "feature importance (" + report.method + ")\n";
  for (const auto& e : report.entries) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  %-40s overall=%+.6f  W=%+.4f N1=%+.4f N2=%+.4f N3=%+.4f REM=%+.4f\n",
                  e.name.c_str(), e.overall, e.per_stage[0], e.per_stage[1], e.per_stage[2],
                  e.per_stage[3], e.per_stage[4]);
    out += buf;
  }
  return out;
}

void write_importance_csv(const ImportanceReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "feature,method,overall,wake,n1,n2,n3,rem\n";
  for (const auto& e : report.entries) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.name.c_str(),
                  report.method.c_str(), e.overall, e.per_stage[0], e.per_stage[1], e.per_stage[2],
                  e.per_stage[3], e.per_stage[4]);
    out << buf;
  }
}

}  // namespace serf
