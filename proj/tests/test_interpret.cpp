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

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "serf/common.hpp"
#include "serf/interpret.hpp"
#include "serf/simpleclf.hpp"

using namespace serf;

namespace {

// Pull every node label out of the DOT text.
std::vector<std::string> dot_labels(const std::string& dot) {
  std::vector<std::string> labels;
  size_t pos = 0;
  while ((pos = dot.find("label=\"", pos)) != std::string::npos) {
    pos += 7;
    const size_t end = dot.find('"', pos);
    const std::string label = dot.substr(pos, end - pos);
    if (label != "yes" && label != "no") labels.push_back(label);
    pos = end;
  }
  return labels;
}

int label_rows(const std::string& label) {
  int rows = 1;
  size_t pos = 0;
  while ((pos = label.find("\\n", pos)) != std::string::npos) {
    ++rows;
    pos += 2;
  }
  return rows;
}

double ratio_row_sum(const std::string& label) {
  const size_t open = label.find('[');
  const size_t close = label.find(']');
  REQUIRE(open != std::string::npos);
  std::string inner = label.substr(open + 1, close - open - 1);
  for (char& ch : inner)
    if (ch == ',') ch = ' ';
  std::istringstream in(inner);
  double total = 0.0, v;
  while (in >> v) total += v;
  return total;
}

Eigen::MatrixXd staged_data(std::vector<Stage>& y, int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, 3);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<Stage>(i % 5);
    x(i, 0) = static_cast<double>(y[i]) + 0.1 * rng.normal();  // dominant
    x(i, 1) = rng.normal();                                    // noise
    x(i, 2) = 1.0;                                             // constant, never useful
  }
  return x;
}

}  // namespace

TEST_CASE("single-leaf tree exports a three-row pure-N3 node") {
  Eigen::MatrixXd x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  const std::vector<Stage> y(4, Stage::N3);
  const DecisionTreeModel tree = fit_tree(x, y, 3, 1);
  REQUIRE(tree.nodes.size() == 1);

  const std::string dot = export_tree_dot(tree);
  const auto labels = dot_labels(dot);
  REQUIRE(labels.size() == 1);
  CHECK(label_rows(labels[0]) == 3);
  CHECK(labels[0].find("100.0% of data") != std::string::npos);
  CHECK(labels[0].find("N3") != std::string::npos);
  // N3 hue at purity 1.0
  CHECK(dot.find("fillcolor=\"0.080 1.000 1.000\"") != std::string::npos);
}

TEST_CASE("internal nodes carry five label rows, leaves three, ratios sum to 1") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 100, 5);
  const DecisionTreeModel tree = fit_tree(x, y, 3, 2, {"alpha", "beta", "konst"});
  const std::string dot = export_tree_dot(tree);
  const auto labels = dot_labels(dot);
  REQUIRE(labels.size() == tree.nodes.size());

  int internal = 0, leaves = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (tree.nodes[i].split_col >= 0) {
      CHECK(label_rows(labels[i]) == 5);
      CHECK(labels[i].find("\xe2\x89\xa4 ") != std::string::npos);  // threshold row
      ++internal;
    } else {
      CHECK(label_rows(labels[i]) == 3);
      ++leaves;
    }
    CHECK(ratio_row_sum(labels[i]) == doctest::Approx(1.0).epsilon(0.03));
  }
  CHECK(internal > 0);
  CHECK(leaves > internal);  // binary tree: leaves = internal + 1
  // named features appear in the split rows
  CHECK(dot.find("alpha") != std::string::npos);
}

TEST_CASE("DOT export is byte-stable") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 60, 9);
  const DecisionTreeModel tree = fit_tree(x, y, 4, 1);
  CHECK(export_tree_dot(tree) == export_tree_dot(tree));
}

TEST_CASE("missing node statistics raise MissingStats") {
  CHECK_THROWS_AS(export_tree_dot(DecisionTreeModel{}), MissingStats);

  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 40, 2);
  DecisionTreeModel tree = fit_tree(x, y, 2, 1);
  tree.nodes[0].fraction = 0.0;  // simulate a deserialized tree without stats
  CHECK_THROWS_AS(export_tree_dot(tree), MissingStats);
}

TEST_CASE("permutation importance: unused column is exactly zero, dominant is maximal") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 200, 17);
  const DecisionTreeModel tree = fit_tree(x, y, 4, 2);
  auto predict_fn = [&](const Eigen::MatrixXd& m) { return predict(tree, m); };

  const ImportanceReport report = permutation_importance(
      predict_fn, x, y, {"alpha", "beta", "konst"}, ImportanceMetric::Kappa, 5, 11);
  REQUIRE(report.entries.size() == 3);
  CHECK(report.method == "permutation");
  // sorted descending: the dominant feature must come first
  CHECK(report.entries[0].name == "alpha");
  CHECK(report.entries[0].overall > 0.5);
  // shuffling a constant column changes nothing, so its delta is exactly 0
  for (const auto& e : report.entries)
    if (e.name == "konst") {
      CHECK(e.overall == 0.0);
      for (double v : e.per_stage) CHECK(v == 0.0);
    }
}

TEST_CASE("permutation importance is deterministic in the seed") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 80, 23);
  const DecisionTreeModel tree = fit_tree(x, y, 3, 1);
  auto predict_fn = [&](const Eigen::MatrixXd& m) { return predict(tree, m); };

  const auto a =
      permutation_importance(predict_fn, x, y, {}, ImportanceMetric::MacroF1, 3, 42);
  const auto b =
      permutation_importance(predict_fn, x, y, {}, ImportanceMetric::MacroF1, 3, 42);
  const auto c =
      permutation_importance(predict_fn, x, y, {}, ImportanceMetric::MacroF1, 3, 43);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].name == b.entries[i].name);
    CHECK(a.entries[i].overall == b.entries[i].overall);
  }
  bool any_diff = false;
  for (size_t i = 0; i < a.entries.size(); ++i)
    any_diff = any_diff || a.entries[i].overall != c.entries[i].overall;
  CHECK(any_diff);
}

TEST_CASE("permutation importance validates inputs") {
  Eigen::MatrixXd x(5, 2);
  x.setZero();
  const std::vector<Stage> y(5, Stage::Wake);
  auto fn = [](const Eigen::MatrixXd& m) { return std::vector<Stage>(m.rows(), Stage::Wake); };
  CHECK_THROWS_AS(permutation_importance(fn, x, y, {}, ImportanceMetric::Kappa, 3, 1), DataError);
}

TEST_CASE("split-gain importance normalizes hand-built gains 0.3/0.1 to 0.75/0.25") {
  DecisionTreeModel tree;
  tree.feature_names = {"a", "b"};
  tree.nodes.resize(3);
  tree.nodes[0] = {0, 0.5, 1, 2, 1.0, {0.5, 0.5, 0, 0, 0}, Stage::Wake, 0.3};
  tree.nodes[1] = {1, 0.2, -1, -1, 0.5, {1, 0, 0, 0, 0}, Stage::Wake, 0.0};
  tree.nodes[2] = {1, 0.8, -1, -1, 0.5, {0, 1, 0, 0, 0}, Stage::N1, 0.1};
  // leaf markers: nodes 1 is a leaf, node 2 splits on feature b
  tree.nodes[1].split_col = -1;

  const ImportanceReport report = split_gain_importance(tree);
  REQUIRE(report.entries.size() == 2);
  CHECK(report.entries[0].name == "a");
  CHECK(report.entries[0].overall == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(report.entries[1].name == "b");
  CHECK(report.entries[1].overall == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("split-gain importance: single split gets weight 1, unused features 0") {
  std::vector<Stage> y;
  for (int i = 0; i < 20; ++i) y.push_back(i < 10 ? Stage::Wake : Stage::N2);
  Eigen::MatrixXd x(20, 3);
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = i < 10 ? 0.0 : 1.0;  // the only informative feature
    x(i, 2) = rng.normal() * 0.01;
  }
  const DecisionTreeModel tree = fit_tree(x, y, 1, 1, {"n0", "sig", "n2"});
  const ImportanceReport report = split_gain_importance(tree);
  CHECK(report.entries[0].name == "sig");
  CHECK(report.entries[0].overall == 1.0);
  for (size_t i = 1; i < report.entries.size(); ++i) CHECK(report.entries[i].overall == 0.0);
}

TEST_CASE("ensemble split-gain importance sums to 1 and attributes per class") {
  std::vector<Stage> y;
  Rng rng(37);
  Eigen::MatrixXd x(100, 3);
  for (int i = 0; i < 100; ++i) {
    y.push_back(static_cast<Stage>(i % 5));
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal() + (j == 0 ? 1.5 * (i % 5) : 0.0);
  }
  const BoostedEnsemble ens = fit_boosted(x, y, 10, 0.3, 3, 0.0, 5, {"big", "x1", "x2"});
  const ImportanceReport report = split_gain_importance(ens);
  double total = 0.0;
  for (const auto& e : report.entries) total += e.overall;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.entries[0].name == "big");
}

TEST_CASE("empty models raise NotTreeBased") {
  CHECK_THROWS_AS(split_gain_importance(BoostedEnsemble{}), NotTreeBased);
}

TEST_CASE("importance serializations include every feature") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = staged_data(y, 60, 3);
  const DecisionTreeModel tree = fit_tree(x, y, 3, 1, {"alpha", "beta", "konst"});
  const ImportanceReport report = split_gain_importance(tree);
  const std::string text = importance_to_text(report);
  CHECK(text.find("split_gain") != std::string::npos);
  CHECK(text.find("alpha") != std::string::npos);

  const std::string path = "/tmp/serf_test_importance.csv";
  write_importance_csv(report, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "feature,method,overall,wake,n1,n2,n3,rem");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == static_cast<int>(report.entries.size()));
}
