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
#include <cmath>
#include <set>
#include <vector>

#include "serf/common.hpp"
#include "serf/simpleclf.hpp"

using namespace serf;

namespace {

double gini(const std::vector<Stage>& y, const std::vector<int>& rows) {
  if (rows.empty()) return 0.0;
  std::array<double, kNumStages> counts{};
  for (int r : rows) counts[static_cast<int>(y[r])] += 1.0;
  double impurity = 1.0;
  for (double c : counts) impurity -= (c / rows.size()) * (c / rows.size());
  return impurity;
}

struct OracleSplit {
  bool found = false;
  int col = -1;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();  // weighted child Gini
};

// Exhaustive search over every feature and every midpoint threshold,
// tie-break: lower column, then lower threshold.
OracleSplit exhaustive_best_split(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                                  const std::vector<int>& rows, std::int64_t min_leaf) {
  OracleSplit best;
  for (int col = 0; col < x.cols(); ++col) {
    std::set<double> values;
    for (int r : rows) values.insert(x(r, col));
    std::vector<double> sorted(values.begin(), values.end());
    for (size_t v = 0; v + 1 < sorted.size(); ++v) {
      const double threshold = (sorted[v] + sorted[v + 1]) / 2.0;
      std::vector<int> left, right;
      for (int r : rows) (x(r, col) <= threshold ? left : right).push_back(r);
      if (static_cast<std::int64_t>(left.size()) < min_leaf ||
          static_cast<std::int64_t>(right.size()) < min_leaf)
        continue;
      const double score = (left.size() * gini(y, left) + right.size() * gini(y, right)) /
                           static_cast<double>(rows.size());
      if (score < best.score) {
        best = {true, col, threshold, score};
      }
    }
  }
  return best;
}

// Route training rows through the fitted tree and re-derive every split.
void check_tree_against_oracle(const DecisionTreeModel& tree, const Eigen::MatrixXd& x,
                               const std::vector<Stage>& y) {
  std::vector<std::pair<int, std::vector<int>>> stack;
  std::vector<int> all(x.rows());
  for (int i = 0; i < x.rows(); ++i) all[i] = i;
  stack.push_back({0, all});
  while (!stack.empty()) {
    auto [node_idx, rows] = stack.back();
    stack.pop_back();
    const TreeNode& node = tree.nodes[node_idx];
    if (node.split_col < 0) continue;
    const OracleSplit oracle = exhaustive_best_split(x, y, rows, tree.min_samples_leaf);
    REQUIRE(oracle.found);
    CHECK(node.split_col == oracle.col);
    CHECK(node.threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
    std::vector<int> left, right;
    for (int r : rows) (x(r, node.split_col) <= node.threshold ? left : right).push_back(r);
    stack.push_back({node.left, left});
    stack.push_back({node.right, right});
  }
}

Eigen::MatrixXd xor_data(std::vector<Stage>& y) {
  Eigen::MatrixXd x(4, 2);
  x << 0, 0, 0, 1, 1, 0, 1, 1;
  y = {Stage::Wake, Stage::N2, Stage::N2, Stage::Wake};
  return x;
}

double cross_entropy(const Eigen::MatrixXd& proba, const std::vector<Stage>& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < proba.rows(); ++i)
    total -= std::log(std::max(proba(i, static_cast<int>(y[i])), 1e-12));
  return total / proba.rows();
}

}  // namespace

TEST_CASE("CART splits match exhaustive Gini search on 100 random instances") {
  Rng rng(808);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20 + static_cast<int>(rng.below(181));
    const int m = 1 + static_cast<int>(rng.below(5));
    Eigen::MatrixXd x(n, m);
    std::vector<Stage> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<Stage>(rng.below(5));
      for (int j = 0; j < m; ++j)
        // quantized values create ties; label leakage creates signal
        x(i, j) = std::floor(rng.normal() * 3.0) + 0.5 * static_cast<double>(y[i]);
    }
    const DecisionTreeModel tree = fit_tree(x, y, 3, 1);
    check_tree_against_oracle(tree, x, y);
  }
}

TEST_CASE("XOR: depth 1 scores 0.5, depth 2 scores 1.0") {
  std::vector<Stage> y;
  const Eigen::MatrixXd x = xor_data(y);
  const DecisionTreeModel depth1 = fit_tree(x, y, 1, 1);
  const DecisionTreeModel depth2 = fit_tree(x, y, 2, 1);
  int correct1 = 0, correct2 = 0;
  const auto p1 = predict(depth1, x);
  const auto p2 = predict(depth2, x);
  for (int i = 0; i < 4; ++i) {
    correct1 += p1[i] == y[i];
    correct2 += p2[i] == y[i];
  }
  CHECK(correct1 == 2);
  CHECK(correct2 == 4);
}

TEST_CASE("tree nodes carry coherent statistics") {
  Rng rng(11);
  Eigen::MatrixXd x(60, 3);
  std::vector<Stage> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = static_cast<Stage>(i % 5);
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal() + static_cast<double>(y[i]);
  }
  const DecisionTreeModel tree = fit_tree(x, y, 4, 2, {"a", "b", "c"});
  CHECK(tree.nodes[0].fraction == 1.0);
  for (const TreeNode& node : tree.nodes) {
    double sum = 0.0;
    for (double r : node.class_ratio) sum += r;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(node.fraction > 0.0);
    const auto majority_idx =
        std::max_element(node.class_ratio.begin(), node.class_ratio.end()) -
        node.class_ratio.begin();
    CHECK(node.class_ratio[static_cast<int>(node.majority)] ==
          doctest::Approx(node.class_ratio[majority_idx]));
    if (node.split_col >= 0) CHECK(node.gain >= 0.0);
  }
}

TEST_CASE("predict_proba rows sum to one for every model family") {
  Rng rng(12);
  Eigen::MatrixXd x(80, 4);
  std::vector<Stage> y(80);
  for (int i = 0; i < 80; ++i) {
    y[i] = static_cast<Stage>(i % 5);
    for (int j = 0; j < 4; ++j) x(i, j) = rng.normal() + 0.8 * static_cast<double>(y[i]);
  }
  const auto tree_proba = predict_proba(fit_tree(x, y, 3, 1), x);
  const auto boost_proba = predict_proba(fit_boosted(x, y, 10, 0.3, 3, 0.0, 5), x);
  const auto lr_proba = predict_proba(fit_logistic(x, y, 1e-3), x);
  for (const auto* proba : {&tree_proba, &boost_proba, &lr_proba})
    for (Eigen::Index i = 0; i < proba->rows(); ++i) {
      CHECK(proba->row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(proba->row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("boosting reduces training cross-entropy over rounds") {
  Rng rng(13);
  Eigen::MatrixXd x(100, 3);
  std::vector<Stage> y(100);
  for (int i = 0; i < 100; ++i) {
    y[i] = static_cast<Stage>(i % 5);
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal() * 0.5 + static_cast<double>(y[i]);
  }
  const auto few = fit_boosted(x, y, 2, 0.3, 3, 0.0, 5);
  const auto many = fit_boosted(x, y, 30, 0.3, 3, 0.0, 5);
  CHECK(cross_entropy(predict_proba(many, x), y) < cross_entropy(predict_proba(few, x), y));
  // and it actually separates this easy data
  const auto preds = predict(many, x);
  int correct = 0;
  for (int i = 0; i < 100; ++i) correct += preds[i] == y[i];
  CHECK(correct > 90);
}

TEST_CASE("DART dropout is deterministic in the seed and keeps accuracy") {
  Rng rng(14);
  Eigen::MatrixXd x(100, 3);
  std::vector<Stage> y(100);
  for (int i = 0; i < 100; ++i) {
    y[i] = static_cast<Stage>(i % 5);
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal() * 0.5 + static_cast<double>(y[i]);
  }
  const auto a = fit_boosted(x, y, 20, 0.3, 3, 0.3, 5);
  const auto b = fit_boosted(x, y, 20, 0.3, 3, 0.3, 5);
  const auto pa = predict_proba(a, x);
  const auto pb = predict_proba(b, x);
  CHECK((pa - pb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.dart_dropout == 0.3);

  const auto preds = predict(a, x);
  int correct = 0;
  for (int i = 0; i < 100; ++i) correct += preds[i] == y[i];
  CHECK(correct > 85);
}

TEST_CASE("logistic regression fits linearly separable data") {
  Rng rng(15);
  Eigen::MatrixXd x(150, 2);
  std::vector<Stage> y(150);
  for (int i = 0; i < 150; ++i) {
    y[i] = static_cast<Stage>(i % 3);  // three well-separated clusters
    x(i, 0) = rng.normal() * 0.2 + 3.0 * static_cast<double>(y[i]);
    x(i, 1) = rng.normal() * 0.2;
  }
  // standardized inputs (as the fitter expects) keep the problem well conditioned
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mean).square().mean());
    x.col(j) = (x.col(j).array() - mean) / sd;
  }
  const LogisticModel model = fit_logistic(x, y, 1e-2, 5000, 1e-4);
  const auto preds = predict(model, x);
  int correct = 0;
  for (int i = 0; i < 150; ++i) correct += preds[i] == y[i];
  CHECK(correct == 150);
  CHECK(model.converged);
}

TEST_CASE("argmax tie-break prefers the earlier stage") {
  Eigen::MatrixXd proba(1, kNumStages);
  proba << 0.3, 0.3, 0.2, 0.1, 0.1;
  CHECK(proba_argmax(proba)[0] == Stage::Wake);
}
