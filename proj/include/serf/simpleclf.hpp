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

#ifndef SERF_SIMPLECLF_HPP_
#define SERF_SIMPLECLF_HPP_

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "serf/common.hpp"

namespace serf {

// --- CART --------------------------------------------------------------

struct TreeNode {
  std::int32_t split_col = -1;  // -1 = leaf
  double threshold = 0.0;
  std::int32_t left = -1, right = -1;  // rows with value <= threshold go left
  double fraction = 0.0;               // share of training rows through this node
  std::array<double, kNumStages> class_ratio{};
  Stage majority = Stage::Wake;
  double gain = 0.0;  // fraction-weighted Gini reduction of the split
};

struct DecisionTreeModel {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::int32_t max_depth = 4;
  std::int64_t min_samples_leaf = 1;
  std::vector<std::string> feature_names;
};

DecisionTreeModel fit_tree(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                           std::int32_t max_depth, std::int64_t min_samples_leaf,
                           std::vector<std::string> feature_names = {});

// --- gradient boosting ---------------------------------------------------

struct RegressionTreeNode {
  std::int32_t split_col = -1;
  double threshold = 0.0;
  std::int32_t left = -1, right = -1;
  double value = 0.0;      // Newton leaf value
  double gain = 0.0;       // squared-error reduction of the split
};

struct RegressionTree {
  std::vector<RegressionTreeNode> nodes;
  double predict(const double* row) const;
};

struct BoostedEnsemble {
  // trees[round][class]; scale folds in the DART normalization.
  std::vector<std::array<RegressionTree, kNumStages>> trees;
  std::vector<double> scale;  // per round
  std::array<double, kNumStages> base_score{};
  double learning_rate = 0.1;
  double dart_dropout = 0.0;
  std::vector<std::string> feature_names;
};

BoostedEnsemble fit_boosted(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                            std::int32_t rounds, double learning_rate, std::int32_t tree_depth,
                            double dart_dropout, std::uint64_t seed,
                            std::vector<std::string> feature_names = {});

// --- multinomial logistic regression -------------------------------------

struct LogisticModel {
  Eigen::MatrixXd w;  // M x 5
  Eigen::VectorXd b;  // 5
  double l2_penalty = 0.0;
  bool converged = false;
};

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                           double l2_penalty, std::int32_t max_iters = 500, double tol = 1e-6);

// --- shared inference ------------------------------------------------------

Eigen::MatrixXd predict_proba(const DecisionTreeModel& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd predict_proba(const BoostedEnsemble& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd predict_proba(const LogisticModel& model, const Eigen::MatrixXd& x);

// Argmax of predict_proba; ties break toward the earlier stage.
std::vector<Stage> proba_argmax(const Eigen::MatrixXd& probabilities);

template <typename Model>
std::vector<Stage> predict(const Model& model, const Eigen::MatrixXd& x) {
  return proba_argmax(predict_proba(model, x));
}

}  // namespace serf

#endif  // SERF_SIMPLECLF_HPP_
