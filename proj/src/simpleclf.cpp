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

#include "serf/simpleclf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace serf {

namespace {

double gini(const std::array<std::int64_t, kNumStages>& counts, std::int64_t n) {
  if (n == 0) return 0.0;
  double g = 1.0;
  for (std::int64_t c : counts) {
    const double p = static_cast<double>(c) / n;
    g -= p * p;
  }
  return g;
}

struct BestSplit {
  bool found = false;
  std::int32_t col = -1;
  double threshold = 0.0;
  double weighted_impurity = std::numeric_limits<double>::infinity();
};

// Exhaustive scan over midpoints of consecutive distinct sorted values.
// Features are visited in ascending index and thresholds in ascending
// order; a candidate replaces the best only when strictly better, which
// realizes the (lower column, lower threshold) tie-break.
BestSplit best_gini_split(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                          const std::vector<std::int64_t>& rows, std::int64_t min_samples_leaf) {
  const std::int64_t n = static_cast<std::int64_t>(rows.size());
  BestSplit best;
  std::vector<std::int64_t> order(rows);
  std::array<std::int64_t, kNumStages> total{};
  for (std::int64_t r : rows) ++total[static_cast<int>(y[r])];

  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      if (x(a, col) != x(b, col)) return x(a, col) < x(b, col);
      return a < b;
    });
    std::array<std::int64_t, kNumStages> left{};
    std::array<std::int64_t, kNumStages> right = total;
    for (std::int64_t i = 0; i + 1 < n; ++i) {
      const int cls = static_cast<int>(y[order[i]]);
      ++left[cls];
      --right[cls];
      const double v = x(order[i], col), next = x(order[i + 1], col);
      if (v == next) continue;
      const std::int64_t nl = i + 1, nr = n - nl;
      if (nl < min_samples_leaf || nr < min_samples_leaf) continue;
      const double impurity = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
      if (impurity < best.weighted_impurity) {
        best.found = true;
        best.col = static_cast<std::int32_t>(col);
        best.threshold = v + (next - v) / 2.0;
        best.weighted_impurity = impurity;
      }
    }
  }
  return best;
}

}  // namespace

DecisionTreeModel fit_tree(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                           std::int32_t max_depth, std::int64_t min_samples_leaf,
                           std::vector<std::string> feature_names) {
  if (x.rows() == 0) throw DataError("fit_tree: EmptyInput");
  if (static_cast<std::int64_t>(y.size()) != x.rows())
    throw DataError("fit_tree: label count mismatch");
  DecisionTreeModel model;
  model.max_depth = max_depth;
  model.min_samples_leaf = min_samples_leaf;
  model.feature_names = std::move(feature_names);
  const std::int64_t n_total = x.rows();

  struct Job {
    std::int32_t node;
    std::vector<std::int64_t> rows;
    std::int32_t depth;
  };
  std::vector<std::int64_t> all(n_total);
  std::iota(all.begin(), all.end(), 0);
  model.nodes.emplace_back();
  std::vector<Job> stack{{0, std::move(all), 0}};

  while (!stack.empty()) {
    Job job = std::move(stack.back());
    stack.pop_back();
    TreeNode& node = model.nodes[job.node];
    const std::int64_t n = static_cast<std::int64_t>(job.rows.size());

    std::array<std::int64_t, kNumStages> counts{};
    for (std::int64_t r : job.rows) ++counts[static_cast<int>(y[r])];
    node.fraction = static_cast<double>(n) / n_total;
    std::int64_t best_count = -1;
    for (int k = 0; k < kNumStages; ++k) {
      node.class_ratio[k] = static_cast<double>(counts[k]) / n;
      if (counts[k] > best_count) {
        best_count = counts[k];
        node.majority = static_cast<Stage>(k);
      }
    }

    const double node_gini = gini(counts, n);
    if (job.depth >= max_depth || node_gini == 0.0 || n < 2 * min_samples_leaf) continue;

    // Zero-gain splits are kept: an axis split that does not reduce Gini can
    // still enable separating splits deeper down (XOR layouts).
    const BestSplit split = best_gini_split(x, y, job.rows, min_samples_leaf);
    if (!split.found || split.weighted_impurity > node_gini) continue;

    std::vector<std::int64_t> left_rows, right_rows;
    for (std::int64_t r : job.rows)
      (x(r, split.col) <= split.threshold ? left_rows : right_rows).push_back(r);

    const std::int32_t li = static_cast<std::int32_t>(model.nodes.size());
    model.nodes.emplace_back();
    model.nodes.emplace_back();
    TreeNode& nd = model.nodes[job.node];  // re-borrow: vector may have grown
    nd.split_col = split.col;
    nd.threshold = split.threshold;
    nd.left = li;
    nd.right = li + 1;
    nd.gain = nd.fraction * (node_gini - split.weighted_impurity);
    stack.push_back({li + 1, std::move(right_rows), job.depth + 1});
    stack.push_back({li, std::move(left_rows), job.depth + 1});
  }
  return model;
}

Eigen::MatrixXd predict_proba(const DecisionTreeModel& model, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd proba(x.rows(), kNumStages);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::int32_t node = 0;
    while (model.nodes[node].split_col >= 0) {
      const TreeNode& nd = model.nodes[node];
      if (nd.split_col >= x.cols()) throw DataError("predict_proba: ShapeMismatch");
      node = x(i, nd.split_col) <= nd.threshold ? nd.left : nd.right;
    }
    for (int k = 0; k < kNumStages; ++k) proba(i, k) = model.nodes[node].class_ratio[k];
  }
  return proba;
}

// --- regression trees for boosting ----------------------------------------

double RegressionTree::predict(const double* row) const {
  std::int32_t node = 0;
  while (nodes[node].split_col >= 0)
    node = row[nodes[node].split_col] <= nodes[node].threshold ? nodes[node].left
                                                               : nodes[node].right;
  return nodes[node].value;
}

namespace {

// Squared-error split on gradients with Newton leaf values.
RegressionTree fit_regression_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& grad,
                                   const Eigen::VectorXd& hess, std::int32_t max_depth) {
  RegressionTree tree;
  struct Job {
    std::int32_t node;
    std::vector<std::int64_t> rows;
    std::int32_t depth;
  };
  std::vector<std::int64_t> all(x.rows());
  std::iota(all.begin(), all.end(), 0);
  tree.nodes.emplace_back();
  std::vector<Job> stack{{0, std::move(all), 0}};

  while (!stack.empty()) {
    Job job = std::move(stack.back());
    stack.pop_back();
    const std::int64_t n = static_cast<std::int64_t>(job.rows.size());

    double g_sum = 0.0, h_sum = 0.0;
    for (std::int64_t r : job.rows) {
      g_sum += grad[r];
      h_sum += hess[r];
    }
    // Newton step with +1 damping in the denominator.
    tree.nodes[job.node].value = g_sum / (h_sum + 1.0);
    if (job.depth >= max_depth || n < 2) continue;

    // Minimize SSE of the gradient targets == maximize sum^2/n reduction.
    double best_score = -std::numeric_limits<double>::infinity();
    std::int32_t best_col = -1;
    double best_threshold = 0.0;
    std::vector<std::int64_t> order(job.rows);
    for (Eigen::Index col = 0; col < x.cols(); ++col) {
      std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (x(a, col) != x(b, col)) return x(a, col) < x(b, col);
        return a < b;
      });
      double left_sum = 0.0;
      for (std::int64_t i = 0; i + 1 < n; ++i) {
        left_sum += grad[order[i]];
        const double v = x(order[i], col), next = x(order[i + 1], col);
        if (v == next) continue;
        const std::int64_t nl = i + 1, nr = n - nl;
        const double right_sum = g_sum - left_sum;
        const double score =
            left_sum * left_sum / nl + right_sum * right_sum / nr - g_sum * g_sum / n;
        if (score > best_score + 1e-15) {
          best_score = score;
          best_col = static_cast<std::int32_t>(col);
          best_threshold = v + (next - v) / 2.0;
        }
      }
    }
    if (best_col < 0 || best_score <= 0.0) continue;

    std::vector<std::int64_t> left_rows, right_rows;
    for (std::int64_t r : job.rows)
      (x(r, best_col) <= best_threshold ? left_rows : right_rows).push_back(r);

    const std::int32_t li = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    RegressionTreeNode& nd = tree.nodes[job.node];
    nd.split_col = best_col;
    nd.threshold = best_threshold;
    nd.left = li;
    nd.right = li + 1;
    nd.gain = best_score;
    stack.push_back({li + 1, std::move(right_rows), job.depth + 1});
    stack.push_back({li, std::move(left_rows), job.depth + 1});
  }
  return tree;
}

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - mx).exp();
    scores.row(i) /= scores.row(i).sum();
  }
  return scores;
}

}  // namespace

BoostedEnsemble fit_boosted(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                            std::int32_t rounds, double learning_rate, std::int32_t tree_depth,
                            double dart_dropout, std::uint64_t seed,
                            std::vector<std::string> feature_names) {
  if (rounds < 1) throw ConfigError("fit_boosted: rounds must be >= 1");
  if (x.rows() == 0) throw DataError("fit_boosted: EmptyInput");
  const std::int64_t n = x.rows();

  BoostedEnsemble model;
  model.learning_rate = learning_rate;
  model.dart_dropout = dart_dropout;
  model.feature_names = std::move(feature_names);

  // Base score = log class priors (Laplace-smoothed).
  std::array<double, kNumStages> prior{};
  for (Stage s : y) prior[static_cast<int>(s)] += 1.0;
  for (int k = 0; k < kNumStages; ++k)
    model.base_score[k] = std::log((prior[k] + 1.0) / (n + kNumStages));

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, kNumStages);
  for (std::int64_t i = 0; i < n; ++i) onehot(i, static_cast<int>(y[i])) = 1.0;

  // Cached per-round raw predictions; recomputed from scratch only when
  // DART rescales history.
  std::vector<Eigen::MatrixXd> round_scores;  // lr * scale * tree output
  Rng rng(seed);

  auto total_scores = [&](const std::vector<bool>* dropped) {
    Eigen::MatrixXd scores(n, kNumStages);
    for (std::int64_t i = 0; i < n; ++i)
      for (int k = 0; k < kNumStages; ++k) scores(i, k) = model.base_score[k];
    for (size_t r = 0; r < round_scores.size(); ++r) {
      if (dropped && (*dropped)[r]) continue;
      scores += round_scores[r];
    }
    return scores;
  };

  for (std::int32_t round = 0; round < rounds; ++round) {
    std::vector<bool> dropped(round_scores.size(), false);
    std::int64_t n_dropped = 0;
    if (dart_dropout > 0.0) {
      for (size_t r = 0; r < dropped.size(); ++r) {
        if (rng.uniform() < dart_dropout) {
          dropped[r] = true;
          ++n_dropped;
        }
      }
    }
    const Eigen::MatrixXd p = softmax_rows(total_scores(n_dropped ? &dropped : nullptr));
    if (!p.allFinite()) throw NumericError("fit_boosted: NonFiniteGradient");

    model.trees.emplace_back();
    model.scale.push_back(1.0);
    Eigen::MatrixXd new_scores = Eigen::MatrixXd::Zero(n, kNumStages);
    for (int k = 0; k < kNumStages; ++k) {
      const Eigen::VectorXd grad = onehot.col(k) - p.col(k);  // negative CE gradient
      const Eigen::VectorXd hess = p.col(k).array() * (1.0 - p.col(k).array());
      RegressionTree tree = fit_regression_tree(x, grad, hess, tree_depth);
      for (std::int64_t i = 0; i < n; ++i) {
        Eigen::RowVectorXd row = x.row(i);
        new_scores(i, k) = tree.predict(row.data());
      }
      model.trees.back()[k] = std::move(tree);
    }

    if (n_dropped > 0) {
      // DART normalization: new tree joins at 1/(d+1), dropped trees
      // shrink by d/(d+1).
      const double d = static_cast<double>(n_dropped);
      model.scale.back() = 1.0 / (d + 1.0);
      for (size_t r = 0; r < dropped.size(); ++r) {
        if (!dropped[r]) continue;
        const double factor = d / (d + 1.0);
        model.scale[r] *= factor;
        round_scores[r] *= factor;
      }
    }
    round_scores.push_back(learning_rate * model.scale.back() * new_scores);
  }
  return model;
}

Eigen::MatrixXd predict_proba(const BoostedEnsemble& model, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd scores(x.rows(), kNumStages);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::RowVectorXd row = x.row(i);
    for (int k = 0; k < kNumStages; ++k) {
      double s = model.base_score[k];
      for (size_t r = 0; r < model.trees.size(); ++r)
        s += model.learning_rate * model.scale[r] * model.trees[r][k].predict(row.data());
      scores(i, k) = s;
    }
  }
  return softmax_rows(std::move(scores));
}

// --- logistic regression ----------------------------------------------------

namespace {

double logistic_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& onehot,
                          const Eigen::MatrixXd& w, const Eigen::VectorXd& b, double l2,
                          Eigen::MatrixXd* proba_out) {
  Eigen::MatrixXd scores = x * w;
  scores.rowwise() += b.transpose();
  Eigen::MatrixXd p = softmax_rows(std::move(scores));
  double ce = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int k = 0; k < kNumStages; ++k)
      if (onehot(i, k) > 0) ce -= std::log(std::max(p(i, k), 1e-300));
  ce /= x.rows();
  if (proba_out) *proba_out = std::move(p);
  return ce + 0.5 * l2 * w.squaredNorm();
}

}  // namespace

LogisticModel fit_logistic(const Eigen::MatrixXd& x, const std::vector<Stage>& y,
                           double l2_penalty, std::int32_t max_iters, double tol) {
  if (x.rows() == 0) throw DataError("fit_logistic: EmptyInput");
  const std::int64_t n = x.rows();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, kNumStages);
  for (std::int64_t i = 0; i < n; ++i) onehot(i, static_cast<int>(y[i])) = 1.0;

  LogisticModel model;
  model.l2_penalty = l2_penalty;
  model.w = Eigen::MatrixXd::Zero(x.cols(), kNumStages);
  model.b = Eigen::VectorXd::Zero(kNumStages);

  Eigen::MatrixXd proba;
  double obj = logistic_objective(x, onehot, model.w, model.b, l2_penalty, &proba);
  double step = 1.0;
  for (std::int32_t it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd resid = (proba - onehot) / static_cast<double>(n);
    const Eigen::MatrixXd gw = x.transpose() * resid + l2_penalty * model.w;
    const Eigen::VectorXd gb = resid.colwise().sum().transpose();
    const double gnorm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
    if (gnorm <= tol) {
      model.converged = true;
      break;
    }
    // Backtracking line search (Armijo).
    step *= 2.0;  // allow growth after successful steps
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Eigen::MatrixXd w_new = model.w - step * gw;
      const Eigen::VectorXd b_new = model.b - step * gb;
      Eigen::MatrixXd p_new;
      const double obj_new = logistic_objective(x, onehot, w_new, b_new, l2_penalty, &p_new);
      if (obj_new <= obj - 1e-4 * step * gnorm * gnorm) {
        model.w = w_new;
        model.b = b_new;
        obj = obj_new;
        proba = std::move(p_new);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflow: at numerical optimum
  }
  return model;  // converged=false signals MaxItersExceeded with best iterate
}

Eigen::MatrixXd predict_proba(const LogisticModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.w.rows()) throw DataError("predict_proba: ShapeMismatch");
  Eigen::MatrixXd scores = x * model.w;
  scores.rowwise() += model.b.transpose();
  return softmax_rows(std::move(scores));
}

std::vector<Stage> proba_argmax(const Eigen::MatrixXd& probabilities) {
  std::vector<Stage> out(probabilities.rows());
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    int best = 0;
    for (int k = 1; k < kNumStages; ++k)
      if (probabilities(i, k) > probabilities(i, best)) best = k;
    out[i] = static_cast<Stage>(best);
  }
  return out;
}

}  // namespace serf
