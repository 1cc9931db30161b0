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

#ifndef SERF_INTERPRET_HPP_
#define SERF_INTERPRET_HPP_

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "serf/evalmetrics.hpp"
#include "serf/simpleclf.hpp"

namespace serf {

struct MissingStats : DataError {
  using DataError::DataError;
};
struct NotTreeBased : DataError {
  using DataError::DataError;
};

struct ImportanceEntry {
  std::string name;
  std::array<double, kNumStages> per_stage{};
  double overall = 0.0;
};

struct ImportanceReport {
  std::string method;  // "permutation" | "split_gain"
  std::vector<ImportanceEntry> entries;  // descending overall, then name
};

// Annotated decision-tree diagram in DOT syntax. Internal nodes carry
// exactly five label rows (feature, threshold, data percentage, class
// ratios, majority stage); leaves omit the first two. Fill color is
// keyed to the majority stage at an intensity equal to the node purity.
std::string export_tree_dot(const DecisionTreeModel& tree);

enum class ImportanceMetric { Kappa, MacroF1 };

// Overall importance = baseline metric minus the mean metric after
// shuffling the column (seeded); per-stage entries use per-stage F1.
ImportanceReport permutation_importance(
    const std::function<std::vector<Stage>(const Eigen::MatrixXd&)>& predict_fn,
    const Eigen::MatrixXd& x, const std::vector<Stage>& y,
    const std::vector<std::string>& feature_names, ImportanceMetric metric, int repeats,
    std::uint64_t seed);

// Total impurity (or squared-error) reduction per feature, normalized
// to sum to 1 across features.
ImportanceReport split_gain_importance(const DecisionTreeModel& tree);
ImportanceReport split_gain_importance(const BoostedEnsemble& ensemble);

std::string importance_to_text(const ImportanceReport& report);
void write_importance_csv(const ImportanceReport& report, const std::string& path);

}  // namespace serf

#endif  // SERF_INTERPRET_HPP_
