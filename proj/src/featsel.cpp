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

#include "serf/featsel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "serf/parallel.hpp"

namespace serf {

double anova_f(const std::vector<double>& column, const std::vector<Stage>& labels) {
  if (column.size() != labels.size()) throw DataError("anova_f: length mismatch");
  const std::int64_t n = static_cast<std::int64_t>(column.size());

  double group_sum[kNumStages] = {};
  std::int64_t group_n[kNumStages] = {};
  for (std::int64_t i = 0; i < n; ++i) {
    const int g = static_cast<int>(labels[i]);
    group_sum[g] += column[i];
    ++group_n[g];
  }
  int groups = 0;
  double grand = 0.0;
  for (int g = 0; g < kNumStages; ++g) {
    if (group_n[g] > 0) ++groups;
    grand += group_sum[g];
  }
  if (groups < 2) throw DegenerateGrouping("anova_f: fewer than 2 non-empty groups");
  if (n <= groups) throw DegenerateGrouping("anova_f: N must exceed the group count");
  grand /= n;

  double ssb = 0.0, ssw = 0.0;
  for (int g = 0; g < kNumStages; ++g) {
    if (group_n[g] == 0) continue;
    const double mean_g = group_sum[g] / group_n[g];
    ssb += group_n[g] * (mean_g - grand) * (mean_g - grand);
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const int g = static_cast<int>(labels[i]);
    const double d = column[i] - group_sum[g] / group_n[g];
    ssw += d * d;
  }

  if (ssw <= 0.0) {
    if (ssb > 0.0) return std::numeric_limits<double>::infinity();
    return 0.0;
  }
  return (ssb / (groups - 1)) / (ssw / (n - groups));
}

SelectionMask select_top(const FeatureMatrix& features, const std::vector<Stage>& labels,
                         double keep_fraction) {
  if (static_cast<std::int64_t>(labels.size()) != features.n)
    throw DataError("select_top: label count does not match rows");
  SelectionMask mask;
  mask.m_prime = features.m();
  mask.f_stats.resize(mask.m_prime);

  std::vector<double> column(features.n);
  for (std::int64_t j = 0; j < mask.m_prime; ++j) {
    for (std::int64_t i = 0; i < features.n; ++i) column[i] = features.at(i, j);
    try {
      mask.f_stats[j] = anova_f(column, labels);
    } catch (const DegenerateGrouping&) {
      mask.f_stats[j] = 0.0;
    }
  }

  std::vector<std::int64_t> order(mask.m_prime);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (mask.f_stats[a] != mask.f_stats[b]) return mask.f_stats[a] > mask.f_stats[b];
    return a < b;
  });
  mask.m = static_cast<std::int64_t>(std::floor(keep_fraction * mask.m_prime));
  mask.kept_indices.assign(order.begin(), order.begin() + mask.m);
  return mask;
}

FeatureMatrix apply_mask(const FeatureMatrix& features, const SelectionMask& mask) {
  if (features.m() != mask.m_prime) throw DataError("apply_mask: column count mismatch");
  FeatureMatrix out;
  out.n = features.n;
  for (std::int64_t j : mask.kept_indices) out.descriptors.push_back(features.descriptors[j]);
  out.values.resize(out.n * mask.m);
  for (std::int64_t i = 0; i < out.n; ++i)
    for (std::int64_t jj = 0; jj < mask.m; ++jj)
      out.values[i * mask.m + jj] = features.at(i, mask.kept_indices[jj]);
  return out;
}

}  // namespace serf
