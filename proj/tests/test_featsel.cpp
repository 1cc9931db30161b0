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
#include <limits>
#include <map>
#include <vector>

#include "serf/common.hpp"
#include "serf/featsel.hpp"

using namespace serf;

namespace {

// Textbook one-way ANOVA oracle: F = (SSB/(G-1)) / (SSW/(N-G)).
double anova_oracle(const std::vector<double>& column, const std::vector<Stage>& labels) {
  std::map<Stage, std::vector<double>> groups;
  for (size_t i = 0; i < column.size(); ++i) groups[labels[i]].push_back(column[i]);
  const double n = static_cast<double>(column.size());
  const double g = static_cast<double>(groups.size());
  double grand = 0.0;
  for (double v : column) grand += v;
  grand /= n;
  double ssb = 0.0, ssw = 0.0;
  for (const auto& [stage, values] : groups) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    ssb += values.size() * (mean - grand) * (mean - grand);
    for (double v : values) ssw += (v - mean) * (v - mean);
  }
  const double num = ssb / (g - 1.0);
  const double den = ssw / (n - g);
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

FeatureMatrix random_features(std::int64_t n, std::int64_t m, std::uint64_t seed) {
  FeatureMatrix features;
  features.n = n;
  features.descriptors.resize(m);
  for (std::int64_t j = 0; j < m; ++j) features.descriptors[j].name = "f" + std::to_string(j);
  features.values.resize(n * m);
  Rng rng(seed);
  for (auto& v : features.values) v = rng.normal();
  return features;
}

}  // namespace

TEST_CASE("hand-computed two-group example: F = 54") {
  const std::vector<double> column = {1, 2, 3, 7, 8, 9};
  const std::vector<Stage> labels = {Stage::Wake, Stage::Wake, Stage::Wake,
                                     Stage::N1,   Stage::N1,   Stage::N1};
  // SSB = 3(2-5)^2 + 3(8-5)^2 = 54, df1 = 1; SSW = 4, df2 = 4 -> F = 54.
  CHECK(anova_f(column, labels) == doctest::Approx(54.0).epsilon(1e-12));
}

TEST_CASE("zero within-group variance with separated means gives +inf") {
  const std::vector<double> column = {1, 1, 2, 2};
  const std::vector<Stage> labels = {Stage::Wake, Stage::Wake, Stage::N2, Stage::N2};
  CHECK(std::isinf(anova_f(column, labels)));
  CHECK(anova_f(column, labels) > 0);
}

TEST_CASE("fully constant column gives F = 0") {
  const std::vector<double> column = {3, 3, 3, 3};
  const std::vector<Stage> labels = {Stage::Wake, Stage::Wake, Stage::N2, Stage::N2};
  CHECK(anova_f(column, labels) == 0.0);
}

TEST_CASE("ANOVA F matches the textbook oracle on 1000 random columns") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 10 + static_cast<int>(rng.below(40));
    std::vector<double> column(n);
    std::vector<Stage> labels(n);
    // ensure at least two groups
    labels[0] = Stage::Wake;
    labels[1] = Stage::N2;
    for (int i = 2; i < n; ++i) labels[i] = static_cast<Stage>(rng.below(5));
    for (int i = 0; i < n; ++i)
      column[i] = rng.normal() + 0.7 * static_cast<double>(labels[i]);
    const double expected = anova_oracle(column, labels);
    const double actual = anova_f(column, labels);
    if (std::isinf(expected))
      CHECK(std::isinf(actual));
    else
      CHECK(actual == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("single group raises DegenerateGrouping") {
  const std::vector<double> column = {1, 2, 3};
  const std::vector<Stage> labels(3, Stage::N2);
  CHECK_THROWS_AS(anova_f(column, labels), DegenerateGrouping);
}

TEST_CASE("published selection pairs: 87 -> 78 and 38 -> 34") {
  std::vector<Stage> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(static_cast<Stage>(i % 5));
  for (std::int64_t m_prime : {std::int64_t{87}, std::int64_t{38}}) {
    FeatureMatrix features = random_features(40, m_prime, 7 + m_prime);
    const SelectionMask mask = select_top(features, labels);
    CHECK(mask.m_prime == m_prime);
    CHECK(mask.m == static_cast<std::int64_t>(0.9 * m_prime));
    CHECK(mask.m == (m_prime == 87 ? 78 : 34));
    CHECK(mask.kept_indices.size() == static_cast<size_t>(mask.m));
  }
}

TEST_CASE("selection keeps the highest-F columns, ties by lower index") {
  std::vector<Stage> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i < 10 ? Stage::Wake : Stage::N3);
  FeatureMatrix features = random_features(20, 10, 3);
  // column 4 perfectly separates the groups -> +inf F, must rank first
  for (int i = 0; i < 20; ++i) features.at(i, 4) = i < 10 ? 0.0 : 1.0;
  const SelectionMask mask = select_top(features, labels);
  REQUIRE(!mask.kept_indices.empty());
  CHECK(mask.kept_indices[0] == 4);
  // ranking is by descending F
  for (size_t i = 1; i + 1 < mask.kept_indices.size(); ++i)
    CHECK(mask.f_stats[mask.kept_indices[i]] >= mask.f_stats[mask.kept_indices[i + 1]]);
}

TEST_CASE("degenerate columns rank last instead of failing selection") {
  std::vector<Stage> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i < 10 ? Stage::Wake : Stage::N3);
  FeatureMatrix features = random_features(20, 5, 13);
  for (int i = 0; i < 20; ++i) features.at(i, 2) = 1.0;  // constant -> F = 0
  const SelectionMask mask = select_top(features, labels);
  CHECK(mask.f_stats[2] == 0.0);
}

TEST_CASE("apply_mask projects columns and preserves rows") {
  std::vector<Stage> labels;
  for (int i = 0; i < 15; ++i) labels.push_back(static_cast<Stage>(i % 5));
  FeatureMatrix features = random_features(15, 10, 21);
  const SelectionMask mask = select_top(features, labels);
  const FeatureMatrix reduced = apply_mask(features, mask);
  CHECK(reduced.n == features.n);
  CHECK(reduced.m() == mask.m);
  for (std::int64_t i = 0; i < reduced.n; ++i)
    for (std::int64_t j = 0; j < reduced.m(); ++j)
      CHECK(reduced.at(i, j) == features.at(i, mask.kept_indices[j]));
  for (std::int64_t j = 0; j < reduced.m(); ++j)
    CHECK(reduced.descriptors[j].name == features.descriptors[mask.kept_indices[j]].name);
}
