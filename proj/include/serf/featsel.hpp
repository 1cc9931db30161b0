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

#ifndef SERF_FEATSEL_HPP_
#define SERF_FEATSEL_HPP_

#include <cstdint>
#include <vector>

#include "serf/common.hpp"
#include "serf/featurex.hpp"

namespace serf {

struct SelectionMask {
  std::vector<std::int64_t> kept_indices;  // descending F, ties by ascending index
  std::vector<double> f_stats;             // per original column
  std::int64_t m_prime = 0;
  std::int64_t m = 0;
};

struct DegenerateGrouping : DataError {
  using DataError::DataError;
};

// One-way ANOVA F across the five stages. Zero within-group variance
// with nonzero between-group variance returns +inf (ranked first).
double anova_f(const std::vector<double>& column, const std::vector<Stage>& labels);

// Keep the top floor(0.9 * M') columns by F. Fit on training rows only.
SelectionMask select_top(const FeatureMatrix& features, const std::vector<Stage>& labels,
                         double keep_fraction = 0.9);

// Apply the mask: N x M' -> N x M, row order preserved.
FeatureMatrix apply_mask(const FeatureMatrix& features, const SelectionMask& mask);

}  // namespace serf

#endif  // SERF_FEATSEL_HPP_
