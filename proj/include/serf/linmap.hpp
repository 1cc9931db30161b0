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

#ifndef SERF_LINMAP_HPP_
#define SERF_LINMAP_HPP_

#include <Eigen/Dense>
#include <vector>

#include "serf/common.hpp"
#include "serf/featurex.hpp"

namespace serf {

struct Standardization {
  std::vector<double> mean;
  std::vector<double> std;  // constant training columns carry 1.0
};

// Ridge map T from standardized expert features to embedding space,
// solved as T = (F'F + lambda I)^-1 F'H via Cholesky.
struct LinearMap {
  Eigen::MatrixXd t;  // M x D
  double lambda = 1.0;
  Standardization standardization;
};

// Z-score columns with training statistics. When stats is null the
// statistics are fitted from the given rows.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& features, Standardization* stats_in_out,
                            bool fit);

LinearMap fit_map(const Eigen::MatrixXd& standardized_features, const Eigen::MatrixXd& embeddings,
                  double lambda);

// Representative matrix S = H T^T, one column per selected expert feature.
Eigen::MatrixXd represent(const LinearMap& map, const Eigen::MatrixXd& embeddings);

// FeatureMatrix values as an Eigen matrix.
Eigen::MatrixXd to_eigen(const FeatureMatrix& features);

}  // namespace serf

#endif  // SERF_LINMAP_HPP_
