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

#include "serf/linmap.hpp"

#include <cmath>

namespace serf {

Eigen::MatrixXd standardize(const Eigen::MatrixXd& features, Standardization* stats, bool fit) {
  const Eigen::Index n = features.rows(), m = features.cols();
  if (fit) {
    stats->mean.resize(m);
    stats->std.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double mean = features.col(j).mean();
      const double var = (features.col(j).array() - mean).square().sum() / n;
      stats->mean[j] = mean;
      const double sd = std::sqrt(var);
      stats->std[j] = sd > 0 ? sd : 1.0;  // constant columns pass through as zeros
    }
  }
  if (static_cast<Eigen::Index>(stats->mean.size()) != m)
    throw DataError("standardize: column count does not match fitted stats");
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    out.col(j) = (features.col(j).array() - stats->mean[j]) / stats->std[j];
  return out;
}

LinearMap fit_map(const Eigen::MatrixXd& f, const Eigen::MatrixXd& h, double lambda) {
  if (f.rows() != h.rows()) throw DataError("fit_map: row count mismatch");
  if (f.rows() < 1) throw DataError("fit_map: empty input");
  const Eigen::Index m = f.cols();
  Eigen::MatrixXd gram = f.transpose() * f;
  gram.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    if (lambda <= 0.0) throw NumericError("fit_map: SingularSystem (lambda = 0, rank-deficient)");
    throw NumericError("fit_map: Cholesky factorization failed");
  }
  LinearMap map;
  map.lambda = lambda;
  map.t = llt.solve(f.transpose() * h);  // M x D
  if (!map.t.allFinite()) throw NumericError("fit_map: non-finite map");
  return map;
}

Eigen::MatrixXd represent(const LinearMap& map, const Eigen::MatrixXd& embeddings) {
  if (embeddings.cols() != map.t.cols())
    throw DataError("represent: embedding dimension does not match the map");
  return embeddings * map.t.transpose();  // n x M
}

Eigen::MatrixXd to_eigen(const FeatureMatrix& features) {
  Eigen::MatrixXd out(features.n, features.m());
  for (std::int64_t i = 0; i < features.n; ++i)
    for (std::int64_t j = 0; j < features.m(); ++j) out(i, j) = features.at(i, j);
  return out;
}

}  // namespace serf
