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

#ifndef SERF_MULTITAPER_HPP_
#define SERF_MULTITAPER_HPP_

#include <vector>

namespace serf::mt {

// Discrete prolate spheroidal sequences: the k leading eigenvectors of
// the symmetric tridiagonal Slepian matrix, unit-normalized, ordered by
// decreasing eigenvalue. Cached per (n, nw, k).
const std::vector<std::vector<double>>& dpss(int n, double nw, int k);

// Multitaper PSD: periodograms of tapered copies averaged over tapers.
// Bin spacing = rate / n, bins 0 .. n/2.
std::vector<double> multitaper_psd(const std::vector<double>& x, double rate, double nw = 4.0,
                                   int k = 7);

// Relative power of [lo, hi) within the analysis range [0.5, total_hi),
// both clipped to Nyquist. All-zero input returns 0.
double band_power_rel(const std::vector<double>& psd, double rate, int n_samples, double lo,
                      double hi, double total_hi);

}  // namespace serf::mt

#endif  // SERF_MULTITAPER_HPP_
