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

#include "serf/multitaper.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "serf/common.hpp"
#include "serf/dsp.hpp"

namespace serf::mt {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

std::vector<std::vector<double>> compute_dpss(int n, double nw, int k) {
  if (n < 2 || k < 1 || nw <= 0) throw std::invalid_argument("dpss: bad parameters");
  // Slepian's tridiagonal formulation: tapers are eigenvectors of
  //   diag_i   = ((n-1-2i)/2)^2 cos(2 pi W),   W = nw / n
  //   offdiag_i = (i+1)(n-1-i)/2
  const double w = nw / n;
  std::vector<double> d(n), e(n - 1);
  const double c = std::cos(2.0 * kPi * w);
  for (int i = 0; i < n; ++i) {
    const double t = (n - 1 - 2.0 * i) / 2.0;
    d[i] = t * t * c;
  }
  for (int i = 0; i + 1 < n; ++i) e[i] = (i + 1.0) * (n - 1.0 - i) / 2.0;

  std::vector<double> evals(k);
  std::vector<double> evecs(static_cast<size_t>(n) * k);
  std::vector<lapack_int> isuppz(2 * k);
  lapack_int m = 0;
  const lapack_int info = LAPACKE_dstevr(LAPACK_COL_MAJOR, 'V', 'I', n, d.data(), e.data(), 0.0,
                                         0.0, n - k + 1, n, 0.0, &m, evals.data(), evecs.data(), n,
                                         isuppz.data());
  if (info != 0 || m != k) throw NumericError("dpss: tridiagonal eigensolve failed");

  // Returned in ascending eigenvalue order; flip to descending and fix
  // the sign convention (non-negative mean for symmetric tapers,
  // positive initial slope otherwise).
  std::vector<std::vector<double>> tapers(k, std::vector<double>(n));
  for (int j = 0; j < k; ++j) {
    const double* col = evecs.data() + static_cast<size_t>(k - 1 - j) * n;
    double norm2 = 0.0, sum = 0.0;
    for (int i = 0; i < n; ++i) {
      norm2 += col[i] * col[i];
      sum += col[i];
    }
    double sign = 1.0;
    if (std::abs(sum) > 1e-10) {
      sign = sum < 0 ? -1.0 : 1.0;
    } else {
      sign = col[1] - col[0] < 0 ? -1.0 : 1.0;
    }
    const double scale = sign / std::sqrt(norm2);
    for (int i = 0; i < n; ++i) tapers[j][i] = col[i] * scale;
  }
  return tapers;
}

}  // namespace

const std::vector<std::vector<double>>& dpss(int n, double nw, int k) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::vector<std::vector<double>>> cache;
  const auto key = std::make_tuple(n, static_cast<int>(nw * 1000), k);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, compute_dpss(n, nw, k)).first;
  return it->second;
}

std::vector<double> multitaper_psd(const std::vector<double>& x, double rate, double nw, int k) {
  const int n = static_cast<int>(x.size());
  const auto& tapers = dpss(n, nw, k);
  std::vector<double> psd(n / 2 + 1, 0.0);
  std::vector<double> tapered(n);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < n; ++i) tapered[i] = x[i] * tapers[j][i];
    const auto spec = dsp::rfft(tapered);
    for (size_t b = 0; b < psd.size(); ++b) psd[b] += std::norm(spec[b]);
  }
  const double scale = 1.0 / (k * rate);
  for (size_t b = 0; b < psd.size(); ++b) {
    psd[b] *= scale;
    if (b != 0 && !(n % 2 == 0 && b == psd.size() - 1)) psd[b] *= 2.0;  // one-sided
  }
  return psd;
}

double band_power_rel(const std::vector<double>& psd, double rate, int n_samples, double lo,
                      double hi, double total_hi) {
  const double nyq = rate / 2.0;
  const double df = rate / n_samples;
  const double total_lo = 0.5;
  const double t_hi = std::min(total_hi, nyq);
  const double b_lo = std::max(lo, total_lo);
  const double b_hi = std::min(hi, t_hi);
  if (b_lo >= nyq) throw DataError("band_power_rel: band outside (0, Nyquist)");

  double band = 0.0, total = 0.0;
  for (size_t b = 0; b < psd.size(); ++b) {
    const double f = b * df;
    if (f >= total_lo && f < t_hi) {
      total += psd[b];
      if (f >= b_lo && f < b_hi) band += psd[b];
    }
  }
  if (total <= 0.0) return 0.0;  // all-zero epoch fallback
  return band / total;
}

}  // namespace serf::mt
