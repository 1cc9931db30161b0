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

#include "serf/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <stdexcept>

namespace serf::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

// FFTW plan creation is not thread-safe; execution with new-array calls is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  // Forward r2c plan for length n. Buffers allocated by fftw_malloc have
  // the alignment the plan was created with.
  fftw_plan forward(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = fwd_.find(n);
    if (it != fwd_.end()) return it->second;
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    fwd_[n] = p;
    return p;
  }

  fftw_plan inverse(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = inv_.find(n);
    if (it != inv_.end()) return it->second;
    double* re = fftw_alloc_real(n);
    fftw_complex* co = fftw_alloc_complex(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_c2r_1d(n, co, re, FFTW_ESTIMATE);
    fftw_free(re);
    fftw_free(co);
    inv_[n] = p;
    return p;
  }

 private:
  std::mutex mu_;
  std::map<int, fftw_plan> fwd_, inv_;
};

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

double hamming(int i, int taps) { return 0.54 - 0.46 * std::cos(2.0 * kPi * i / (taps - 1)); }

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x); }

int taps_for_transition(double transition_hz, double rate) {
  // Hamming window: transition width ~ 3.3 / taps (normalized frequency).
  int taps = static_cast<int>(std::ceil(3.3 * rate / transition_hz));
  if (taps % 2 == 0) ++taps;
  return std::max(taps, 5);
}

std::vector<double> lowpass_kernel(double cutoff_hz, double rate, int taps) {
  std::vector<double> k(taps);
  const double fc = cutoff_hz / rate;  // cycles per sample
  const int mid = (taps - 1) / 2;
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    k[i] = 2.0 * fc * sinc(2.0 * fc * (i - mid)) * hamming(i, taps);
    sum += k[i];
  }
  for (double& v : k) v /= sum;  // unit DC gain
  return k;
}

}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  fftw_plan plan = PlanCache::instance().forward(n);
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  std::memcpy(in, x.data(), sizeof(double) * n);
  fftw_execute_dft_r2c(plan, in, out);
  std::vector<std::complex<double>> result(n / 2 + 1);
  for (int i = 0; i <= n / 2; ++i) result[i] = {out[i][0], out[i][1]};
  fftw_free(in);
  fftw_free(out);
  return result;
}

std::vector<double> fir_lowpass(double cutoff_hz, double rate, double transition_hz) {
  if (cutoff_hz <= 0 || cutoff_hz >= rate / 2)
    throw std::invalid_argument("fir_lowpass: cutoff outside (0, Nyquist)");
  return lowpass_kernel(cutoff_hz, rate, taps_for_transition(transition_hz, rate));
}

std::vector<double> fir_bandpass(double lo_hz, double hi_hz, double rate, double transition_hz) {
  if (!(0 < lo_hz && lo_hz < hi_hz && hi_hz <= rate / 2))
    throw std::invalid_argument("fir_bandpass: band outside (0, Nyquist)");
  const int taps = taps_for_transition(transition_hz, rate);
  std::vector<double> hi = lowpass_kernel(hi_hz, rate, taps);
  std::vector<double> lo = lowpass_kernel(lo_hz, rate, taps);
  for (int i = 0; i < taps; ++i) hi[i] -= lo[i];
  return hi;
}

std::vector<double> filter_same_direct(const std::vector<double>& x,
                                       const std::vector<double>& kernel) {
  const int n = static_cast<int>(x.size());
  const int k = static_cast<int>(kernel.size());
  const int mid = (k - 1) / 2;
  std::vector<double> y(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const int jlo = std::max(0, i + mid - n + 1);
    const int jhi = std::min(k - 1, i + mid);
    for (int j = jlo; j <= jhi; ++j) acc += kernel[j] * x[i + mid - j];
    y[i] = acc;
  }
  return y;
}

std::vector<double> filter_same(const std::vector<double>& x, const std::vector<double>& kernel) {
  const int n = static_cast<int>(x.size());
  const int k = static_cast<int>(kernel.size());
  if (n == 0) return {};
  // Direct path for short kernels; otherwise FFT convolution.
  if (static_cast<long long>(n) * k < 1 << 18) return filter_same_direct(x, kernel);

  const int full = n + k - 1;
  const int m = next_pow2(full);
  fftw_plan fwd = PlanCache::instance().forward(m);
  fftw_plan inv = PlanCache::instance().inverse(m);

  double* buf = fftw_alloc_real(m);
  fftw_complex* xf = fftw_alloc_complex(m / 2 + 1);
  fftw_complex* kf = fftw_alloc_complex(m / 2 + 1);

  std::memset(buf, 0, sizeof(double) * m);
  std::memcpy(buf, x.data(), sizeof(double) * n);
  fftw_execute_dft_r2c(fwd, buf, xf);
  std::memset(buf, 0, sizeof(double) * m);
  std::memcpy(buf, kernel.data(), sizeof(double) * k);
  fftw_execute_dft_r2c(fwd, buf, kf);

  for (int i = 0; i <= m / 2; ++i) {
    const double re = xf[i][0] * kf[i][0] - xf[i][1] * kf[i][1];
    const double im = xf[i][0] * kf[i][1] + xf[i][1] * kf[i][0];
    xf[i][0] = re / m;
    xf[i][1] = im / m;
  }
  fftw_execute_dft_c2r(inv, xf, buf);

  const int mid = (k - 1) / 2;
  std::vector<double> y(n);
  std::memcpy(y.data(), buf + mid, sizeof(double) * n);
  fftw_free(buf);
  fftw_free(xf);
  fftw_free(kf);
  return y;
}

std::vector<double> moving_rms(const std::vector<double>& x, int window) {
  const int n = static_cast<int>(x.size());
  if (window < 1) window = 1;
  std::vector<double> sq(n + 1, 0.0);
  for (int i = 0; i < n; ++i) sq[i + 1] = sq[i] + x[i] * x[i];
  std::vector<double> y(n);
  const int half = window / 2;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n, i - half + window);
    y[i] = std::sqrt((sq[hi] - sq[lo]) / (hi - lo));
  }
  return y;
}

std::vector<double> resample(const std::vector<double>& x, double from_rate, double to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw std::invalid_argument("resample: rates must be > 0");
  const int n = static_cast<int>(x.size());
  const long long out_n = std::llround(static_cast<double>(n) * to_rate / from_rate);
  if (from_rate == to_rate) return x;

  std::vector<double> src = x;
  if (to_rate < from_rate) {
    // Anti-alias at 90% of the target Nyquist.
    const double cutoff = 0.45 * to_rate;
    const double transition = 0.1 * to_rate;
    src = filter_same(x, fir_lowpass(cutoff, from_rate, transition));
  }
  std::vector<double> y(out_n);
  const double step = from_rate / to_rate;
  for (long long i = 0; i < out_n; ++i) {
    const double t = i * step;
    const int i0 = static_cast<int>(t);
    if (i0 >= n - 1) {
      y[i] = src[n - 1];
    } else {
      const double frac = t - i0;
      y[i] = src[i0] * (1.0 - frac) + src[i0 + 1] * frac;
    }
  }
  return y;
}

}  // namespace serf::dsp
