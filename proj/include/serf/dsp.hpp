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

#ifndef SERF_DSP_HPP_
#define SERF_DSP_HPP_

#include <complex>
#include <cstddef>
#include <vector>

namespace serf::dsp {

// Real-to-complex DFT, output length n/2 + 1. Backed by FFTW; plans are
// cached per length and execution is thread-safe.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Windowed-sinc (Hamming) FIR design. Odd tap count derived from the
// transition width; unit DC gain for the low-pass.
std::vector<double> fir_lowpass(double cutoff_hz, double rate, double transition_hz);
std::vector<double> fir_bandpass(double lo_hz, double hi_hz, double rate, double transition_hz);

// Linear-phase filtering with group-delay compensation: output has the
// same length as the input, edges zero-padded. Long kernels go through
// FFT convolution; the result is identical to the direct path up to
// round-off (the direct path is kept as the reference kernel).
std::vector<double> filter_same(const std::vector<double>& x, const std::vector<double>& kernel);
std::vector<double> filter_same_direct(const std::vector<double>& x,
                                       const std::vector<double>& kernel);

// Centered moving RMS with the given window length in samples.
std::vector<double> moving_rms(const std::vector<double>& x, int window);

// Windowed-sinc anti-alias low-pass followed by linear interpolation.
// Output length = round(len * to_rate / from_rate).
std::vector<double> resample(const std::vector<double>& x, double from_rate, double to_rate);

}  // namespace serf::dsp

#endif  // SERF_DSP_HPP_
