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

#ifndef SERF_FEATUREX_HPP_
#define SERF_FEATUREX_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "serf/psg_io.hpp"

namespace serf {

enum class FeatureKind { BandPower, Spindle, SlowWave, Amplitude, Moment };

struct FeatureDescriptor {
  std::string name;
  FeatureKind kind = FeatureKind::BandPower;
  std::vector<std::string> channels;  // one channel, or a contralateral pair
  std::optional<std::pair<double, double>> band;
  std::optional<std::string> statistic;  // mean|variance|skew|kurtosis|p2p|p95|rms
};

struct FeatureMatrix {
  std::vector<double> values;  // n x m, row-major
  std::vector<FeatureDescriptor> descriptors;
  std::int64_t n = 0;

  std::int64_t m() const { return static_cast<std::int64_t>(descriptors.size()); }
  double& at(std::int64_t row, std::int64_t col) { return values[row * m() + col]; }
  double at(std::int64_t row, std::int64_t col) const { return values[row * m() + col]; }
};

// Analysis channel roles; the single source of truth for the catalog.
struct ChannelMap {
  std::vector<std::string> eeg;
  std::vector<std::string> eog;
  std::vector<std::string> emg;
  std::vector<std::pair<std::string, std::string>> pairs;  // contralateral EEG pairs

  std::vector<std::string> all_channels() const;
};

// --- per-epoch-channel primitives -------------------------------------

// Relative band power from the multitaper PSD (NW=4, K=7 tapers).
// Analysis range is (0.5 Hz, min(total_hi, Nyquist)); 35 Hz for EEG,
// 50 Hz for EMG.
double multitaper_band_power(const double* x, std::int64_t len, double rate, double lo, double hi,
                             double total_hi = 35.0);

// Spindle occupancy: 11-16 Hz band-pass, 0.25 s moving-RMS envelope,
// events = runs above 3x median envelope lasting 0.5-3 s.
double detect_spindles(const double* x, std::int64_t len, double rate);

// Slow-wave occupancy: 0.5-2 Hz band-pass, half-waves whose peak-to-peak
// against the adjacent opposite half-wave exceeds 75 µV.
double detect_slow_waves(const double* x, std::int64_t len, double rate);

struct AmplitudeStats {
  double p2p = 0.0;
  double p95_abs = 0.0;
  double median_rms = 0.0;
};
AmplitudeStats amplitude_stats(const double* x, std::int64_t len, double rate);

struct Moments {
  double mean = 0.0, variance = 0.0, skew = 0.0, kurtosis = 0.0;
};
Moments moments(const double* x, std::int64_t len);

// --- catalog -----------------------------------------------------------

// Deterministic descriptor enumeration; M' is a pure function of the map.
std::vector<FeatureDescriptor> feature_catalog(const ChannelMap& map, double rate);

FeatureMatrix extract_features(const EpochSet& epochs, const ChannelMap& map);

// Serial reference path, kept for the kernel benchmark and threading tests.
FeatureMatrix extract_features_serial(const EpochSet& epochs, const ChannelMap& map);

void write_feature_csv(const FeatureMatrix& features, const std::string& path);
void write_descriptor_sidecar(const std::vector<FeatureDescriptor>& descriptors,
                              const std::string& path);

}  // namespace serf

#endif  // SERF_FEATUREX_HPP_
