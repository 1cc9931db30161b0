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

#include "serf/featurex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "serf/multitaper.hpp"
#include "serf/dsp.hpp"
#include "serf/parallel.hpp"

namespace serf {

namespace {

struct NamedBand {
  const char* name;
  double lo, hi;
};

constexpr NamedBand kEegBands[] = {
    {"delta", 0.5, 4.0}, {"theta", 4.0, 8.0}, {"alpha", 8.0, 12.0}, {"beta", 12.0, 35.0}};
constexpr NamedBand kEogBands[] = {{"delta", 0.5, 4.0}, {"theta", 4.0, 8.0}};
constexpr NamedBand kEmgBand = {"high", 12.0, 50.0};

const char* kMomentNames[] = {"mean", "variance", "skew", "kurtosis"};
const char* kAmplitudeNames[] = {"p2p", "p95", "rms"};

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * (v.size() - 1);
  const size_t i = static_cast<size_t>(h);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (h - i) * (v[i + 1] - v[i]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

}  // namespace

std::vector<std::string> ChannelMap::all_channels() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& c) {
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  };
  for (const auto& c : eeg) add(c);
  for (const auto& c : eog) add(c);
  for (const auto& c : emg) add(c);
  for (const auto& [a, b] : pairs) {
    add(a);
    add(b);
  }
  return out;
}

double multitaper_band_power(const double* x, std::int64_t len, double rate, double lo, double hi,
                             double total_hi) {
  if (lo <= 0 || lo >= rate / 2) throw DataError("BandOutOfRange: lo outside (0, Nyquist)");
  std::vector<double> v(x, x + len);
  const auto psd = mt::multitaper_psd(v, rate);
  return mt::band_power_rel(psd, rate, static_cast<int>(len), lo, hi, total_hi);
}

double detect_spindles(const double* x, std::int64_t len, double rate) {
  std::vector<double> v(x, x + len);
  const double hi = std::min(16.0, 0.45 * rate);
  const auto filtered = dsp::filter_same(v, dsp::fir_bandpass(11.0, hi, rate, 4.0));
  const auto envelope = dsp::moving_rms(filtered, static_cast<int>(0.25 * rate));
  const double threshold = 3.0 * median(envelope);
  if (threshold <= 0.0) return 0.0;

  const std::int64_t min_len = static_cast<std::int64_t>(0.5 * rate);
  const std::int64_t max_len = static_cast<std::int64_t>(3.0 * rate);
  std::int64_t inside = 0, run = 0;
  auto flush = [&](std::int64_t r) {
    if (r >= min_len && r <= max_len) inside += r;
  };
  for (std::int64_t i = 0; i < len; ++i) {
    if (envelope[i] > threshold) {
      ++run;
    } else {
      flush(run);
      run = 0;
    }
  }
  flush(run);
  return static_cast<double>(inside) / len;
}

double detect_slow_waves(const double* x, std::int64_t len, double rate) {
  std::vector<double> v(x, x + len);
  const auto filtered = dsp::filter_same(v, dsp::fir_bandpass(0.5, 2.0, rate, 0.5));

  // Half-waves between sign changes; extremum per half-wave.
  std::vector<std::pair<std::int64_t, std::int64_t>> spans;  // [begin, end)
  std::vector<double> extrema;
  std::int64_t begin = 0;
  double ext = 0.0;
  int sign = 0;
  for (std::int64_t i = 0; i < len; ++i) {
    const int s = filtered[i] > 0 ? 1 : (filtered[i] < 0 ? -1 : 0);
    if (sign == 0) sign = s;
    if (s != 0 && s != sign) {
      spans.push_back({begin, i});
      extrema.push_back(ext);
      begin = i;
      ext = 0.0;
      sign = s;
    }
    if (std::abs(filtered[i]) > std::abs(ext)) ext = filtered[i];
  }
  spans.push_back({begin, len});
  extrema.push_back(ext);

  std::int64_t inside = 0;
  for (size_t i = 0; i < spans.size(); ++i) {
    double neighbor = 0.0;
    if (i > 0) neighbor = std::max(neighbor, std::abs(extrema[i - 1]));
    if (i + 1 < spans.size()) neighbor = std::max(neighbor, std::abs(extrema[i + 1]));
    const double p2p = std::abs(extrema[i]) + neighbor;
    if (p2p > 75.0) inside += spans[i].second - spans[i].first;
  }
  return static_cast<double>(inside) / len;
}

AmplitudeStats amplitude_stats(const double* x, std::int64_t len, double rate) {
  if (len == 0) throw DataError("amplitude_stats: empty input");
  AmplitudeStats out;
  double lo = x[0], hi = x[0];
  std::vector<double> absv(len);
  for (std::int64_t i = 0; i < len; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
    absv[i] = std::abs(x[i]);
  }
  out.p2p = hi - lo;
  out.p95_abs = quantile(std::move(absv), 0.95);
  std::vector<double> v(x, x + len);
  out.median_rms = median(dsp::moving_rms(v, std::max(1, static_cast<int>(0.5 * rate))));
  return out;
}

Moments moments(const double* x, std::int64_t len) {
  Moments out;
  if (len == 0) return out;
  double mean = 0.0;
  for (std::int64_t i = 0; i < len; ++i) mean += x[i];
  mean /= len;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (std::int64_t i = 0; i < len; ++i) {
    const double d = x[i] - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= len;
  m3 /= len;
  m4 /= len;
  out.mean = mean;
  out.variance = m2;
  if (m2 > 1e-24) {
    out.skew = m3 / std::pow(m2, 1.5);
    out.kurtosis = m4 / (m2 * m2) - 3.0;  // excess
  }
  return out;
}

std::vector<FeatureDescriptor> feature_catalog(const ChannelMap& map, double rate) {
  std::vector<FeatureDescriptor> out;
  auto push = [&](FeatureKind kind, std::string name, std::vector<std::string> channels,
                  std::optional<std::pair<double, double>> band = std::nullopt,
                  std::optional<std::string> stat = std::nullopt) {
    out.push_back({std::move(name), kind, std::move(channels), band, std::move(stat)});
  };
  const auto bracket = [](const std::string& c) { return "[" + c + "]"; };

  for (const auto& c : map.eeg) {
    for (const auto& b : kEegBands)
      push(FeatureKind::BandPower, std::string("bandpower_") + b.name + bracket(c), {c},
           std::make_pair(b.lo, std::min(b.hi, rate / 2)));
    for (const char* s : kMomentNames)
      push(FeatureKind::Moment, std::string(s) + bracket(c), {c}, std::nullopt, s);
    for (const char* s : kAmplitudeNames)
      push(FeatureKind::Amplitude, std::string(s) + bracket(c), {c}, std::nullopt, s);
  }
  for (const auto& c : map.eog) {
    for (const auto& b : kEogBands)
      push(FeatureKind::BandPower, std::string("bandpower_") + b.name + bracket(c), {c},
           std::make_pair(b.lo, std::min(b.hi, rate / 2)));
    for (const char* s : kMomentNames)
      push(FeatureKind::Moment, std::string(s) + bracket(c), {c}, std::nullopt, s);
    for (const char* s : kAmplitudeNames)
      push(FeatureKind::Amplitude, std::string(s) + bracket(c), {c}, std::nullopt, s);
  }
  for (const auto& c : map.emg) {
    push(FeatureKind::BandPower, std::string("bandpower_") + kEmgBand.name + bracket(c), {c},
         std::make_pair(kEmgBand.lo, std::min(kEmgBand.hi, rate / 2)));
    for (const char* s : kAmplitudeNames)
      push(FeatureKind::Amplitude, std::string(s) + bracket(c), {c}, std::nullopt, s);
    for (const char* s : kMomentNames)
      push(FeatureKind::Moment, std::string(s) + bracket(c), {c}, std::nullopt, s);
  }
  for (const auto& [a, b] : map.pairs) {
    const std::string pair_name = "[" + a + "&" + b + "]";
    push(FeatureKind::Spindle, "spindle" + pair_name, {a, b});
    push(FeatureKind::SlowWave, "slowwave" + pair_name, {a, b});
  }
  return out;
}

namespace {

std::int64_t channel_index(const EpochSet& epochs, const std::string& label) {
  for (std::int64_t i = 0; i < epochs.c(); ++i)
    if (epochs.channel_labels[i] == label) return i;
  throw DataError("UnknownChannel: '" + label + "' not in epoch set");
}

// Fill one row of the feature matrix. Per-channel intermediates (PSD,
// moments, amplitude stats) are computed once and shared across columns.
void epoch_row(const EpochSet& epochs, std::int64_t e,
               const std::vector<FeatureDescriptor>& catalog,
               const std::vector<std::int64_t>& chan_of, const std::vector<double>& total_hi_of,
               double* row) {
  const std::int64_t l = epochs.l();
  const double rate = epochs.rate;

  std::map<std::int64_t, std::vector<double>> psd_cache;
  std::map<std::int64_t, Moments> moment_cache;
  std::map<std::int64_t, AmplitudeStats> amp_cache;

  for (size_t j = 0; j < catalog.size(); ++j) {
    const auto& d = catalog[j];
    switch (d.kind) {
      case FeatureKind::BandPower: {
        const std::int64_t c = chan_of[j];
        auto it = psd_cache.find(c);
        if (it == psd_cache.end()) {
          std::vector<double> v(epochs.epoch_channel(e, c), epochs.epoch_channel(e, c) + l);
          it = psd_cache.emplace(c, mt::multitaper_psd(v, rate)).first;
        }
        row[j] = mt::band_power_rel(it->second, rate, static_cast<int>(l), d.band->first,
                                    d.band->second, total_hi_of[j]);
        break;
      }
      case FeatureKind::Moment: {
        const std::int64_t c = chan_of[j];
        auto it = moment_cache.find(c);
        if (it == moment_cache.end())
          it = moment_cache.emplace(c, moments(epochs.epoch_channel(e, c), l)).first;
        const Moments& m = it->second;
        const std::string& s = *d.statistic;
        row[j] = s == "mean" ? m.mean : s == "variance" ? m.variance : s == "skew" ? m.skew
                                                                                   : m.kurtosis;
        break;
      }
      case FeatureKind::Amplitude: {
        const std::int64_t c = chan_of[j];
        auto it = amp_cache.find(c);
        if (it == amp_cache.end())
          it = amp_cache.emplace(c, amplitude_stats(epochs.epoch_channel(e, c), l, rate)).first;
        const AmplitudeStats& a = it->second;
        const std::string& s = *d.statistic;
        row[j] = s == "p2p" ? a.p2p : s == "p95" ? a.p95_abs : a.median_rms;
        break;
      }
      case FeatureKind::Spindle:
      case FeatureKind::SlowWave: {
        // Mean over the contralateral pair.
        double acc = 0.0;
        for (const auto& name : d.channels) {
          const std::int64_t c = channel_index(epochs, name);
          acc += d.kind == FeatureKind::Spindle
                     ? detect_spindles(epochs.epoch_channel(e, c), l, rate)
                     : detect_slow_waves(epochs.epoch_channel(e, c), l, rate);
        }
        row[j] = acc / d.channels.size();
        break;
      }
    }
  }
}

template <typename Loop>
FeatureMatrix extract_impl(const EpochSet& epochs, const ChannelMap& map, Loop&& loop) {
  FeatureMatrix fm;
  fm.descriptors = feature_catalog(map, epochs.rate);
  fm.n = epochs.n();
  fm.values.assign(fm.n * fm.m(), 0.0);

  // Resolve channels and analysis ranges up front.
  std::vector<std::int64_t> chan_of(fm.descriptors.size(), -1);
  std::vector<double> total_hi_of(fm.descriptors.size(), 35.0);
  for (size_t j = 0; j < fm.descriptors.size(); ++j) {
    const auto& d = fm.descriptors[j];
    if (d.kind == FeatureKind::Spindle || d.kind == FeatureKind::SlowWave) {
      for (const auto& c : d.channels) channel_index(epochs, c);
    } else {
      chan_of[j] = channel_index(epochs, d.channels[0]);
      const bool is_emg =
          std::find(map.emg.begin(), map.emg.end(), d.channels[0]) != map.emg.end();
      total_hi_of[j] = is_emg ? 50.0 : 35.0;
    }
  }

  const std::int64_t m = fm.m();
  loop(fm.n, [&](std::int64_t e) {
    epoch_row(epochs, e, fm.descriptors, chan_of, total_hi_of, fm.values.data() + e * m);
  });
  return fm;
}

}  // namespace

FeatureMatrix extract_features(const EpochSet& epochs, const ChannelMap& map) {
  return extract_impl(epochs, map,
                      [](std::int64_t n, auto&& body) { parallel_for(n, body); });
}

FeatureMatrix extract_features_serial(const EpochSet& epochs, const ChannelMap& map) {
  return extract_impl(epochs, map, [](std::int64_t n, auto&& body) { serial_for(n, body); });
}

void write_feature_csv(const FeatureMatrix& features, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::int64_t j = 0; j < features.m(); ++j)
    out << (j ? "," : "") << features.descriptors[j].name;
  out << "\n";
  char buf[40];
  for (std::int64_t i = 0; i < features.n; ++i) {
    for (std::int64_t j = 0; j < features.m(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", features.at(i, j));
      out << (j ? "," : "") << buf;
    }
    out << "\n";
  }
}

void write_descriptor_sidecar(const std::vector<FeatureDescriptor>& descriptors,
                              const std::string& path) {
  static const char* kKindNames[] = {"bandpower", "spindle", "slowwave", "amplitude", "moment"};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& d : descriptors) {
    out << d.name << "\t" << kKindNames[static_cast<int>(d.kind)] << "\t";
    for (size_t i = 0; i < d.channels.size(); ++i) out << (i ? "&" : "") << d.channels[i];
    out << "\t";
    if (d.band) out << d.band->first << "-" << d.band->second << "Hz";
    out << "\t";
    if (d.statistic) out << *d.statistic;
    out << "\n";
  }
}

}  // namespace serf
