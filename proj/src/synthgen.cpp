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

#include "serf/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "serf/dsp.hpp"
#include "serf/parallel.hpp"

namespace serf {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

enum class ChannelKind { EEG, EOG, EMG };

ChannelKind kind_of(const std::string& label) {
  if (label.rfind("EMG", 0) == 0) return ChannelKind::EMG;
  if (label.rfind("EOG", 0) == 0) return ChannelKind::EOG;
  return ChannelKind::EEG;
}

struct Band {
  double lo, hi;
  double StageRecipe::*weight;
};

// Same band edges as the feature extractor uses.
constexpr Band kBands[] = {
    {0.5, 4.0, &StageRecipe::delta_uv},
    {4.0, 8.0, &StageRecipe::theta_uv},
    {8.0, 12.0, &StageRecipe::alpha_uv},
    {12.0, 35.0, &StageRecipe::beta_uv},
    {2.0, 4.0, &StageRecipe::delta_hi_uv},
};

double kernel_gain(const std::vector<double>& k) {
  double s = 0.0;
  for (double v : k) s += v * v;
  return std::sqrt(s);
}

// Add a raised-cosine windowed sinusoid burst in place. The burst is
// demeaned over its support so events leave the epoch mean untouched.
void add_burst(std::vector<double>& x, double rate, std::int64_t start, double duration_s,
               double freq_hz, double amplitude, double phase) {
  const std::int64_t len = static_cast<std::int64_t>(duration_s * rate);
  std::vector<double> burst;
  burst.reserve(len);
  double mean = 0.0;
  for (std::int64_t i = 0; i < len && start + i < static_cast<std::int64_t>(x.size()); ++i) {
    const double env = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (len - 1)));
    burst.push_back(amplitude * env * std::sin(2.0 * kPi * freq_hz * i / rate + phase));
    mean += burst.back();
  }
  if (burst.empty()) return;
  mean /= static_cast<double>(burst.size());
  for (size_t i = 0; i < burst.size(); ++i) x[start + i] += burst[i] - mean;
}

}  // namespace

RecipeSet default_recipes() {
  // The NREM stages deliberately share one background band profile so
  // that the event features carry the discriminative signal: N1 vs N2
  // differs only by spindles, N3 gains its delta dominance from the
  // slow waves themselves, and REM carries a matching background-delta
  // decoy so band power alone cannot stand in for slow-wave detection.
  RecipeSet r;
  // Wake: dominant alpha/beta and high muscle tone.
  r[0] = {.delta_uv = 3, .theta_uv = 5, .alpha_uv = 22, .beta_uv = 14, .emg_tone_uv = 30,
          .noise_sigma_uv = 4};
  // N1: theta takes over, tone drops; beta-frequency arousal bursts
  // match the spindle burst energy without entering the 11-16 Hz
  // detector band.
  r[1] = {.delta_uv = 6, .theta_uv = 22, .alpha_uv = 4, .beta_uv = 6, .spindle_rate = 7,
          .spindle_hz_lo = 18.0, .spindle_hz_hi = 25.0, .emg_tone_uv = 8, .noise_sigma_uv = 4};
  // N2: the N1 background plus true sigma-band spindles.
  r[2] = {.delta_uv = 6, .theta_uv = 22, .alpha_uv = 4, .beta_uv = 6, .spindle_rate = 7,
          .emg_tone_uv = 8, .noise_sigma_uv = 4};
  // N3: the same background plus dense slow-wave events; the residual
  // muscle tone disappears under the EMG noise floor, like REM's.
  r[3] = {.delta_uv = 10, .theta_uv = 22, .alpha_uv = 4, .beta_uv = 6, .slow_wave_rate = 18,
          .slow_wave_uv = 78, .emg_tone_uv = 0.5, .noise_sigma_uv = 4};
  // REM: near-zero muscle tone plus slow waves with the same shape,
  // band and rate as N3's but peaking below the 75 µV detector
  // threshold; upper-delta background noise makes up the event-energy
  // gap without adding detectable half-waves. Telling 90 µV from 55 µV
  // waves on a jittered background is genuinely ambiguous for a
  // waveform model, while the thresholding detector separates the
  // stages exactly.
  r[4] = {.delta_uv = 10, .delta_hi_uv = 14, .theta_uv = 22, .alpha_uv = 4, .beta_uv = 6,
          .slow_wave_rate = 24, .slow_wave_uv = 52, .emg_tone_uv = 0.5, .noise_sigma_uv = 4};
  return r;
}

std::pair<Recording, std::vector<StageAnnotation>> synth_recording(
    const std::vector<Stage>& stage_sequence, const RecipeSet& recipes,
    const std::vector<std::string>& channel_labels, double rate, std::uint64_t seed) {
  if (stage_sequence.empty()) throw ConfigError("synth_recording: empty stage sequence");
  if (rate < 100.0) throw ConfigError("synth_recording: rate must be >= 100 Hz");
  const double epoch_s = 30.0;
  const std::int64_t l = static_cast<std::int64_t>(epoch_s * rate);
  const std::int64_t n = static_cast<std::int64_t>(stage_sequence.size());
  const std::int64_t total = n * l;

  // Band kernels shared with the feature extractor.
  std::vector<std::vector<double>> band_kernels;
  for (const auto& b : kBands) {
    const double hi = std::min(b.hi, 0.45 * rate);
    band_kernels.push_back(dsp::fir_bandpass(b.lo, hi, rate, std::max(0.5, 0.25 * b.lo)));
  }

  Recording rec;
  rec.id = "synth";
  const Rng base(seed);

  rec.channels.resize(channel_labels.size());
  parallel_for(static_cast<std::int64_t>(channel_labels.size()), [&](std::int64_t ci) {
    Channel& ch = rec.channels[ci];
    ch.label = channel_labels[ci];
    ch.sampling_rate = rate;
    ch.physical_unit = "uV";
    const ChannelKind kind = kind_of(ch.label);
    Rng rng = base.derive(1000 + ci);

    // Per-epoch lognormal amplitude jitter on the background content;
    // event amplitudes get a milder jitter of their own further below, so
    // detector-based features stay sharper than their band-power and
    // amplitude-statistic shadows.
    auto jitter = [&base, ci](std::int64_t e, std::int64_t band) {
      Rng jrng = base.derive(ci * 4000037 + e * 7 + band + 13);
      return std::exp(0.15 * jrng.normal());
    };

    std::vector<double> x(total, 0.0);
    if (kind == ChannelKind::EMG) {
      for (std::int64_t e = 0; e < n; ++e) {
        const StageRecipe& rc = recipes[static_cast<int>(stage_sequence[e])];
        const double sigma =
            std::hypot(rc.emg_tone_uv * jitter(e, 9), rc.noise_sigma_uv);
        for (std::int64_t i = e * l; i < (e + 1) * l; ++i) x[i] = sigma * rng.normal();
      }
    } else {
      // Whole-recording white noise per band, filtered once, then scaled
      // per epoch by the recipe amplitude.
      for (size_t bi = 0; bi < band_kernels.size(); ++bi) {
        if (kind == ChannelKind::EOG && bi >= 2) continue;  // EOG carries low bands only
        std::vector<double> noise(total);
        for (auto& v : noise) v = rng.normal();
        noise = dsp::filter_same(noise, band_kernels[bi]);
        const double gain = kernel_gain(band_kernels[bi]);
        for (std::int64_t e = 0; e < n; ++e) {
          const StageRecipe& rc = recipes[static_cast<int>(stage_sequence[e])];
          const double amp = rc.*(kBands[bi].weight) * jitter(e, static_cast<std::int64_t>(bi)) / gain;
          for (std::int64_t i = e * l; i < (e + 1) * l; ++i) x[i] += amp * noise[i];
        }
      }
      // Event content per epoch.
      for (std::int64_t e = 0; e < n; ++e) {
        const StageRecipe& rc = recipes[static_cast<int>(stage_sequence[e])];
        Rng erng = base.derive(ci * 1000003 + e + 7);
        // Mild per-epoch event-amplitude jitter: keeps every wave on its
        // side of the detector threshold but spreads the within-stage
        // amplitude statistics.
        const double ejit = std::exp(0.05 * erng.normal());
        const std::int64_t n_spindles = static_cast<std::int64_t>(rc.spindle_rate);
        for (std::int64_t s = 0; s < n_spindles; ++s) {
          const double dur = erng.uniform(0.5, 2.0);
          const double freq = erng.uniform(rc.spindle_hz_lo, rc.spindle_hz_hi);
          const std::int64_t start =
              e * l + static_cast<std::int64_t>(erng.uniform() * (l - dur * rate));
          add_burst(x, rate, start, dur, freq, rc.spindle_uv * ejit, erng.uniform(0, 2 * kPi));
        }
        const std::int64_t n_sw = static_cast<std::int64_t>(rc.slow_wave_rate);
        for (std::int64_t s = 0; s < n_sw; ++s) {
          const double freq = erng.uniform(rc.slow_wave_hz_lo, rc.slow_wave_hz_hi);
          const double dur = rc.slow_wave_cycles / freq;  // full cycles only
          const std::int64_t start =
              e * l + static_cast<std::int64_t>(erng.uniform() * (l - dur * rate));
          // ±10% per-event amplitude spread blurs max-amplitude statistics
          // across stages while the detector threshold still separates the
          // two amplitude populations.
          add_burst(x, rate, start, dur, freq, rc.slow_wave_uv * ejit * erng.uniform(0.9, 1.1), 0.0);
        }
        for (std::int64_t i = e * l; i < (e + 1) * l; ++i) x[i] += rc.noise_sigma_uv * rng.normal();
      }
    }
    ch.samples = std::move(x);
  });

  std::vector<StageAnnotation> annotations;
  for (std::int64_t e = 0; e < n; ++e)
    annotations.push_back({e * epoch_s, epoch_s, stage_sequence[e]});
  return {std::move(rec), std::move(annotations)};
}

std::vector<Stage> sample_stage_sequence(const std::array<std::array<double, 5>, 5>& transition,
                                         std::int64_t length, std::uint64_t seed) {
  for (const auto& row : transition) {
    double sum = 0.0;
    for (double p : row) {
      if (p < 0) throw ConfigError("InvalidStochasticMatrix: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("InvalidStochasticMatrix: row sum != 1");
  }
  Rng rng(seed);
  std::vector<Stage> seq;
  seq.reserve(length);
  int state = 0;  // start in Wake
  for (std::int64_t i = 0; i < length; ++i) {
    seq.push_back(static_cast<Stage>(state));
    double u = rng.uniform();
    int next = 4;
    for (int j = 0; j < 5; ++j) {
      if (u < transition[state][j]) {
        next = j;
        break;
      }
      u -= transition[state][j];
    }
    state = next;
  }
  return seq;
}

std::pair<Recording, std::vector<StageAnnotation>> synth_subject(
    std::int64_t subject_index, std::int64_t epochs_per_subject,
    const std::array<std::array<double, 5>, 5>& stage_markov, std::uint64_t seed,
    const SynthDatasetOptions& options) {
  const Rng base(seed);
  const auto seq = sample_stage_sequence(stage_markov, epochs_per_subject,
                                         base.derive(11 + subject_index).next_u64());
  // Scorer noise: with probability label_noise an epoch keeps its nominal
  // annotation but is synthesized from a different stage's recipe, like a
  // human scorer disagreeing with the signal. The irreducible error keeps
  // any classifier honestly below perfect agreement.
  auto gen_seq = seq;
  if (options.label_noise > 0.0) {
    Rng nrng = base.derive(211 + subject_index);
    for (auto& st : gen_seq) {
      if (nrng.uniform() >= options.label_noise) continue;
      const int shift = 1 + static_cast<int>(nrng.below(kNumStages - 1));
      st = static_cast<Stage>((static_cast<int>(st) + shift) % kNumStages);
    }
  }
  auto rec = synth_recording(gen_seq, options.recipes, options.channel_labels, options.rate,
                             base.derive(101 + subject_index).next_u64());
  // Annotations follow the nominal sequence, not the generated one.
  for (size_t e = 0; e < rec.second.size(); ++e) rec.second[e].stage = seq[e];
  char id[32];
  std::snprintf(id, sizeof(id), "subject-%03lld", static_cast<long long>(subject_index));
  rec.first.id = id;
  return rec;
}

std::vector<std::pair<Recording, std::vector<StageAnnotation>>> synth_dataset(
    std::int64_t n_subjects, std::int64_t epochs_per_subject,
    const std::array<std::array<double, 5>, 5>& stage_markov, std::uint64_t seed,
    const SynthDatasetOptions& options) {
  std::vector<std::pair<Recording, std::vector<StageAnnotation>>> out;
  for (std::int64_t s = 0; s < n_subjects; ++s)
    out.push_back(synth_subject(s, epochs_per_subject, stage_markov, seed, options));
  return out;
}

std::array<std::array<double, 5>, 5> default_stage_markov() {
  // Rows: Wake, N1, N2, N3, REM. Sticky diagonal with plausible paths.
  return {{{0.80, 0.15, 0.02, 0.00, 0.03},
           {0.05, 0.60, 0.30, 0.00, 0.05},
           {0.02, 0.05, 0.75, 0.13, 0.05},
           {0.01, 0.00, 0.14, 0.80, 0.05},
           {0.04, 0.06, 0.10, 0.00, 0.80}}};
}

}  // namespace serf
