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

#ifndef SERF_SYNTHGEN_HPP_
#define SERF_SYNTHGEN_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "serf/common.hpp"
#include "serf/psg_io.hpp"

namespace serf {

// Stage-dependent generative parameters for one 30 s block.
struct StageRecipe {
  double delta_uv = 0.0;  // band RMS amplitudes, µV
  // Upper-delta (2-4 Hz) background on top of the broadband delta band:
  // adds delta power without entering the 0.5-2 Hz slow-wave detector
  // band, so stages can match delta energy without matching occupancy.
  double delta_hi_uv = 0.0;
  double theta_uv = 0.0;
  double alpha_uv = 0.0;
  double beta_uv = 0.0;
  double spindle_rate = 0.0;    // events per 30 s
  double slow_wave_rate = 0.0;  // events per 30 s
  double spindle_uv = 30.0;     // spindle burst amplitude
  double slow_wave_uv = 90.0;   // slow-wave amplitude (p2p ~ this value)
  // Burst frequency ranges. Shifting them outside the detector pass
  // bands turns the events into decoys that match band power and
  // amplitude statistics without triggering the detectors.
  double spindle_hz_lo = 12.5, spindle_hz_hi = 15.0;
  double slow_wave_hz_lo = 0.6, slow_wave_hz_hi = 1.8;
  double slow_wave_cycles = 1.0;  // cycles per event; >1 narrows the spectrum
  double emg_tone_uv = 0.0;     // EMG channel RMS
  double noise_sigma_uv = 0.0;  // broadband noise on every channel
};

using RecipeSet = std::array<StageRecipe, kNumStages>;

// Recipes mirroring the discriminative stage signatures: alpha/beta +
// muscle tone in Wake, theta in N1, spindles in N2, slow waves in N3,
// theta with atonia in REM.
RecipeSet default_recipes();

// One recording with a 30 s block per stage in the sequence. Channel
// kind is inferred from the label prefix (EMG / EOG / anything else =
// EEG). Deterministic in the seed.
std::pair<Recording, std::vector<StageAnnotation>> synth_recording(
    const std::vector<Stage>& stage_sequence, const RecipeSet& recipes,
    const std::vector<std::string>& channel_labels, double rate, std::uint64_t seed);

// Stage sequence sampled from a Markov chain starting in Wake.
std::vector<Stage> sample_stage_sequence(const std::array<std::array<double, 5>, 5>& transition,
                                         std::int64_t length, std::uint64_t seed);

struct SynthDatasetOptions {
  std::vector<std::string> channel_labels = {"EEG1", "EEG2", "EMG1"};
  double rate = 100.0;
  RecipeSet recipes = default_recipes();
  // Fraction of epochs whose signal is synthesized from a different
  // stage's recipe than the annotation claims, emulating inter-scorer
  // disagreement on real recordings.
  double label_noise = 0.07;
};

// One dataset subject at a time, for streaming ingestion of large runs;
// subject k of synth_dataset(n, ...) equals synth_subject(k, ...) with the
// same seed.
std::pair<Recording, std::vector<StageAnnotation>> synth_subject(
    std::int64_t subject_index, std::int64_t epochs_per_subject,
    const std::array<std::array<double, 5>, 5>& stage_markov, std::uint64_t seed,
    const SynthDatasetOptions& options = {});

// Per-subject recordings with independent derived seeds.
std::vector<std::pair<Recording, std::vector<StageAnnotation>>> synth_dataset(
    std::int64_t n_subjects, std::int64_t epochs_per_subject,
    const std::array<std::array<double, 5>, 5>& stage_markov, std::uint64_t seed,
    const SynthDatasetOptions& options = {});

// Default transition matrix with sticky stages and plausible paths.
std::array<std::array<double, 5>, 5> default_stage_markov();

}  // namespace serf

#endif  // SERF_SYNTHGEN_HPP_
