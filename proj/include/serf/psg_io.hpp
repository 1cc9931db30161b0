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

#ifndef SERF_PSG_IO_HPP_
#define SERF_PSG_IO_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "serf/common.hpp"

namespace serf {

struct Channel {
  std::string label;
  double sampling_rate = 0.0;  // Hz
  std::string physical_unit = "uV";
  std::vector<double> samples;
  // Declared physical range for EDF encoding; unset means derive from data.
  std::optional<double> phys_min;
  std::optional<double> phys_max;
};

struct Recording {
  std::string id;
  std::vector<Channel> channels;

  const Channel* find_channel(const std::string& label) const {
    for (const auto& c : channels)
      if (c.label == label) return &c;
    return nullptr;
  }
};

struct StageAnnotation {
  double onset_s = 0.0;
  double duration_s = 0.0;
  Stage stage = Stage::Unscored;
};

// N labeled epochs, each C x L samples, contiguous and time-ordered
// within each recording.
struct EpochSet {
  std::vector<double> data;  // N * C * L, epoch-major then channel
  std::vector<Stage> labels;
  std::vector<std::string> subject_ids;  // per epoch
  std::vector<std::string> channel_labels;
  double rate = 0.0;
  double epoch_seconds = 30.0;

  std::int64_t n() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t c() const { return static_cast<std::int64_t>(channel_labels.size()); }
  std::int64_t l() const { return static_cast<std::int64_t>(epoch_seconds * rate + 0.5); }

  const double* epoch_channel(std::int64_t epoch, std::int64_t channel) const {
    return data.data() + (epoch * c() + channel) * l();
  }
  double* epoch_channel(std::int64_t epoch, std::int64_t channel) {
    return data.data() + (epoch * c() + channel) * l();
  }

  // Concatenate another set (same layout) after this one.
  void append(const EpochSet& other);
};

// EDF parse/write errors.
struct MalformedHeader : DataError {
  using DataError::DataError;
};
struct TruncatedRecord : DataError {
  using DataError::DataError;
};
struct CalibrationDegenerate : DataError {
  using DataError::DataError;
};
struct RangeOverflow : DataError {
  using DataError::DataError;
};
struct UnknownToken : DataError {
  using DataError::DataError;
};
struct OverlappingAnnotations : DataError {
  using DataError::DataError;
};
struct RateMismatch : DataError {
  using DataError::DataError;
};
struct EmptyAfterFiltering : DataError {
  using DataError::DataError;
};

enum class LabelSchema { AASM, RK };

// EDF container: 256-byte fixed header, 256 bytes per channel header,
// fixed-width ASCII fields, 16-bit little-endian data records.
Recording parse_edf(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> write_edf(const Recording& recording);

Recording read_edf_file(const std::string& path);
void write_edf_file(const Recording& recording, const std::string& path);

// Label sidecar: UTF-8 lines "onset_s,duration_s,token". R&K stages S3
// and S4 both map to N3; unknown tokens map to Unscored (or throw when
// strict).
std::vector<StageAnnotation> read_stage_labels(const std::string& text, LabelSchema schema,
                                               bool strict = false);
std::string write_stage_labels(const std::vector<StageAnnotation>& annotations);

struct SegmentOptions {
  double epoch_seconds = 30.0;
  double target_rate = 100.0;
  // Analysis channels in order; empty = all channels of the recording.
  std::vector<std::string> channels;
};

// Resample every selected channel to target_rate, cut 30 s epochs,
// attach stage labels, drop Unscored / partial / non-finite epochs.
EpochSet segment_epochs(const Recording& recording, const std::vector<StageAnnotation>& labels,
                        const SegmentOptions& options, std::int64_t* dropped_count = nullptr);

}  // namespace serf

#endif  // SERF_PSG_IO_HPP_
