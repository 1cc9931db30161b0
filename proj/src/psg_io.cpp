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

#include "serf/psg_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "serf/dsp.hpp"
#include "serf/parallel.hpp"

namespace serf {

namespace {

// --- fixed-width ASCII header fields ---------------------------------

std::string fixed_field(const std::string& value, size_t width) {
  if (value.size() > width) return value.substr(0, width);
  return value + std::string(width - value.size(), ' ');
}

std::string fixed_number(double value, size_t width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", value);
  std::string s = buf;
  if (s.size() > width) {
    std::snprintf(buf, sizeof(buf), "%.*g", static_cast<int>(width) - 6, value);
    s = buf;
  }
  if (s.size() > width) throw MalformedHeader("numeric field does not fit: " + s);
  return fixed_field(s, width);
}

std::string read_field(const std::vector<std::uint8_t>& bytes, size_t offset, size_t width) {
  if (offset + width > bytes.size()) throw MalformedHeader("header shorter than 256 bytes");
  std::string s(reinterpret_cast<const char*>(bytes.data()) + offset, width);
  // trim trailing spaces
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  size_t start = s.find_first_not_of(' ');
  return start == std::string::npos ? "" : s.substr(start);
}

double parse_number(const std::string& s, const char* what) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw MalformedHeader(std::string("unparseable header field '") + what + "': '" + s + "'");
  }
}

long parse_int(const std::string& s, const char* what) {
  const double v = parse_number(s, what);
  if (v != std::floor(v)) throw MalformedHeader(std::string("non-integer field '") + what + "'");
  return static_cast<long>(v);
}

struct SignalHeader {
  std::string label, unit;
  double phys_min = 0, phys_max = 0;
  long dig_min = 0, dig_max = 0;
  long samples_per_record = 0;
};

}  // namespace

void EpochSet::append(const EpochSet& other) {
  if (labels.empty()) {
    *this = other;
    return;
  }
  if (other.channel_labels != channel_labels || other.rate != rate ||
      other.epoch_seconds != epoch_seconds)
    throw DataError("EpochSet::append: incompatible layouts");
  data.insert(data.end(), other.data.begin(), other.data.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  subject_ids.insert(subject_ids.end(), other.subject_ids.begin(), other.subject_ids.end());
}

Recording parse_edf(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 256) throw MalformedHeader("file shorter than the 256-byte header");

  const std::string version = read_field(bytes, 0, 8);
  if (version != "0") throw MalformedHeader("unsupported EDF version '" + version + "'");
  const std::string recording_id = read_field(bytes, 88, 80);
  const long header_bytes = parse_int(read_field(bytes, 184, 8), "header bytes");
  const long n_records = parse_int(read_field(bytes, 236, 8), "number of data records");
  const double record_seconds = parse_number(read_field(bytes, 244, 8), "record duration");
  const long ns = parse_int(read_field(bytes, 252, 4), "number of signals");
  if (ns <= 0) throw MalformedHeader("number of signals must be positive");
  if (n_records < 0) throw MalformedHeader("negative number of data records");
  if (record_seconds <= 0) throw MalformedHeader("record duration must be positive");
  if (header_bytes != 256 + 256 * ns) throw MalformedHeader("header byte count mismatch");
  if (bytes.size() < static_cast<size_t>(header_bytes))
    throw MalformedHeader("file shorter than declared header");

  // Signal header block: each field stored for all signals consecutively.
  std::vector<SignalHeader> sig(ns);
  size_t off = 256;
  for (long i = 0; i < ns; ++i) sig[i].label = read_field(bytes, off + i * 16, 16);
  off += ns * 16 + ns * 80;  // skip transducer
  for (long i = 0; i < ns; ++i) sig[i].unit = read_field(bytes, off + i * 8, 8);
  off += ns * 8;
  for (long i = 0; i < ns; ++i)
    sig[i].phys_min = parse_number(read_field(bytes, off + i * 8, 8), "physical min");
  off += ns * 8;
  for (long i = 0; i < ns; ++i)
    sig[i].phys_max = parse_number(read_field(bytes, off + i * 8, 8), "physical max");
  off += ns * 8;
  for (long i = 0; i < ns; ++i)
    sig[i].dig_min = parse_int(read_field(bytes, off + i * 8, 8), "digital min");
  off += ns * 8;
  for (long i = 0; i < ns; ++i)
    sig[i].dig_max = parse_int(read_field(bytes, off + i * 8, 8), "digital max");
  off += ns * 8 + ns * 80;  // skip prefiltering
  for (long i = 0; i < ns; ++i)
    sig[i].samples_per_record = parse_int(read_field(bytes, off + i * 8, 8), "samples per record");

  long record_samples = 0;
  for (const auto& s : sig) {
    if (s.samples_per_record <= 0) throw MalformedHeader("samples per record must be positive");
    if (s.dig_min == s.dig_max)
      throw CalibrationDegenerate("digital min equals digital max for '" + s.label + "'");
    if (s.phys_min == s.phys_max)
      throw CalibrationDegenerate("physical min equals physical max for '" + s.label + "'");
    record_samples += s.samples_per_record;
  }
  const size_t expected = static_cast<size_t>(header_bytes) +
                          static_cast<size_t>(n_records) * record_samples * 2;
  if (bytes.size() < expected)
    throw TruncatedRecord("data area holds fewer records than the header declares");

  Recording rec;
  rec.id = recording_id;
  rec.channels.resize(ns);
  for (long i = 0; i < ns; ++i) {
    auto& ch = rec.channels[i];
    ch.label = sig[i].label;
    ch.physical_unit = sig[i].unit;
    ch.sampling_rate = sig[i].samples_per_record / record_seconds;
    ch.phys_min = sig[i].phys_min;
    ch.phys_max = sig[i].phys_max;
    ch.samples.reserve(static_cast<size_t>(n_records) * sig[i].samples_per_record);
  }

  const std::uint8_t* p = bytes.data() + header_bytes;
  for (long r = 0; r < n_records; ++r) {
    for (long i = 0; i < ns; ++i) {
      auto& s = sig[i];
      const double gain = (s.phys_max - s.phys_min) / static_cast<double>(s.dig_max - s.dig_min);
      auto& out = rec.channels[i].samples;
      for (long k = 0; k < s.samples_per_record; ++k) {
        const std::int16_t d = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        p += 2;
        out.push_back((d - s.dig_min) * gain + s.phys_min);
      }
    }
  }
  return rec;
}

std::vector<std::uint8_t> write_edf(const Recording& recording) {
  const long ns = static_cast<long>(recording.channels.size());
  if (ns == 0) throw MalformedHeader("cannot write an EDF with no channels");

  // One-second data records; rates must be integral per record.
  const double record_seconds = 1.0;
  long n_records = 0;
  std::vector<SignalHeader> sig(ns);
  for (long i = 0; i < ns; ++i) {
    const auto& ch = recording.channels[i];
    if (ch.sampling_rate <= 0) throw MalformedHeader("channel rate must be positive");
    const double spr = ch.sampling_rate * record_seconds;
    if (spr != std::floor(spr)) throw MalformedHeader("non-integer samples per record");
    sig[i].samples_per_record = static_cast<long>(spr);
    sig[i].label = ch.label;
    sig[i].unit = ch.physical_unit;
    sig[i].dig_min = -32768;
    sig[i].dig_max = 32767;
    if (ch.phys_min && ch.phys_max) {
      sig[i].phys_min = *ch.phys_min;
      sig[i].phys_max = *ch.phys_max;
    } else {
      double a = 1.0;
      for (double v : ch.samples) a = std::max(a, std::abs(v));
      sig[i].phys_min = -a;
      sig[i].phys_max = a;
    }
    if (!(sig[i].phys_min < sig[i].phys_max))
      throw MalformedHeader("physical range must be non-degenerate");
    const long records = static_cast<long>(ch.samples.size()) / sig[i].samples_per_record;
    n_records = i == 0 ? records : std::min(n_records, records);
  }

  std::string header;
  header += fixed_field("0", 8);
  header += fixed_field("", 80);                  // patient id
  header += fixed_field(recording.id, 80);        // recording id
  header += fixed_field("01.01.00", 8);
  header += fixed_field("00.00.00", 8);
  header += fixed_number(256.0 + 256.0 * ns, 8);
  header += fixed_field("", 44);
  header += fixed_number(static_cast<double>(n_records), 8);
  header += fixed_number(record_seconds, 8);
  header += fixed_number(static_cast<double>(ns), 4);

  for (const auto& s : sig) header += fixed_field(s.label, 16);
  for (long i = 0; i < ns; ++i) header += fixed_field("", 80);
  for (const auto& s : sig) header += fixed_field(s.unit, 8);
  for (const auto& s : sig) header += fixed_number(s.phys_min, 8);
  for (const auto& s : sig) header += fixed_number(s.phys_max, 8);
  for (const auto& s : sig) header += fixed_number(static_cast<double>(s.dig_min), 8);
  for (const auto& s : sig) header += fixed_number(static_cast<double>(s.dig_max), 8);
  for (long i = 0; i < ns; ++i) header += fixed_field("", 80);
  for (const auto& s : sig) header += fixed_number(static_cast<double>(s.samples_per_record), 8);
  for (long i = 0; i < ns; ++i) header += fixed_field("", 32);

  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (long r = 0; r < n_records; ++r) {
    for (long i = 0; i < ns; ++i) {
      const auto& s = sig[i];
      const auto& samples = recording.channels[i].samples;
      const double inv_gain = (s.dig_max - s.dig_min) / (s.phys_max - s.phys_min);
      for (long k = 0; k < s.samples_per_record; ++k) {
        const double v = samples[r * s.samples_per_record + k];
        if (v < s.phys_min || v > s.phys_max)
          throw RangeOverflow("sample outside declared physical range on '" + s.label + "'");
        const long d = std::lround((v - s.phys_min) * inv_gain) + s.dig_min;
        const std::int16_t q =
            static_cast<std::int16_t>(std::clamp<long>(d, s.dig_min, s.dig_max));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
        out.push_back(static_cast<std::uint8_t>((q >> 8) & 0xff));
      }
    }
  }
  return out;
}

Recording read_edf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_edf(bytes);
}

void write_edf_file(const Recording& recording, const std::string& path) {
  const auto bytes = write_edf(recording);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

namespace {

Stage map_token(const std::string& token, LabelSchema schema, bool strict) {
  if (schema == LabelSchema::RK) {
    if (token == "W") return Stage::Wake;
    if (token == "1") return Stage::N1;
    if (token == "2") return Stage::N2;
    if (token == "3") return Stage::N3;
    if (token == "4") return Stage::N3;  // S3 and S4 are merged into N3
    if (token == "R") return Stage::REM;
  } else {
    if (token == "W" || token == "Wake") return Stage::Wake;
    if (token == "N1") return Stage::N1;
    if (token == "N2") return Stage::N2;
    if (token == "N3") return Stage::N3;
    if (token == "R" || token == "REM") return Stage::REM;
  }
  if (strict) throw UnknownToken("unknown stage token '" + token + "'");
  return Stage::Unscored;
}

}  // namespace

std::vector<StageAnnotation> read_stage_labels(const std::string& text, LabelSchema schema,
                                               bool strict) {
  std::vector<StageAnnotation> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw DataError("bad annotation line: '" + line + "'");
    StageAnnotation a;
    try {
      a.onset_s = std::stod(line.substr(0, c1));
      a.duration_s = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const std::exception&) {
      throw DataError("bad annotation numbers: '" + line + "'");
    }
    if (a.duration_s <= 0) throw DataError("non-positive annotation duration");
    a.stage = map_token(line.substr(c2 + 1), schema, strict);
    out.push_back(a);
  }
  std::sort(out.begin(), out.end(),
            [](const StageAnnotation& a, const StageAnnotation& b) { return a.onset_s < b.onset_s; });
  for (size_t i = 1; i < out.size(); ++i) {
    if (out[i].onset_s < out[i - 1].onset_s + out[i - 1].duration_s - 1e-9)
      throw OverlappingAnnotations("annotations overlap at onset " +
                                   std::to_string(out[i].onset_s));
  }
  return out;
}

std::string write_stage_labels(const std::vector<StageAnnotation>& annotations) {
  std::string out;
  char buf[96];
  for (const auto& a : annotations) {
    const char* tok = a.stage == Stage::Unscored ? "UNKNOWN" : stage_name(a.stage);
    if (a.stage == Stage::Wake) tok = "W";
    if (a.stage == Stage::REM) tok = "R";
    std::snprintf(buf, sizeof(buf), "%g,%g,%s\n", a.onset_s, a.duration_s, tok);
    out += buf;
  }
  return out;
}

EpochSet segment_epochs(const Recording& recording, const std::vector<StageAnnotation>& labels,
                        const SegmentOptions& options, std::int64_t* dropped_count) {
  std::vector<const Channel*> selected;
  if (options.channels.empty()) {
    for (const auto& c : recording.channels) selected.push_back(&c);
  } else {
    for (const auto& name : options.channels) {
      const Channel* c = recording.find_channel(name);
      if (!c) throw DataError("channel '" + name + "' not present in recording " + recording.id);
      selected.push_back(c);
    }
  }
  if (selected.empty()) throw DataError("no channels selected");

  EpochSet set;
  set.rate = options.target_rate;
  set.epoch_seconds = options.epoch_seconds;
  for (const auto* c : selected) set.channel_labels.push_back(c->label);

  const std::int64_t l = set.l();
  if (std::abs(l - options.epoch_seconds * options.target_rate) > 1e-9)
    throw RateMismatch("epoch_seconds * target_rate is not an integer sample count");

  // Resample each channel once; epochs are then contiguous slices.
  std::vector<std::vector<double>> resampled(selected.size());
  parallel_for(static_cast<std::int64_t>(selected.size()), [&](std::int64_t i) {
    resampled[i] =
        dsp::resample(selected[i]->samples, selected[i]->sampling_rate, options.target_rate);
  });
  std::int64_t usable = resampled[0].size();
  for (const auto& r : resampled) usable = std::min<std::int64_t>(usable, r.size());

  // Per-epoch stage timeline from the annotations.
  std::vector<Stage> timeline;
  for (const auto& a : labels) {
    const std::int64_t first = std::llround(a.onset_s / options.epoch_seconds);
    const std::int64_t count = std::llround(a.duration_s / options.epoch_seconds);
    if (static_cast<std::int64_t>(timeline.size()) < first + count)
      timeline.resize(first + count, Stage::Unscored);
    for (std::int64_t e = first; e < first + count; ++e) timeline[e] = a.stage;
  }

  const std::int64_t max_epochs =
      std::min<std::int64_t>(usable / l, static_cast<std::int64_t>(timeline.size()));
  std::int64_t dropped = 0;
  for (std::int64_t e = 0; e < max_epochs; ++e) {
    if (timeline[e] == Stage::Unscored) {
      ++dropped;
      continue;
    }
    bool finite = true;
    for (size_t ci = 0; ci < resampled.size() && finite; ++ci)
      for (std::int64_t t = e * l; t < (e + 1) * l; ++t)
        if (!std::isfinite(resampled[ci][t])) {
          finite = false;
          break;
        }
    if (!finite) {
      ++dropped;
      continue;
    }
    for (size_t ci = 0; ci < resampled.size(); ++ci)
      set.data.insert(set.data.end(), resampled[ci].begin() + e * l,
                      resampled[ci].begin() + (e + 1) * l);
    set.labels.push_back(timeline[e]);
    set.subject_ids.push_back(recording.id);
  }
  if (dropped_count) *dropped_count = dropped;
  if (set.labels.empty()) throw EmptyAfterFiltering("no scored epochs survive filtering");
  return set;
}

}  // namespace serf
