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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "serf/common.hpp"
#include "serf/psg_io.hpp"

using namespace serf;

namespace {

Recording make_recording(std::uint64_t seed, int seconds = 10) {
  Recording rec;
  rec.id = "unit-test";
  Rng rng(seed);
  for (const char* label : {"EEG1", "EMG1"}) {
    Channel ch;
    ch.label = label;
    ch.sampling_rate = 100.0;
    ch.samples.resize(static_cast<size_t>(seconds * 100));
    for (auto& v : ch.samples) v = rng.normal() * 40.0;
    rec.channels.push_back(std::move(ch));
  }
  return rec;
}

}  // namespace

TEST_CASE("EDF round-trip reproduces samples within one quantization step") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    const Recording original = make_recording(seed);
    const auto bytes = write_edf(original);
    const Recording parsed = parse_edf(bytes);
    REQUIRE(parsed.channels.size() == original.channels.size());
    for (size_t c = 0; c < original.channels.size(); ++c) {
      const auto& before = original.channels[c];
      const auto& after = parsed.channels[c];
      CHECK(after.label == before.label);
      CHECK(after.sampling_rate == before.sampling_rate);
      REQUIRE(after.samples.size() == before.samples.size());
      double max_abs = 0.0;
      for (double v : before.samples) max_abs = std::max(max_abs, std::abs(v));
      const double step = 2.0 * max_abs / 65535.0;
      for (size_t i = 0; i < before.samples.size(); ++i)
        CHECK(std::abs(after.samples[i] - before.samples[i]) <= step + 1e-12);
    }
  }
}

TEST_CASE("round-trip of a round-trip is exact (idempotent quantization)") {
  const Recording original = make_recording(9);
  const Recording once = parse_edf(write_edf(original));
  Recording prepared = once;
  // carry the declared physical range forward so re-encoding reuses it
  const Recording twice = parse_edf(write_edf(prepared));
  for (size_t c = 0; c < once.channels.size(); ++c)
    for (size_t i = 0; i < once.channels[c].samples.size(); ++i)
      CHECK(twice.channels[c].samples[i] ==
            doctest::Approx(once.channels[c].samples[i]).epsilon(1e-12));
}

TEST_CASE("truncated payload raises TruncatedRecord") {
  auto bytes = write_edf(make_recording(11));
  bytes.resize(bytes.size() - 100);
  CHECK_THROWS_AS(parse_edf(bytes), TruncatedRecord);
}

TEST_CASE("header shorter than 256 bytes raises MalformedHeader") {
  std::vector<std::uint8_t> bytes(100, ' ');
  CHECK_THROWS_AS(parse_edf(bytes), MalformedHeader);
}

TEST_CASE("non-numeric channel count raises MalformedHeader") {
  auto bytes = write_edf(make_recording(12));
  // ns field lives at offset 252..255
  bytes[252] = 'x';
  bytes[253] = 'y';
  CHECK_THROWS_AS(parse_edf(bytes), MalformedHeader);
}

TEST_CASE("degenerate calibration raises CalibrationDegenerate") {
  auto bytes = write_edf(make_recording(13));
  // physical min/max of signal 0: dig header block starts at 256; layout:
  // label 16, transducer 80, unit 8 -> phys_min at offset 256 + 2*104
  const size_t phys_min_off = 256 + 2 * 104;
  const size_t phys_max_off = phys_min_off + 2 * 8;
  for (int i = 0; i < 8; ++i) {
    bytes[phys_min_off + i] = i == 0 ? '1' : ' ';
    bytes[phys_max_off + i] = i == 0 ? '1' : ' ';
  }
  CHECK_THROWS_AS(parse_edf(bytes), CalibrationDegenerate);
}

TEST_CASE("write_edf rejects out-of-range declared physical bounds") {
  Recording rec = make_recording(14);
  rec.channels[0].phys_min = -1.0;
  rec.channels[0].phys_max = 1.0;  // samples are ~40 uV
  CHECK_THROWS_AS(write_edf(rec), RangeOverflow);
}

TEST_CASE("stage label parsing: AASM and R&K schemas") {
  const std::string aasm = "0,30,W\n30,30,N1\n60,30,N2\n90,30,N3\n120,30,R\n150,30,?\n";
  const auto a = read_stage_labels(aasm, LabelSchema::AASM);
  REQUIRE(a.size() == 6);
  CHECK(a[0].stage == Stage::Wake);
  CHECK(a[1].stage == Stage::N1);
  CHECK(a[2].stage == Stage::N2);
  CHECK(a[3].stage == Stage::N3);
  CHECK(a[4].stage == Stage::REM);
  CHECK(a[5].stage == Stage::Unscored);

  const std::string rk = "0,30,W\n30,30,1\n60,30,2\n90,30,3\n120,30,4\n150,30,R\n";
  const auto r = read_stage_labels(rk, LabelSchema::RK);
  CHECK(r[3].stage == Stage::N3);
  CHECK(r[4].stage == Stage::N3);  // S4 merges into N3
  CHECK(r[5].stage == Stage::REM);
}

TEST_CASE("unknown token: lenient maps to Unscored, strict throws") {
  const std::string text = "0,30,BOGUS\n";
  const auto lenient = read_stage_labels(text, LabelSchema::AASM, false);
  CHECK(lenient[0].stage == Stage::Unscored);
  CHECK_THROWS_AS(read_stage_labels(text, LabelSchema::AASM, true), UnknownToken);
}

TEST_CASE("overlapping annotations are rejected") {
  const std::string text = "0,30,W\n15,30,N1\n";
  CHECK_THROWS_AS(read_stage_labels(text, LabelSchema::AASM), OverlappingAnnotations);
}

TEST_CASE("stage labels round-trip through their text form") {
  std::vector<StageAnnotation> annotations = {
      {0.0, 30.0, Stage::Wake}, {30.0, 30.0, Stage::N2}, {60.0, 30.0, Stage::REM}};
  const auto parsed = read_stage_labels(write_stage_labels(annotations), LabelSchema::AASM);
  REQUIRE(parsed.size() == annotations.size());
  for (size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].onset_s == annotations[i].onset_s);
    CHECK(parsed[i].duration_s == annotations[i].duration_s);
    CHECK(parsed[i].stage == annotations[i].stage);
  }
}

TEST_CASE("segment_epochs cuts labeled epochs and drops the rest") {
  Recording rec = make_recording(21, /*seconds=*/150);  // five 30 s epochs
  std::vector<StageAnnotation> labels = {
      {0.0, 30.0, Stage::Wake},
      {30.0, 30.0, Stage::N2},
      // 60-90 s unscored on purpose
      {90.0, 30.0, Stage::N3},
      {120.0, 30.0, Stage::REM},
  };
  SegmentOptions options;
  std::int64_t dropped = 0;
  const EpochSet epochs = segment_epochs(rec, labels, options, &dropped);
  CHECK(epochs.n() == 4);
  CHECK(dropped == 1);
  CHECK(epochs.labels == std::vector<Stage>{Stage::Wake, Stage::N2, Stage::N3, Stage::REM});
  CHECK(epochs.c() == 2);
  CHECK(epochs.l() == 3000);
  // content of the second epoch matches the resampled source slice
  const Channel& src = rec.channels[0];
  for (int i = 0; i < 10; ++i)
    CHECK(epochs.epoch_channel(1, 0)[i] == doctest::Approx(src.samples[3000 + i]).epsilon(1e-9));
}

TEST_CASE("segment_epochs resamples to the target rate") {
  Recording rec;
  rec.id = "rate";
  Channel ch;
  ch.label = "EEG1";
  ch.sampling_rate = 200.0;
  ch.samples.assign(200 * 60, 1.0);
  rec.channels.push_back(ch);
  const std::vector<StageAnnotation> labels = {{0.0, 30.0, Stage::N2}, {30.0, 30.0, Stage::N2}};
  SegmentOptions options;
  const EpochSet epochs = segment_epochs(rec, labels, options);
  CHECK(epochs.rate == 100.0);
  CHECK(epochs.n() == 2);
  CHECK(epochs.l() == 3000);
}

TEST_CASE("all epochs filtered away raises EmptyAfterFiltering") {
  Recording rec = make_recording(22);
  const std::vector<StageAnnotation> labels = {{0.0, 10.0, Stage::Unscored}};
  SegmentOptions options;
  CHECK_THROWS_AS(segment_epochs(rec, labels, options), EmptyAfterFiltering);
}
