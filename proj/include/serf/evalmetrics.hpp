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

#ifndef SERF_EVALMETRICS_HPP_
#define SERF_EVALMETRICS_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "serf/common.hpp"

namespace serf {

struct EvalReport {
  std::array<std::array<std::int64_t, kNumStages>, kNumStages> confusion{};  // [true][pred]
  double accuracy = 0.0;
  std::array<double, kNumStages> sensitivity{};  // recall against expert labels
  std::array<double, kNumStages> precision{};
  std::array<double, kNumStages> f1{};
  double macro_f1 = 0.0;
  double kappa = 0.0;
  double roc_auc_macro = 0.0;
  std::int64_t n_epochs = 0;

  std::string to_text() const;
  std::string to_csv_row(bool with_header) const;
};

std::array<std::array<std::int64_t, kNumStages>, kNumStages> confusion(
    const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred);

// kappa = (Acc - p_e) / (1 - p_e), p_e = sum_k |Y^k||Y'^k| / N^2.
double kappa(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred);

// Macro one-vs-rest AUC via the Mann-Whitney rank statistic with
// midrank ties. Stages absent from y_true are excluded.
double roc_auc_macro(const std::vector<Stage>& y_true, const std::vector<double>& probabilities);

EvalReport summarize(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred,
                     const std::vector<double>& probabilities = {});

}  // namespace serf

#endif  // SERF_EVALMETRICS_HPP_
