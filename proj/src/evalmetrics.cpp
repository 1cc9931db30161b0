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

#include "serf/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace serf {

std::array<std::array<std::int64_t, kNumStages>, kNumStages> confusion(
    const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.empty())
    throw DataError("confusion: LengthMismatch");
  std::array<std::array<std::int64_t, kNumStages>, kNumStages> counts{};
  for (size_t i = 0; i < y_true.size(); ++i)
    ++counts[static_cast<int>(y_true[i])][static_cast<int>(y_pred[i])];
  return counts;
}

double kappa(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred) {
  const auto cm = confusion(y_true, y_pred);
  const double n = static_cast<double>(y_true.size());
  double acc = 0.0, pe = 0.0;
  for (int k = 0; k < kNumStages; ++k) {
    acc += cm[k][k];
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < kNumStages; ++j) {
      row += cm[k][j];
      col += cm[j][k];
    }
    pe += static_cast<double>(row) * col;
  }
  acc /= n;
  pe /= n * n;
  if (pe >= 1.0 - 1e-15) {
    if (acc >= 1.0 - 1e-15) return 1.0;
    throw NumericError("kappa: DegenerateAgreement (p_e = 1 with imperfect accuracy)");
  }
  return (acc - pe) / (1.0 - pe);
}

namespace {

// One-vs-rest AUC by the rank statistic; scores with ties get midranks.
double auc_binary(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::int64_t n_pos = 0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (i + 1 + j) / 2.0;  // average of ranks i+1 .. j
    for (size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nan("");
  return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (static_cast<double>(n_pos) * n_neg);
}

}  // namespace

double roc_auc_macro(const std::vector<Stage>& y_true, const std::vector<double>& probabilities) {
  const size_t n = y_true.size();
  if (probabilities.size() != n * kNumStages) throw DataError("roc_auc_macro: LengthMismatch");
  double sum = 0.0;
  int included = 0;
  std::vector<double> scores(n);
  std::vector<bool> positive(n);
  for (int k = 0; k < kNumStages; ++k) {
    std::int64_t pos = 0;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = probabilities[i * kNumStages + k];
      positive[i] = y_true[i] == static_cast<Stage>(k);
      if (positive[i]) ++pos;
    }
    if (pos == 0 || pos == static_cast<std::int64_t>(n)) continue;
    sum += auc_binary(scores, positive);
    ++included;
  }
  if (included == 0) throw DataError("roc_auc_macro: NoScorableClass");
  return sum / included;
}

EvalReport summarize(const std::vector<Stage>& y_true, const std::vector<Stage>& y_pred,
                     const std::vector<double>& probabilities) {
  EvalReport r;
  r.confusion = confusion(y_true, y_pred);
  r.n_epochs = static_cast<std::int64_t>(y_true.size());

  double diag = 0.0;
  double f1_sum = 0.0;
  int f1_count = 0;
  for (int k = 0; k < kNumStages; ++k) {
    std::int64_t tp = r.confusion[k][k], row = 0, col = 0;
    for (int j = 0; j < kNumStages; ++j) {
      row += r.confusion[k][j];  // expert labels of stage k
      col += r.confusion[j][k];  // predicted stage k
    }
    diag += tp;
    r.sensitivity[k] = row > 0 ? static_cast<double>(tp) / row : 0.0;
    r.precision[k] = col > 0 ? static_cast<double>(tp) / col : 0.0;
    const double ps = r.precision[k] + r.sensitivity[k];
    r.f1[k] = ps > 0 ? 2.0 * r.precision[k] * r.sensitivity[k] / ps : 0.0;
    if (row > 0) {  // macro average over stages present in expert labels
      f1_sum += r.f1[k];
      ++f1_count;
    }
  }
  r.accuracy = diag / r.n_epochs;
  r.macro_f1 = f1_count > 0 ? f1_sum / f1_count : 0.0;
  r.kappa = kappa(y_true, y_pred);
  if (!probabilities.empty()) r.roc_auc_macro = roc_auc_macro(y_true, probabilities);
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epochs: %lld\naccuracy: %.4f\nkappa: %.4f\nmacro_f1: %.4f\n",
                static_cast<long long>(n_epochs), accuracy, kappa, macro_f1);
  out << buf;
  std::snprintf(buf, sizeof(buf), "roc_auc_macro: %.4f\n", roc_auc_macro);
  out << buf;
  out << "stage  sensitivity  precision  f1\n";
  for (int k = 0; k < kNumStages; ++k) {
    std::snprintf(buf, sizeof(buf), "%-5s  %.4f       %.4f     %.4f\n",
                  stage_name(static_cast<Stage>(k)), sensitivity[k], precision[k], f1[k]);
    out << buf;
  }
  out << "confusion (rows = expert, cols = predicted):\n";
  for (int k = 0; k < kNumStages; ++k) {
    for (int j = 0; j < kNumStages; ++j) out << confusion[k][j] << (j + 1 < kNumStages ? " " : "\n");
  }
  return out.str();
}

std::string EvalReport::to_csv_row(bool with_header) const {
  std::ostringstream out;
  if (with_header) {
    out << "n,accuracy,kappa,macro_f1,roc_auc_macro";
    for (int k = 0; k < kNumStages; ++k) {
      const char* s = stage_name(static_cast<Stage>(k));
      out << ",sens_" << s << ",prec_" << s << ",f1_" << s;
    }
    out << "\n";
  }
  char buf[64];
  out << n_epochs;
  std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f", accuracy, kappa, macro_f1,
                roc_auc_macro);
  out << buf;
  for (int k = 0; k < kNumStages; ++k) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f", sensitivity[k], precision[k], f1[k]);
    out << buf;
  }
  out << "\n";
  return out.str();
}

}  // namespace serf
