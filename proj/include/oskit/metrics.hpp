// Copyright 2026 The oskit Authors
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


#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oskit/datasets.hpp"

namespace oskit::metrics {

/// Mann-Whitney AUROC, ties counted one half.
double auroc(std::span<const double> in_scores, std::span<const double> out_scores);

/// Mid-ranks (1-based, ties share the mean rank) of \p values.
std::vector<double> midranks(std::span<const double> values);

struct CurvePoint {
  double fpr = 0.0;
  double y = 0.0;  ///< TPR for ROC curves, CCR for OSC curves
};

struct RocCurve {
  std::vector<CurvePoint> points;  ///< from (0, 0) to (1, 1)
  double auroc = 0.0;
};

RocCurve roc_curve(std::span<const double> in_scores, std::span<const double> out_scores);

struct OscCurve {
  std::vector<CurvePoint> points;
  double auosc = 0.0;
  double normalized_auosc = 0.0;
  double closed_set_accuracy = 0.0;
};

/// FPR(t) = |out >= t| / n_out, CCR(t) = |in >= t and correct| / n_in over all distinct
/// scores plus the two infinite thresholds; trapezoid area.
OscCurve osc_curve(std::span<const double> in_scores, std::span<const int> predicted, std::span<const int> truth,
                   std::span<const double> out_scores);

/// Structural components of one detector's AUROC.
struct DelongComponents {
  double auroc = 0.0;
  std::vector<double> v10;  ///< one per in-sample
  std::vector<double> v01;  ///< one per outlier
};

DelongComponents delong_components(std::span<const double> in_scores, std::span<const double> out_scores);

struct DelongResult {
  double auroc_a = 0.0;
  double auroc_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double cov_ab = 0.0;
  double z = 0.0;
  double p = 1.0;
};

/// Paired DeLong test of two detectors scored on the same samples.
DelongResult delong_test(std::span<const double> in_a, std::span<const double> out_a, std::span<const double> in_b,
                         std::span<const double> out_b);

/// Holm-Bonferroni adjusted p-values (same order as the input, capped at 1).
std::vector<double> holm_adjust(std::span<const double> p_values);

/// Fixed three-decimal rendering used by every report table.
std::string format3(double value);

struct RunResult {
  double auroc = 0.0;
  double auosc = 0.0;
  double normalized_auosc = 0.0;
  double closed_set_accuracy = 0.0;
  std::vector<double> in_scores;
  std::vector<double> out_scores;
};

RunResult evaluate_run(std::span<const double> in_scores, std::span<const int> predicted, std::span<const int> truth,
                       std::span<const double> out_scores);

/// One (regime, detector, tier) grid cell. No runs marks a missing cell.
struct Cell {
  std::string regime;
  std::string detector;
  data::Tier tier = data::Tier::kNoise;
  std::vector<RunResult> runs;
};

struct CellSummary {
  std::string regime;
  std::string detector;
  data::Tier tier = data::Tier::kNoise;
  bool missing = false;
  std::size_t runs = 0;
  double auroc = 0.0;
  double auosc = 0.0;
  double normalized_auosc = 0.0;
  double closed_set_accuracy = 0.0;
  bool top = false;
  /// Median over runs of the Holm-adjusted DeLong p against the column's top cell.
  double p_vs_top = 1.0;
  bool indistinguishable = false;
};

struct PairwiseP {
  data::Tier tier = data::Tier::kNoise;
  std::string a;  ///< "regime/detector"
  std::string b;
  double median_p = 1.0;
};

struct SummaryMean {
  std::string name;
  double auroc = 0.0;
  double auosc = 0.0;
  double normalized_auosc = 0.0;
  std::size_t cells = 0;
};

struct EvalReport {
  double alpha = 0.01;
  std::string header;  ///< free-form provenance line written above the tables
  std::vector<CellSummary> cells;
  std::vector<PairwiseP> pairwise;
  std::vector<SummaryMean> per_detector;
  std::vector<SummaryMean> per_regime;
};

/// Column = tier. Top cell by mean AUROC; DeLong vs top per run, Holm within the column.
EvalReport aggregate_report(const std::vector<Cell>& cells, double alpha = 0.01);

std::string render_text(const EvalReport& report);
std::string render_csv(const EvalReport& report);
std::string render_runs_csv(const std::vector<Cell>& cells);
std::string render_pairwise_csv(const EvalReport& report);

}  // namespace oskit::metrics
