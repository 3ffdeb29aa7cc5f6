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

#include <span>
#include <vector>

#include "oskit/scorers.hpp"
#include "oskit/tensor.hpp"

namespace oskit::openmax {

struct WeibullModel {
  double shape = 1.0;
  double scale = 1.0;
  int tail_size = 0;
  int class_id = 0;

  double cdf(double x) const;
};

struct WeibullFit {
  double shape = 0.0;
  double scale = 0.0;
  int iterations = 0;
};

/// Two-parameter Weibull maximum-likelihood fit. Newton iteration on the shape profile
/// equation until |delta shape| < 1e-9 (at most 200 steps).
WeibullFit weibull_fit_mle(std::span<const double> samples);

/// Per-class mean of \p activations over rows whose logit argmax equals the label.
RowMatrix fit_mavs(const RowMatrix& activations, const RowMatrix& logits, std::span<const int> labels,
                   int num_classes, std::size_t min_correct = 1);

struct OpenMaxModel {
  RowMatrix mavs;  ///< K x D
  std::vector<WeibullModel> weibulls;
  int alpha = 1;

  int num_classes() const { return static_cast<int>(mavs.rows()); }
  /// K + 1 probabilities, the last entry being the rejection class.
  std::vector<double> recalibrate(std::span<const double> activation) const;
};

struct OpenMaxParams {
  int tail_size = 20;
  int alpha = 3;  ///< clamped to K at fit time
  friend bool operator==(const OpenMaxParams&, const OpenMaxParams&) = default;
};

std::vector<OpenMaxParams> openmax_grid();

/// Activations are the closed-set logits; distances are Euclidean to the class MAV.
OpenMaxModel fit_openmax(const RowMatrix& logits, std::span<const int> labels, const OpenMaxParams& params);

scorers::Decision openmax_decide(std::span<const double> probabilities, double delta);

/// Acceptance score consistent with openmax_decide for any delta > 0: the top known-class
/// probability, or minus the rejection probability when the rejection class wins.
double openmax_score(std::span<const double> probabilities);
/// Known class with the largest recalibrated probability.
int openmax_head(std::span<const double> probabilities);

}  // namespace oskit::openmax
