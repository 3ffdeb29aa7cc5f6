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

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "oskit/error.hpp"
#include "oskit/tensor_net.hpp"

namespace oskit::scorers {

/// Label reported for rejected samples (the K+1 category).
inline constexpr int kReject = -1;

struct Decision {
  int label = kReject;
  double score = 0.0;
};

/// The thresholded acceptance rule: REJECT when score < delta, otherwise \p head_label.
inline Decision decide(double score, double delta, int head_label) {
  return score < delta ? Decision{kReject, score} : Decision{head_label, score};
}

double logistic(double x);

/// max_k softmax(logits / T)_k.
double tempered_max_softmax(std::span<const double> logits, double temperature);

double tau_softmax_score(std::span<const double> logits);
double tau_sigmoid_score(std::span<const double> logits);

/// Index of the largest entry; ties go to the lower index.
int argmax(std::span<const double> values);

/// Largest delta with |{s >= delta}| / n >= tpr.
double calibrate_threshold(std::span<const double> in_scores, double tpr);

/// Per-class thresholds from the sigmoid scores of each class's own positives.
std::vector<double> doc_fit(const std::vector<std::vector<double>>& scores_by_class, double tpr,
                            std::size_t min_samples = 20);

/// Margin score max_k (sigmoid(logit_k) - delta_k); non-negative iff some class clears.
double doc_score(std::span<const double> logits, std::span<const double> thresholds);
/// Class with the largest margin sigmoid(logit_k) - delta_k.
int doc_head(std::span<const double> logits, std::span<const double> thresholds);
Decision doc_decide(std::span<const double> logits, std::span<const double> thresholds);

struct OdinParams {
  double temperature = 1000.0;
  double epsilon = 0.002;

  void validate() const;
  friend bool operator==(const OdinParams&, const OdinParams&) = default;
};

/// Temperature-scaled max softmax of the input nudged against the gradient sign.
double odin_score(const net::Network& net, std::span<const double> x, const OdinParams& params);

/// Candidate grids searched when tuning on Gaussian noise.
std::vector<OdinParams> odin_grid();

template <class Params>
struct TuneResult {
  Params best{};
  double best_auroc = 0.0;
  std::vector<std::pair<Params, double>> grid;
};

/// Evaluates \p auroc_of on every grid point and keeps the first maximiser.
template <class Params, class AurocOf>
TuneResult<Params> tune_on_noise(std::span<const Params> grid, AurocOf&& auroc_of) {
  if (grid.empty()) throw ConfigError("tuning grid is empty");
  TuneResult<Params> result;
  bool first = true;
  for (const auto& p : grid) {
    const double a = auroc_of(p);
    result.grid.emplace_back(p, a);
    if (first || a > result.best_auroc) {
      result.best = p;
      result.best_auroc = a;
      first = false;
    }
  }
  return result;
}

}  // namespace oskit::scorers
