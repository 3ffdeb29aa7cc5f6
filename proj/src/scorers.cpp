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


#include "oskit/scorers.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace oskit::scorers {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double tempered_max_softmax(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw ShapeError("empty logit vector");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp((l - m) / temperature);
  return 1.0 / s;
}

double tau_softmax_score(std::span<const double> logits) {
  if (logits.size() < 2) throw ShapeError("tau-softmax needs at least two classes");
  return tempered_max_softmax(logits, 1.0);
}

double tau_sigmoid_score(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("empty logit vector");
  return logistic(*std::max_element(logits.begin(), logits.end()));
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw ShapeError("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

double calibrate_threshold(std::span<const double> in_scores, double tpr) {
  if (in_scores.empty()) throw DataError("cannot calibrate a threshold on no scores");
  if (!(tpr > 0.0 && tpr <= 1.0)) throw ConfigError("tpr target must lie in (0, 1]");
  std::vector<double> sorted(in_scores.begin(), in_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  // Smallest m with m / n >= tpr.
  std::size_t m = static_cast<std::size_t>(std::floor(tpr * static_cast<double>(n)));
  while (m < n && static_cast<double>(m) / static_cast<double>(n) < tpr) ++m;
  while (m > 1 && static_cast<double>(m - 1) / static_cast<double>(n) >= tpr) --m;
  m = std::max<std::size_t>(m, 1);
  return sorted[m - 1];
}

std::vector<double> doc_fit(const std::vector<std::vector<double>>& scores_by_class, double tpr,
                            std::size_t min_samples) {
  std::vector<double> thresholds;
  thresholds.reserve(scores_by_class.size());
  for (std::size_t k = 0; k < scores_by_class.size(); ++k) {
    if (scores_by_class[k].size() < min_samples) {
      throw DataError(fmt::format("class {} has {} positive samples, DOC needs {}", k, scores_by_class[k].size(),
                                  min_samples));
    }
    thresholds.push_back(calibrate_threshold(scores_by_class[k], tpr));
  }
  return thresholds;
}

namespace {

void check_thresholds(std::span<const double> logits, std::span<const double> thresholds) {
  if (logits.size() != thresholds.size() || logits.empty()) {
    throw ShapeError(fmt::format("{} logits but {} DOC thresholds", logits.size(), thresholds.size()));
  }
}

}  // namespace

double doc_score(std::span<const double> logits, std::span<const double> thresholds) {
  check_thresholds(logits, thresholds);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) best = std::max(best, logistic(logits[k]) - thresholds[k]);
  return best;
}

int doc_head(std::span<const double> logits, std::span<const double> thresholds) {
  check_thresholds(logits, thresholds);
  int best = 0;
  double best_margin = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double margin = logistic(logits[k]) - thresholds[k];
    if (margin > best_margin) {
      best_margin = margin;
      best = static_cast<int>(k);
    }
  }
  return best;
}

Decision doc_decide(std::span<const double> logits, std::span<const double> thresholds) {
  return decide(doc_score(logits, thresholds), 0.0, doc_head(logits, thresholds));
}

void OdinParams::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("ODIN temperature must be > 0");
  if (!(epsilon >= 0.0)) throw ConfigError("ODIN epsilon must be >= 0");
}

double odin_score(const net::Network& net, std::span<const double> x, const OdinParams& params) {
  params.validate();
  net::Trace trace;
  if (params.epsilon == 0.0) {
    net::forward_sample(net, x, trace);
    return tempered_max_softmax(trace.logits(), params.temperature);
  }
  const auto grad = net::input_gradient(net, x, net::ObjectiveSpec{net::ScalarObjective::kTemperedMaxLogSoftmax,
                                                                    params.temperature});
  std::vector<double> nudged(x.begin(), x.end());
  for (std::size_t i = 0; i < nudged.size(); ++i) {
    const double g = -grad[i];
    const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    nudged[i] -= params.epsilon * sign;
  }
  net::forward_sample(net, nudged, trace);
  return tempered_max_softmax(trace.logits(), params.temperature);
}

std::vector<OdinParams> odin_grid() {
  std::vector<OdinParams> grid;
  for (double t : {1.0, 10.0, 100.0, 1000.0}) {
    for (double e : {0.0, 0.0005, 0.001, 0.002, 0.004}) grid.push_back(OdinParams{t, e});
  }
  return grid;
}

}  // namespace oskit::scorers
