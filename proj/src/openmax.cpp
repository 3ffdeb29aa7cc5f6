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


#include "oskit/openmax.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::openmax {

double WeibullModel::cdf(double x) const {
  if (x <= 0.0) return 0.0;
  return -std::expm1(-std::pow(x / scale, shape));
}

WeibullFit weibull_fit_mle(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 5) throw DataError(fmt::format("Weibull fit needs at least 5 samples, got {}", n));
  double top = 0.0;
  for (double x : samples) {
    if (!(x > 0.0) || !std::isfinite(x)) throw DataError("Weibull samples must be positive and finite");
    top = std::max(top, x);
  }
  // Work on x / max(x) so x^k stays in (0, 1].
  std::vector<double> logs(n);
  for (std::size_t i = 0; i < n; ++i) logs[i] = std::log(samples[i] / top);
  const double mean_log = std::accumulate(logs.begin(), logs.end(), 0.0) / static_cast<double>(n);
  double var_log = 0.0;
  for (double l : logs) var_log += (l - mean_log) * (l - mean_log);
  var_log /= static_cast<double>(n);
  if (var_log <= 0.0) throw DataError("Weibull samples are all equal (degenerate fit)");

  auto sums = [&](double k, double& s0, double& s1, double& s2) {
    s0 = s1 = s2 = 0.0;
    for (double l : logs) {
      const double p = std::exp(k * l);
      s0 += p;
      s1 += p * l;
      s2 += p * l * l;
    }
  };
  double k = 1.2825 / std::sqrt(var_log);  // moment-matching start: pi / sqrt(6 var)
  WeibullFit fit;
  for (int it = 1; it <= 200; ++it) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    sums(k, s0, s1, s2);
    const double g = s1 / s0 - 1.0 / k - mean_log;
    const double dg = (s2 * s0 - s1 * s1) / (s0 * s0) + 1.0 / (k * k);
    double next = k - g / dg;
    if (!(next > 0.0) || !std::isfinite(next)) next = k / 2.0;
    const double step = std::abs(next - k);
    k = next;
    if (step < 1e-9) {
      sums(k, s0, s1, s2);
      fit.shape = k;
      fit.scale = top * std::pow(s0 / static_cast<double>(n), 1.0 / k);
      fit.iterations = it;
      return fit;
    }
  }
  throw ConvergenceError("Weibull MLE did not converge in 200 iterations");
}

RowMatrix fit_mavs(const RowMatrix& activations, const RowMatrix& logits, std::span<const int> labels,
                   int num_classes, std::size_t min_correct) {
  if (activations.rows() != logits.rows() || labels.size() != static_cast<std::size_t>(logits.rows())) {
    throw ShapeError("activations, logits and labels must have the same number of rows");
  }
  if (logits.cols() != num_classes) throw ShapeError("logit width does not match the class count");
  RowMatrix mavs = RowMatrix::Zero(num_classes, activations.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) throw InvalidLabelError(fmt::format("label {} out of range", y));
    if (scorers::argmax(row_span(logits, i)) != y) continue;
    mavs.row(y) += activations.row(i);
    ++counts[y];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] < std::max<std::size_t>(min_correct, 1)) {
      throw DataError(fmt::format("class {} has {} correctly classified samples, {} required", k, counts[k],
                                  std::max<std::size_t>(min_correct, 1)));
    }
    mavs.row(k) /= static_cast<double>(counts[k]);
  }
  return mavs;
}

std::vector<double> OpenMaxModel::recalibrate(std::span<const double> activation) const {
  const int k_classes = num_classes();
  if (activation.size() != static_cast<std::size_t>(k_classes) || mavs.cols() != k_classes) {
    throw ShapeError("activation width does not match the OpenMax model");
  }
  if (weibulls.size() != static_cast<std::size_t>(k_classes)) throw ConfigError("OpenMax model is not fitted");
  if (alpha < 1 || alpha > k_classes) throw ConfigError("OpenMax alpha must lie in 1..K");
  std::vector<int> order(k_classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return activation[a] > activation[b]; });

  std::vector<double> out(k_classes + 1);
  double rejected = 0.0;
  std::vector<double> weight(k_classes, 1.0);
  for (int rank = 1; rank <= alpha; ++rank) {
    const int c = order[rank - 1];
    double dist = 0.0;
    for (int j = 0; j < k_classes; ++j) {
      const double d = activation[j] - mavs(c, j);
      dist += d * d;
    }
    const double damping = static_cast<double>(alpha - rank + 1) / alpha;
    weight[c] = 1.0 - damping * weibulls[c].cdf(std::sqrt(dist));
  }
  for (int k = 0; k < k_classes; ++k) {
    out[k] = activation[k] * weight[k];
    rejected += activation[k] * (1.0 - weight[k]);
  }
  out[k_classes] = rejected;
  const double m = *std::max_element(out.begin(), out.end());
  double s = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : out) v /= s;
  return out;
}

std::vector<OpenMaxParams> openmax_grid() {
  std::vector<OpenMaxParams> grid;
  for (int tail : {10, 20, 50}) {
    for (int alpha : {1, 2, 3, 5}) grid.push_back(OpenMaxParams{tail, alpha});
  }
  return grid;
}

OpenMaxModel fit_openmax(const RowMatrix& logits, std::span<const int> labels, const OpenMaxParams& params) {
  const int k_classes = static_cast<int>(logits.cols());
  if (params.tail_size < 5) throw ConfigError("OpenMax tail size must be >= 5");
  if (params.alpha < 1) throw ConfigError("OpenMax alpha must be >= 1");
  OpenMaxModel model;
  model.alpha = std::min(params.alpha, k_classes);
  model.mavs = fit_mavs(logits, logits, labels, k_classes, static_cast<std::size_t>(params.tail_size));
  std::vector<std::vector<double>> distances(k_classes);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (scorers::argmax(row_span(logits, i)) != y) continue;
    distances[y].push_back((logits.row(i) - model.mavs.row(y)).norm());
  }
  for (int k = 0; k < k_classes; ++k) {
    auto& d = distances[k];
    std::sort(d.begin(), d.end(), std::greater<>());
    d.resize(static_cast<std::size_t>(params.tail_size));
    const auto fit = weibull_fit_mle(d);
    model.weibulls.push_back(WeibullModel{fit.shape, fit.scale, params.tail_size, k});
  }
  return model;
}

namespace {

void check_probabilities(std::span<const double> p) {
  if (p.size() < 2) throw ShapeError("OpenMax output needs at least one known class plus rejection");
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw NumericError("OpenMax probabilities do not sum to 1");
}

}  // namespace

int openmax_head(std::span<const double> probabilities) {
  return scorers::argmax(probabilities.first(probabilities.size() - 1));
}

double openmax_score(std::span<const double> probabilities) {
  check_probabilities(probabilities);
  const double top = probabilities[static_cast<std::size_t>(openmax_head(probabilities))];
  const double rejection = probabilities.back();
  return rejection > top ? -rejection : top;
}

scorers::Decision openmax_decide(std::span<const double> probabilities, double delta) {
  check_probabilities(probabilities);
  const int head = openmax_head(probabilities);
  const double top = probabilities[static_cast<std::size_t>(head)];
  if (probabilities.back() > top || top < delta) return {scorers::kReject, openmax_score(probabilities)};
  return {head, top};
}

}  // namespace oskit::openmax
