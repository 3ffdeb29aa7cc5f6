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


#include "oskit/ocsvm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::ocsvm {

namespace {

double rbf(const double* a, const double* b, Eigen::Index d, double gamma) {
  double sq = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    sq += diff * diff;
  }
  return std::exp(-gamma * sq);
}

class KernelCache {
 public:
  KernelCache(const RowMatrix& x, double gamma, double budget_mb) : x_(x), gamma_(gamma) {
    const double column_bytes = static_cast<double>(x.rows()) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, static_cast<std::size_t>(budget_mb * 1024.0 * 1024.0 / column_bytes));
  }

  const std::vector<double>& column(Eigen::Index i) {
    auto it = columns_.find(i);
    if (it != columns_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
    if (columns_.size() >= capacity_) {
      columns_.erase(lru_.back());
      lru_.pop_back();
    }
    std::vector<double> col(static_cast<std::size_t>(x_.rows()));
    const double* xi = x_.row(i).data();
    for (Eigen::Index r = 0; r < x_.rows(); ++r) col[r] = rbf(xi, x_.row(r).data(), x_.cols(), gamma_);
    lru_.push_front(i);
    auto& slot = columns_[i];
    slot.first = std::move(col);
    slot.second = lru_.begin();
    return slot.first;
  }

 private:
  const RowMatrix& x_;
  double gamma_;
  std::size_t capacity_;
  std::list<Eigen::Index> lru_;
  std::unordered_map<Eigen::Index, std::pair<std::vector<double>, std::list<Eigen::Index>::iterator>> columns_;
};

}  // namespace

double OcsvmModel::decision(std::span<const double> z) const {
  if (z.size() != static_cast<std::size_t>(support_vectors.cols())) {
    throw ShapeError(fmt::format("feature vector has {} entries, model expects {}", z.size(), support_vectors.cols()));
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < support_vectors.rows(); ++i) {
    sum += alphas[static_cast<std::size_t>(i)] * rbf(z.data(), support_vectors.row(i).data(), support_vectors.cols(), gamma);
  }
  return sum - rho;
}

double default_gamma(const RowMatrix& features) {
  if (features.rows() < 2 || features.cols() < 1) throw DataError("need at least two feature rows");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  const double var = (features.rowwise() - mean).array().square().sum() /
                     static_cast<double>(features.rows() * features.cols());
  if (!(var > 0.0)) throw DataError("features have zero variance; RBF bandwidth undefined");
  return 1.0 / (static_cast<double>(features.cols()) * var);
}

OcsvmModel ocsvm_fit(const RowMatrix& features, const OcsvmParams& params, OcsvmFitInfo* info) {
  const Eigen::Index n = features.rows();
  if (n < 10) throw DataError(fmt::format("one-class SVM needs at least 10 samples, got {}", n));
  if (!(params.nu > 0.0 && params.nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  if (!(params.gamma >= 0.0)) throw ConfigError("gamma must be > 0 (or 0 for the default)");
  if (!(params.tol > 0.0)) throw ConfigError("tol must be > 0");
  bool all_equal = true;
  for (Eigen::Index i = 1; i < n && all_equal; ++i) all_equal = features.row(i) == features.row(0);
  if (all_equal) throw DataError("all training points are identical (degenerate kernel matrix)");

  const double gamma = params.gamma > 0.0 ? params.gamma : default_gamma(features);
  const double c = 1.0 / (params.nu * static_cast<double>(n));
  const auto un = static_cast<std::size_t>(n);

  // Feasible start: fill the first rows to the upper bound.
  std::vector<double> alpha(un, 0.0);
  double remaining = 1.0;
  for (std::size_t i = 0; i < un && remaining > 0.0; ++i) {
    alpha[i] = std::min(c, remaining);
    remaining -= alpha[i];
  }

  KernelCache cache(features, gamma, params.cache_mb);
  std::vector<double> grad(un, 0.0);
  for (std::size_t i = 0; i < un; ++i) {
    if (alpha[i] == 0.0) continue;
    const auto& col = cache.column(static_cast<Eigen::Index>(i));
    for (std::size_t r = 0; r < un; ++r) grad[r] += alpha[i] * col[r];
  }
  auto objective = [&] {
    double o = 0.0;
    for (std::size_t i = 0; i < un; ++i) o += alpha[i] * grad[i];
    return 0.5 * o;
  };

  std::size_t iter = 0;
  double violation = 0.0;
  for (;;) {
    // i: may increase (alpha < C), smallest gradient; j: may decrease (alpha > 0), largest gradient.
    std::ptrdiff_t i = -1;
    std::ptrdiff_t j = -1;
    double g_min = std::numeric_limits<double>::infinity();
    double g_max = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < un; ++t) {
      if (alpha[t] < c && grad[t] < g_min) {
        g_min = grad[t];
        i = static_cast<std::ptrdiff_t>(t);
      }
      if (alpha[t] > 0.0 && grad[t] > g_max) {
        g_max = grad[t];
        j = static_cast<std::ptrdiff_t>(t);
      }
    }
    violation = (i < 0 || j < 0) ? 0.0 : g_max - g_min;
    if (violation < params.tol) break;
    if (iter >= params.max_iterations) {
      throw ConvergenceError(fmt::format("SMO did not converge in {} pair updates", params.max_iterations));
    }
    const auto& col_i = cache.column(i);
    const std::vector<double> col_j = cache.column(j);
    const double quad = std::max(col_i[i] + col_j[j] - 2.0 * col_i[j], 1e-12);
    double step = (g_max - g_min) / quad;
    step = std::min({step, c - alpha[i], alpha[j]});
    alpha[i] += step;
    alpha[j] -= step;
    if (alpha[i] > c - 1e-15 * c) alpha[i] = std::min(alpha[i], c);
    if (alpha[j] < 1e-15 * c) alpha[j] = std::max(alpha[j], 0.0);
    for (std::size_t r = 0; r < un; ++r) grad[r] += step * (col_i[r] - col_j[r]);
    ++iter;
    if (info != nullptr) info->objective_trace.push_back(objective());
  }

  // rho from free vectors, otherwise the midpoint of the feasible interval.
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double upper = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < un; ++t) {
    if (alpha[t] > 0.0 && alpha[t] < c) {
      free_sum += grad[t];
      ++free_count;
    } else if (alpha[t] >= c) {
      lower = std::max(lower, grad[t]);
    } else {
      upper = std::min(upper, grad[t]);
    }
  }
  OcsvmModel model;
  model.gamma = gamma;
  model.nu = params.nu;
  if (free_count > 0) {
    model.rho = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(upper) && std::isfinite(lower)) {
    model.rho = 0.5 * (upper + lower);
  } else {
    model.rho = std::isfinite(upper) ? upper : lower;
  }
  std::vector<Eigen::Index> support;
  for (std::size_t t = 0; t < un; ++t) {
    if (alpha[t] > 0.0) support.push_back(static_cast<Eigen::Index>(t));
  }
  model.support_vectors.resize(static_cast<Eigen::Index>(support.size()), features.cols());
  for (std::size_t s = 0; s < support.size(); ++s) {
    model.support_vectors.row(static_cast<Eigen::Index>(s)) = features.row(support[s]);
    model.alphas.push_back(alpha[static_cast<std::size_t>(support[s])]);
  }
  if (info != nullptr) {
    info->iterations = iter;
    info->final_violation = violation;
    info->objective = objective();
    info->all_alphas = alpha;
  }
  return model;
}

std::vector<OcsvmParams> ocsvm_grid(double base_gamma) {
  std::vector<OcsvmParams> grid;
  for (double nu : {0.01, 0.05, 0.1}) {
    for (double scale : {0.1, 1.0, 10.0}) {
      OcsvmParams p;
      p.nu = nu;
      p.gamma = scale * base_gamma;
      grid.push_back(p);
    }
  }
  return grid;
}

}  // namespace oskit::ocsvm
