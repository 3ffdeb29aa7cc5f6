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


#include "oskit/mahalanobis.hpp"

#include <cstdio>
#include <vector>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::mahalanobis {

namespace {

constexpr int kMaxDoublings = 10;

}  // namespace

MahalanobisModel from_moments(RowMatrix means, Eigen::MatrixXd covariance, double lambda) {
  const Eigen::Index d = means.cols();
  if (covariance.rows() != d || covariance.cols() != d) throw ShapeError("covariance does not match mean width");
  if (!(lambda >= 0.0)) throw ConfigError("regularizer must be >= 0");
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw NumericError("covariance is not symmetric");
  }
  MahalanobisModel model;
  model.means = std::move(means);
  model.covariance = std::move(covariance);
  double current = lambda;
  for (int attempt = 0; attempt <= kMaxDoublings; ++attempt) {
    Eigen::MatrixXd regularized = model.covariance;
    regularized.diagonal().array() += current;
    model.factor.compute(regularized);
    if (model.factor.info() == Eigen::Success && model.factor.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
      model.regularizer = current;
      return model;
    }
    current = current > 0.0 ? 2.0 * current : 1e-6;
  }
  throw NumericError("Cholesky factorization failed after maximum regularization");
}

MahalanobisModel mahalanobis_fit(const RowMatrix& features, std::span<const int> labels, int num_classes) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (labels.size() != static_cast<std::size_t>(n)) throw ShapeError("label count does not match feature rows");
  if (num_classes < 1 || d < 1) throw ShapeError("need at least one class and one feature");
  RowMatrix means = RowMatrix::Zero(num_classes, d);
  std::vector<std::size_t> counts(num_classes, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) throw InvalidLabelError(fmt::format("label {} out of range", y));
    means.row(y) += features.row(i);
    ++counts[y];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] < 2) throw DataError(fmt::format("class {} has {} samples, Mahalanobis needs 2", k, counts[k]));
    means.row(k) /= static_cast<double>(counts[k]);
  }
  if (n <= d) std::fprintf(stderr, "warning: Mahalanobis fit with n = %td <= d = %td\n", n, d);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd r = features.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
    cov.noalias() += r.transpose() * r;
  }
  cov /= static_cast<double>(n);
  cov = 0.5 * (cov + cov.transpose());
  const double trace = cov.trace();
  const double lambda = trace > 0.0 ? 1e-6 * trace / static_cast<double>(d) : 1e-6;
  return from_moments(std::move(means), std::move(cov), lambda);
}

Eigen::VectorXd MahalanobisModel::quadratic_forms(std::span<const double> z) const {
  if (z.size() != static_cast<std::size_t>(dim())) {
    throw ShapeError(fmt::format("feature vector has {} entries, model expects {}", z.size(), dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), dim());
  Eigen::VectorXd out(num_classes());
  for (int k = 0; k < num_classes(); ++k) {
    const Eigen::VectorXd diff = zv - means.row(k).transpose();
    const Eigen::VectorXd y = factor.matrixL().solve(diff);
    out[k] = y.squaredNorm();
  }
  return out;
}

double mahalanobis_score(const MahalanobisModel& model, std::span<const double> z) {
  return -model.quadratic_forms(z).minCoeff();
}

int mahalanobis_classify(const MahalanobisModel& model, std::span<const double> z) {
  const auto q = model.quadratic_forms(z);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < q.size(); ++k) {
    if (q[k] < q[best]) best = k;
  }
  return static_cast<int>(best);
}

}  // namespace oskit::mahalanobis
