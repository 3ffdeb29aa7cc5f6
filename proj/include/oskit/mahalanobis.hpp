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

#include <Eigen/Cholesky>

#include "oskit/tensor.hpp"

namespace oskit::mahalanobis {

struct MahalanobisModel {
  RowMatrix means;       ///< K x d
  Eigen::MatrixXd covariance;  ///< tied population covariance, d x d
  double regularizer = 0.0;    ///< lambda_r added to the diagonal before factorizing
  Eigen::LLT<Eigen::MatrixXd> factor;

  int num_classes() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// (z - mu_k)^T (Sigma + lambda_r I)^-1 (z - mu_k) for every class.
  Eigen::VectorXd quadratic_forms(std::span<const double> z) const;
};

/// Builds a model from given moments. Factorizes Sigma + lambda I, doubling lambda
/// (starting from 1e-6 when \p lambda is 0 and the matrix is singular) at most 10 times.
MahalanobisModel from_moments(RowMatrix means, Eigen::MatrixXd covariance, double lambda);

/// Class means plus tied covariance; lambda_r starts at 1e-6 trace(Sigma) / d.
MahalanobisModel mahalanobis_fit(const RowMatrix& features, std::span<const int> labels, int num_classes);

/// -min_k of the quadratic form.
double mahalanobis_score(const MahalanobisModel& model, std::span<const double> z);

/// argmin_k of the quadratic form; ties go to the lower class index.
int mahalanobis_classify(const MahalanobisModel& model, std::span<const double> z);

}  // namespace oskit::mahalanobis
