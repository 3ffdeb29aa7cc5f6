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

#include <cstddef>
#include <span>
#include <vector>

#include "oskit/tensor.hpp"

namespace oskit::ocsvm {

struct OcsvmParams {
  double nu = 0.05;
  double gamma = 0.0;  ///< 0 selects 1 / (d * mean per-dimension variance)
  double tol = 1e-3;
  double cache_mb = 256.0;
  std::size_t max_iterations = 1'000'000;
  friend bool operator==(const OcsvmParams&, const OcsvmParams&) = default;
};

struct OcsvmModel {
  RowMatrix support_vectors;  ///< m x d
  std::vector<double> alphas;
  double rho = 0.0;
  double gamma = 1.0;
  double nu = 0.05;

  /// sum_i alpha_i exp(-gamma |z - x_i|^2) - rho.
  double decision(std::span<const double> z) const;
};

struct OcsvmFitInfo {
  std::size_t iterations = 0;
  double final_violation = 0.0;
  double objective = 0.0;
  std::vector<double> objective_trace;  ///< dual objective after every pair update
  std::vector<double> all_alphas;       ///< dual variables in training-row order
};

double default_gamma(const RowMatrix& features);

/// One-class dual solved by SMO on the maximal violating pair.
OcsvmModel ocsvm_fit(const RowMatrix& features, const OcsvmParams& params, OcsvmFitInfo* info = nullptr);

/// Noise-tuning grid: nu in {0.01, 0.05, 0.1}, gamma in {0.1, 1, 10} x \p base_gamma.
std::vector<OcsvmParams> ocsvm_grid(double base_gamma);

}  // namespace oskit::ocsvm
