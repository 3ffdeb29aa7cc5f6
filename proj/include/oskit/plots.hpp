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
#include <string>
#include <vector>

#include "oskit/detector.hpp"
#include "oskit/metrics.hpp"
#include "oskit/tensor_net.hpp"

namespace oskit::plots {

struct Bounds {
  double x_min = -1.0;
  double x_max = 1.0;
  double y_min = -1.0;
  double y_max = 1.0;
};

/// Bounding box of 2-D points scaled by \p factor about its centre.
Bounds feature_extent(const RowMatrix& features, double factor = 1.0);

struct Grid {
  int resolution = 0;
  Bounds bounds;
  double threshold = 0.0;
  /// Row-major, row 0 at y_min, column 0 at x_min; values at cell centres.
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<char> accepted;

  double cell_x(int col) const;
  double cell_y(int row) const;
  bool border_accepted() const;
  std::size_t accepted_count() const;
};

/// Scores a resolution x resolution lattice of feature points. Output-head detectors see
/// the points mapped through the final linear layer.
Grid evaluate_grid(const net::Network& net, const detect::Detector& detector, const Bounds& bounds, int resolution,
                   double threshold);

std::string render_boundary_grid(const Grid& grid, const std::string& title, const std::string& note = {});

/// Data bounds with a 5% margin on each side.
Bounds scatter_bounds(const RowMatrix& in, const RowMatrix* out);

std::string render_scatter(const RowMatrix& in, std::span<const int> labels, const RowMatrix* out,
                           const std::string& title);

struct NamedCurve {
  std::string name;
  std::vector<metrics::CurvePoint> points;
  double area = 0.0;
};

/// One polyline per curve with a diagonal reference; \p area_name labels the legend value.
std::string render_curves(const std::vector<NamedCurve>& curves, const std::string& title, const std::string& y_label,
                          const std::string& area_name);

/// Six-significant-digit number formatting used for every coordinate.
std::string svg_number(double value);

}  // namespace oskit::plots
