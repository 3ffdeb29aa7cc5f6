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


#include "oskit/plots.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::plots {

namespace {

constexpr double kSize = 480.0;
constexpr double kMargin = 48.0;
constexpr double kPlot = kSize - 2.0 * kMargin;

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

struct Frame {
  Bounds b;
  double px(double x) const { return kMargin + (x - b.x_min) / (b.x_max - b.x_min) * kPlot; }
  double py(double y) const { return kMargin + (b.y_max - y) / (b.y_max - b.y_min) * kPlot; }
};

std::string open_svg(const std::string& title) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n"
      "<title>{1}</title>\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{0}\" fill=\"#ffffff\"/>\n"
      "<text x=\"{2}\" y=\"{3}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{1}</text>\n",
      svg_number(kSize), escape(title), svg_number(kSize / 2.0), svg_number(kMargin / 2.0));
}

std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label) {
  std::string out = fmt::format(
      "<rect x=\"{0}\" y=\"{0}\" width=\"{1}\" height=\"{1}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
      svg_number(kMargin), svg_number(kPlot));
  out += fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n"
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
      svg_number(kMargin), svg_number(kMargin + kPlot + 14.0), svg_number(f.b.x_min), svg_number(kMargin + kPlot),
      svg_number(kMargin + kPlot + 14.0), svg_number(f.b.x_max));
  out += fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n"
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
      svg_number(kMargin - 4.0), svg_number(kMargin + kPlot), svg_number(f.b.y_min), svg_number(kMargin - 4.0),
      svg_number(kMargin + 10.0), svg_number(f.b.y_max));
  out += fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
      svg_number(kSize / 2.0), svg_number(kSize - 12.0), escape(x_label));
  out += fmt::format(
      "<text x=\"14\" y=\"{0}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 14 {0})\">{1}</text>\n",
      svg_number(kSize / 2.0), escape(y_label));
  return out;
}

void check_bounds(const Bounds& b) {
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min) || !std::isfinite(b.x_min) || !std::isfinite(b.x_max) ||
      !std::isfinite(b.y_min) || !std::isfinite(b.y_max)) {
    throw ConfigError("plot bounds must be finite with max > min");
  }
}

}  // namespace

std::string svg_number(double value) {
  if (value == 0.0) return "0";
  return fmt::format("{:.6g}", value);
}

Bounds feature_extent(const RowMatrix& features, double factor) {
  if (features.cols() != 2) throw ShapeError("feature extent needs 2-D features");
  if (features.rows() == 0) throw DataError("feature extent of an empty set");
  if (!(factor > 0.0)) throw ConfigError("extent factor must be > 0");
  const auto lo = features.colwise().minCoeff();
  const auto hi = features.colwise().maxCoeff();
  const double cx = 0.5 * (lo[0] + hi[0]);
  const double cy = 0.5 * (lo[1] + hi[1]);
  const double hx = std::max(0.5 * (hi[0] - lo[0]), 1e-9) * factor;
  const double hy = std::max(0.5 * (hi[1] - lo[1]), 1e-9) * factor;
  return Bounds{cx - hx, cx + hx, cy - hy, cy + hy};
}

double Grid::cell_x(int col) const {
  return bounds.x_min + (col + 0.5) * (bounds.x_max - bounds.x_min) / resolution;
}

double Grid::cell_y(int row) const {
  return bounds.y_min + (row + 0.5) * (bounds.y_max - bounds.y_min) / resolution;
}

bool Grid::border_accepted() const {
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const bool border = r == 0 || c == 0 || r == resolution - 1 || c == resolution - 1;
      if (border && accepted[static_cast<std::size_t>(r) * resolution + c]) return true;
    }
  }
  return false;
}

std::size_t Grid::accepted_count() const {
  return static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), 1));
}

Grid evaluate_grid(const net::Network& net, const detect::Detector& detector, const Bounds& bounds, int resolution,
                   double threshold) {
  if (net.feature_dim() != 2) throw ShapeError(fmt::format("boundary grids need feature_dim 2, got {}", net.feature_dim()));
  if (resolution < 50) throw ConfigError("grid resolution must be >= 50");
  check_bounds(bounds);
  Grid grid;
  grid.resolution = resolution;
  grid.bounds = bounds;
  grid.threshold = threshold;
  const Eigen::Index cells = static_cast<Eigen::Index>(resolution) * resolution;
  RowMatrix features(cells, 2);
  RowMatrix logits(cells, net.num_classes());
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const Eigen::Index i = static_cast<Eigen::Index>(r) * resolution + c;
      features(i, 0) = grid.cell_x(c);
      features(i, 1) = grid.cell_y(r);
      const auto l = net.logits_from_features(row_span(features, i));
      std::copy(l.begin(), l.end(), logits.row(i).data());
    }
  }
  const detect::ActivationBatch batch{&features, &logits, nullptr};
  grid.scores = detector.scores(batch);
  grid.labels = detector.closed_set_labels(batch);
  grid.accepted.resize(grid.scores.size());
  for (std::size_t i = 0; i < grid.scores.size(); ++i) grid.accepted[i] = grid.scores[i] >= threshold ? 1 : 0;
  return grid;
}

std::string render_boundary_grid(const Grid& grid, const std::string& title, const std::string& note) {
  const Frame f{grid.bounds};
  const double cell = kPlot / grid.resolution;
  std::string out = open_svg(title);
  out += "<g shape-rendering=\"crispEdges\">\n";
  for (int r = 0; r < grid.resolution; ++r) {
    for (int c = 0; c < grid.resolution; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * grid.resolution + c;
      const char* fill = grid.accepted[i] ? "#4060ff" : "#ff6050";
      out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                         svg_number(kMargin + c * cell), svg_number(kMargin + (grid.resolution - 1 - r) * cell),
                         svg_number(cell), svg_number(cell), fill);
    }
  }
  out += "</g>\n";
  // Closed-set boundaries: edges between cells with different head labels.
  std::string path;
  for (int r = 0; r < grid.resolution; ++r) {
    for (int c = 0; c < grid.resolution; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * grid.resolution + c;
      const double x0 = kMargin + c * cell;
      const double y0 = kMargin + (grid.resolution - 1 - r) * cell;
      if (c + 1 < grid.resolution && grid.labels[i] != grid.labels[i + 1]) {
        path += fmt::format("M{} {}V{}", svg_number(x0 + cell), svg_number(y0), svg_number(y0 + cell));
      }
      if (r + 1 < grid.resolution && grid.labels[i] != grid.labels[i + grid.resolution]) {
        path += fmt::format("M{} {}H{}", svg_number(x0), svg_number(y0), svg_number(x0 + cell));
      }
    }
  }
  if (!path.empty()) {
    out += fmt::format("<path class=\"class-boundary\" d=\"{}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"1\"/>\n",
                       path);
  }
  out += axes(f, "feature 1", "feature 2");
  out += fmt::format(
      "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">blue: accept (S &gt;= {}), red: reject{}</text>\n",
      svg_number(kMargin), svg_number(kSize - 28.0), svg_number(grid.threshold),
      note.empty() ? "" : "; " + escape(note));
  out += "</svg>\n";
  return out;
}

Bounds scatter_bounds(const RowMatrix& in, const RowMatrix* out) {
  if (in.cols() != 2 || (out != nullptr && out->rows() > 0 && out->cols() != 2)) {
    throw ShapeError("scatter plots need 2-D features");
  }
  if (in.rows() == 0) throw DataError("scatter plot without in-distribution points");
  double x0 = in.col(0).minCoeff(), x1 = in.col(0).maxCoeff();
  double y0 = in.col(1).minCoeff(), y1 = in.col(1).maxCoeff();
  if (out != nullptr && out->rows() > 0) {
    x0 = std::min(x0, out->col(0).minCoeff());
    x1 = std::max(x1, out->col(0).maxCoeff());
    y0 = std::min(y0, out->col(1).minCoeff());
    y1 = std::max(y1, out->col(1).maxCoeff());
  }
  const double mx = std::max(0.05 * (x1 - x0), 1e-9);
  const double my = std::max(0.05 * (y1 - y0), 1e-9);
  return Bounds{x0 - mx, x1 + mx, y0 - my, y1 + my};
}

std::string render_scatter(const RowMatrix& in, std::span<const int> labels, const RowMatrix* out,
                           const std::string& title) {
  if (labels.size() != static_cast<std::size_t>(in.rows())) throw ShapeError("scatter labels are not row-aligned");
  const Frame f{scatter_bounds(in, out)};
  std::string svg = open_svg(title);
  if (out != nullptr) {
    for (Eigen::Index i = 0; i < out->rows(); ++i) {
      svg += fmt::format("<circle class=\"out\" cx=\"{}\" cy=\"{}\" r=\"1.5\" fill=\"#000000\"/>\n",
                         svg_number(f.px((*out)(i, 0))), svg_number(f.py((*out)(i, 1))));
    }
  }
  int max_label = 0;
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    max_label = std::max(max_label, y);
    svg += fmt::format("<circle class=\"in\" cx=\"{}\" cy=\"{}\" r=\"1.5\" fill=\"{}\"/>\n", svg_number(f.px(in(i, 0))),
                       svg_number(f.py(in(i, 1))), kPalette[((y % 10) + 10) % 10]);
  }
  svg += axes(f, "feature 1", "feature 2");
  double ly = kMargin + 12.0;
  for (int k = 0; k <= max_label; ++k) {
    svg += fmt::format(
        "<g class=\"legend\"><circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>"
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">class {}</text></g>\n",
        svg_number(kMargin + kPlot - 60.0), svg_number(ly), kPalette[k % 10], svg_number(kMargin + kPlot - 52.0),
        svg_number(ly + 3.0), k);
    ly += 14.0;
  }
  if (out != nullptr && out->rows() > 0) {
    svg += fmt::format(
        "<g class=\"legend\"><circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#000000\"/>"
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">outlier</text></g>\n",
        svg_number(kMargin + kPlot - 60.0), svg_number(ly), svg_number(kMargin + kPlot - 52.0), svg_number(ly + 3.0));
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_curves(const std::vector<NamedCurve>& curves, const std::string& title, const std::string& y_label,
                          const std::string& area_name) {
  if (curves.empty()) throw ConfigError("no curves to plot");
  const Frame f{Bounds{0.0, 1.0, 0.0, 1.0}};
  std::string svg = open_svg(title);
  svg += fmt::format(
      "<line class=\"diagonal\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n",
      svg_number(f.px(0.0)), svg_number(f.py(0.0)), svg_number(f.px(1.0)), svg_number(f.py(1.0)));
  double ly = kMargin + kPlot - 12.0 - 14.0 * static_cast<double>(curves.size() - 1);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    std::string pts;
    for (const auto& p : curves[k].points) {
      if (!pts.empty()) pts += ' ';
      pts += svg_number(f.px(p.fpr)) + "," + svg_number(f.py(p.y));
    }
    svg += fmt::format("<polyline class=\"curve\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                       pts, kPalette[k % 10]);
    svg += fmt::format(
        "<g class=\"legend\"><line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>"
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{} ({} {})</text></g>\n",
        svg_number(kMargin + kPlot * 0.45), svg_number(ly), svg_number(kMargin + kPlot * 0.45 + 16.0), svg_number(ly),
        kPalette[k % 10], svg_number(kMargin + kPlot * 0.45 + 20.0), svg_number(ly + 3.0), escape(curves[k].name),
        escape(area_name), metrics::format3(curves[k].area));
    ly += 14.0;
  }
  svg += axes(f, "false positive rate", y_label);
  svg += "</svg>\n";
  return svg;
}

}  // namespace oskit::plots
