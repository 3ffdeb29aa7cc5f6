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


#include "oskit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "oskit/error.hpp"

namespace oskit::metrics {

namespace {

void check_scores(std::span<const double> scores, const char* what) {
  if (scores.empty()) throw DataError(fmt::format("{} scores are empty", what));
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError(fmt::format("{} scores contain NaN", what));
  }
}

// Points of a curve whose y coordinate counts \p in_hits among in-scores at or above t.
std::vector<CurvePoint> sweep_curve(std::span<const double> in_scores, std::span<const char> in_hits,
                                    std::span<const double> out_scores) {
  std::vector<std::size_t> in_order(in_scores.size());
  std::iota(in_order.begin(), in_order.end(), std::size_t{0});
  std::sort(in_order.begin(), in_order.end(), [&](std::size_t a, std::size_t b) { return in_scores[a] > in_scores[b]; });
  std::vector<double> out_sorted(out_scores.begin(), out_scores.end());
  std::sort(out_sorted.begin(), out_sorted.end(), std::greater<>());
  std::vector<double> thresholds(in_scores.begin(), in_scores.end());
  thresholds.insert(thresholds.end(), out_scores.begin(), out_scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double n_in = static_cast<double>(in_scores.size());
  const double n_out = static_cast<double>(out_scores.size());
  std::vector<CurvePoint> points{{0.0, 0.0}};
  std::size_t in_pos = 0;
  std::size_t out_pos = 0;
  std::size_t hits = 0;
  for (double t : thresholds) {
    while (in_pos < in_order.size() && in_scores[in_order[in_pos]] >= t) {
      hits += in_hits[in_order[in_pos]] ? 1 : 0;
      ++in_pos;
    }
    while (out_pos < out_sorted.size() && out_sorted[out_pos] >= t) ++out_pos;
    points.push_back({static_cast<double>(out_pos) / n_out, static_cast<double>(hits) / n_in});
  }
  // The -infinity threshold accepts everything; it coincides with the lowest finite one.
  points.push_back({1.0, static_cast<double>(hits) / n_in});
  return points;
}

double trapezoid(const std::vector<CurvePoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * 0.5 * (points[i].y + points[i - 1].y);
  }
  return area;
}

double median(std::vector<double> v) {
  if (v.empty()) return 1.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double auroc(std::span<const double> in_scores, std::span<const double> out_scores) {
  check_scores(in_scores, "in-distribution");
  check_scores(out_scores, "outlier");
  std::vector<double> all(in_scores.begin(), in_scores.end());
  all.insert(all.end(), out_scores.begin(), out_scores.end());
  const auto ranks = midranks(all);
  const double m = static_cast<double>(in_scores.size());
  const double n = static_cast<double>(out_scores.size());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < in_scores.size(); ++i) rank_sum += ranks[i];
  return (rank_sum - m * (m + 1.0) / 2.0) / (m * n);
}

RocCurve roc_curve(std::span<const double> in_scores, std::span<const double> out_scores) {
  RocCurve curve;
  curve.auroc = auroc(in_scores, out_scores);
  const std::vector<char> all_hits(in_scores.size(), 1);
  curve.points = sweep_curve(in_scores, all_hits, out_scores);
  return curve;
}

OscCurve osc_curve(std::span<const double> in_scores, std::span<const int> predicted, std::span<const int> truth,
                   std::span<const double> out_scores) {
  check_scores(in_scores, "in-distribution");
  check_scores(out_scores, "outlier");
  if (predicted.size() != in_scores.size() || truth.size() != in_scores.size()) {
    throw ShapeError("in-sample scores, predictions and labels are misaligned");
  }
  std::vector<char> correct(in_scores.size());
  std::size_t n_correct = 0;
  for (std::size_t i = 0; i < in_scores.size(); ++i) {
    correct[i] = predicted[i] == truth[i] ? 1 : 0;
    n_correct += correct[i];
  }
  OscCurve curve;
  curve.points = sweep_curve(in_scores, correct, out_scores);
  curve.auosc = trapezoid(curve.points);
  curve.closed_set_accuracy = static_cast<double>(n_correct) / static_cast<double>(in_scores.size());
  curve.normalized_auosc =
      n_correct == 0 ? 0.0 : std::clamp(curve.auosc / curve.closed_set_accuracy, 0.0, 1.0);
  return curve;
}

DelongComponents delong_components(std::span<const double> in_scores, std::span<const double> out_scores) {
  check_scores(in_scores, "in-distribution");
  check_scores(out_scores, "outlier");
  const std::size_t m = in_scores.size();
  const std::size_t n = out_scores.size();
  std::vector<double> all(in_scores.begin(), in_scores.end());
  all.insert(all.end(), out_scores.begin(), out_scores.end());
  const auto tz = midranks(all);
  const auto tx = midranks(in_scores);
  const auto ty = midranks(out_scores);
  DelongComponents c;
  c.v10.resize(m);
  c.v01.resize(n);
  for (std::size_t i = 0; i < m; ++i) c.v10[i] = (tz[i] - tx[i]) / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) c.v01[j] = 1.0 - (tz[m + j] - ty[j]) / static_cast<double>(m);
  c.auroc = std::accumulate(c.v10.begin(), c.v10.end(), 0.0) / static_cast<double>(m);
  return c;
}

DelongResult delong_test(std::span<const double> in_a, std::span<const double> out_a, std::span<const double> in_b,
                         std::span<const double> out_b) {
  if (in_a.size() != in_b.size() || out_a.size() != out_b.size()) {
    throw ShapeError("DeLong test needs both detectors scored on the same samples");
  }
  if (in_a.size() < 2 || out_a.size() < 2) throw DataError("DeLong test needs at least two samples per side");
  const auto a = delong_components(in_a, out_a);
  const auto b = delong_components(in_b, out_b);
  auto cov = [](const std::vector<double>& x, double mx, const std::vector<double>& y, double my) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
  };
  const double m = static_cast<double>(in_a.size());
  const double n = static_cast<double>(out_a.size());
  DelongResult r;
  r.auroc_a = a.auroc;
  r.auroc_b = b.auroc;
  r.var_a = cov(a.v10, a.auroc, a.v10, a.auroc) / m + cov(a.v01, a.auroc, a.v01, a.auroc) / n;
  r.var_b = cov(b.v10, b.auroc, b.v10, b.auroc) / m + cov(b.v01, b.auroc, b.v01, b.auroc) / n;
  r.cov_ab = cov(a.v10, a.auroc, b.v10, b.auroc) / m + cov(a.v01, a.auroc, b.v01, b.auroc) / n;
  const double var_diff = r.var_a + r.var_b - 2.0 * r.cov_ab;
  if (var_diff > 0.0) {
    r.z = (r.auroc_a - r.auroc_b) / std::sqrt(var_diff);
    r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  }
  return r;
}

std::vector<double> holm_adjust(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(m);
  double running = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double v = std::min(1.0, static_cast<double>(m - k) * p_values[order[k]]);
    running = std::max(running, v);
    adjusted[order[k]] = running;
  }
  return adjusted;
}

std::string format3(double value) { return fmt::format("{:.3f}", value); }

RunResult evaluate_run(std::span<const double> in_scores, std::span<const int> predicted, std::span<const int> truth,
                       std::span<const double> out_scores) {
  RunResult r;
  r.auroc = auroc(in_scores, out_scores);
  const auto osc = osc_curve(in_scores, predicted, truth, out_scores);
  r.auosc = osc.auosc;
  r.normalized_auosc = osc.normalized_auosc;
  r.closed_set_accuracy = osc.closed_set_accuracy;
  r.in_scores.assign(in_scores.begin(), in_scores.end());
  r.out_scores.assign(out_scores.begin(), out_scores.end());
  return r;
}

namespace {

constexpr data::Tier kTierOrder[] = {data::Tier::kNoise, data::Tier::kInter, data::Tier::kIntra};

double mean_of(const std::vector<RunResult>& runs, double RunResult::*field) {
  double s = 0.0;
  for (const auto& r : runs) s += r.*field;
  return s / static_cast<double>(runs.size());
}

std::string row_name(const std::string& regime, const std::string& detector) { return regime + "/" + detector; }

}  // namespace

EvalReport aggregate_report(const std::vector<Cell>& cells, double alpha) {
  if (cells.empty()) throw DataError("report has no cells");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  EvalReport report;
  report.alpha = alpha;

  std::vector<std::pair<std::string, std::string>> rows;
  std::set<data::Tier> tiers;
  std::map<std::tuple<std::string, std::string, data::Tier>, const Cell*> lookup;
  for (const auto& c : cells) {
    if (!lookup.emplace(std::make_tuple(c.regime, c.detector, c.tier), &c).second) {
      throw DataError(fmt::format("duplicate report cell {}/{}/{}", c.regime, c.detector, data::tier_name(c.tier)));
    }
    if (std::find(rows.begin(), rows.end(), std::make_pair(c.regime, c.detector)) == rows.end()) {
      rows.emplace_back(c.regime, c.detector);
    }
    tiers.insert(c.tier);
  }

  for (data::Tier tier : kTierOrder) {
    if (!tiers.contains(tier)) continue;
    std::vector<const Cell*> column;
    std::size_t run_count = 0;
    for (const auto& [regime, detector] : rows) {
      const auto it = lookup.find(std::make_tuple(regime, detector, tier));
      if (it == lookup.end()) {
        throw DataError(fmt::format("report grid is missing cell {}/{}/{} (use an empty cell to mark it)", regime,
                                    detector, data::tier_name(tier)));
      }
      const Cell* c = it->second;
      if (!c->runs.empty()) {
        if (run_count != 0 && c->runs.size() != run_count) {
          throw DataError(fmt::format("inconsistent run counts in the {} column", data::tier_name(tier)));
        }
        run_count = c->runs.size();
      }
      column.push_back(c);
    }

    const std::size_t first = report.cells.size();
    std::ptrdiff_t top = -1;
    for (const Cell* c : column) {
      CellSummary s;
      s.regime = c->regime;
      s.detector = c->detector;
      s.tier = tier;
      s.missing = c->runs.empty();
      s.runs = c->runs.size();
      if (!s.missing) {
        s.auroc = mean_of(c->runs, &RunResult::auroc);
        s.auosc = mean_of(c->runs, &RunResult::auosc);
        s.normalized_auosc = mean_of(c->runs, &RunResult::normalized_auosc);
        s.closed_set_accuracy = mean_of(c->runs, &RunResult::closed_set_accuracy);
        const auto idx = static_cast<std::ptrdiff_t>(report.cells.size() - first);
        if (top < 0 || s.auroc > report.cells[first + static_cast<std::size_t>(top)].auroc) top = idx;
      }
      report.cells.push_back(std::move(s));
    }
    if (top < 0) continue;
    report.cells[first + static_cast<std::size_t>(top)].top = true;

    // Per run: DeLong of every other cell against the top cell, Holm across the column.
    std::vector<std::vector<double>> adjusted_by_cell(column.size());
    const Cell* top_cell = column[static_cast<std::size_t>(top)];
    for (std::size_t r = 0; r < run_count; ++r) {
      std::vector<double> p;
      std::vector<std::size_t> who;
      for (std::size_t c = 0; c < column.size(); ++c) {
        if (static_cast<std::ptrdiff_t>(c) == top || column[c]->runs.empty()) continue;
        const auto& a = top_cell->runs[r];
        const auto& b = column[c]->runs[r];
        p.push_back(delong_test(a.in_scores, a.out_scores, b.in_scores, b.out_scores).p);
        who.push_back(c);
      }
      const auto adj = holm_adjust(p);
      for (std::size_t k = 0; k < who.size(); ++k) adjusted_by_cell[who[k]].push_back(adj[k]);
    }
    for (std::size_t c = 0; c < column.size(); ++c) {
      auto& s = report.cells[first + c];
      if (s.missing || s.top) continue;
      s.p_vs_top = median(adjusted_by_cell[c]);
      s.indistinguishable = s.p_vs_top > alpha;
    }

    for (std::size_t i = 0; i < column.size(); ++i) {
      for (std::size_t j = i + 1; j < column.size(); ++j) {
        if (column[i]->runs.empty() || column[j]->runs.empty()) continue;
        std::vector<double> p;
        for (std::size_t r = 0; r < run_count; ++r) {
          const auto& a = column[i]->runs[r];
          const auto& b = column[j]->runs[r];
          p.push_back(delong_test(a.in_scores, a.out_scores, b.in_scores, b.out_scores).p);
        }
        report.pairwise.push_back(PairwiseP{tier, row_name(column[i]->regime, column[i]->detector),
                                            row_name(column[j]->regime, column[j]->detector), median(p)});
      }
    }
  }

  auto summarize = [&](auto key_of) {
    std::vector<SummaryMean> out;
    for (const auto& s : report.cells) {
      if (s.missing) continue;
      const std::string key = key_of(s);
      auto it = std::find_if(out.begin(), out.end(), [&](const SummaryMean& m) { return m.name == key; });
      if (it == out.end()) {
        out.push_back(SummaryMean{key});
        it = out.end() - 1;
      }
      it->auroc += s.auroc;
      it->auosc += s.auosc;
      it->normalized_auosc += s.normalized_auosc;
      ++it->cells;
    }
    for (auto& m : out) {
      m.auroc /= static_cast<double>(m.cells);
      m.auosc /= static_cast<double>(m.cells);
      m.normalized_auosc /= static_cast<double>(m.cells);
    }
    return out;
  };
  report.per_detector = summarize([](const CellSummary& s) { return s.detector; });
  report.per_regime = summarize([](const CellSummary& s) { return s.regime; });
  return report;
}

namespace {

struct Table {
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
      width.resize(std::max(width.size(), r.size()), 0);
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::string out;
    for (const auto& r : rows) {
      std::string line;
      for (std::size_t c = 0; c < r.size(); ++c) {
        line += c == 0 ? fmt::format("{:<{}}", r[c], width[c]) : fmt::format("  {:>{}}", r[c], width[c]);
      }
      out += line + "\n";
    }
    return out;
  }
};

std::vector<data::Tier> report_tiers(const EvalReport& report) {
  std::vector<data::Tier> out;
  for (data::Tier t : kTierOrder) {
    if (std::any_of(report.cells.begin(), report.cells.end(), [&](const CellSummary& c) { return c.tier == t; })) {
      out.push_back(t);
    }
  }
  return out;
}

std::string grid_table(const EvalReport& report, const char* title, double CellSummary::*field, bool marks) {
  const auto tiers = report_tiers(report);
  Table t;
  std::vector<std::string> head{"regime", "detector"};
  for (data::Tier tier : tiers) head.emplace_back(data::tier_name(tier));
  t.rows.push_back(head);
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& c : report.cells) {
    if (std::find(rows.begin(), rows.end(), std::make_pair(c.regime, c.detector)) == rows.end()) {
      rows.emplace_back(c.regime, c.detector);
    }
  }
  for (const auto& [regime, detector] : rows) {
    std::vector<std::string> line{regime, detector};
    for (data::Tier tier : tiers) {
      const auto it = std::find_if(report.cells.begin(), report.cells.end(), [&](const CellSummary& c) {
        return c.regime == regime && c.detector == detector && c.tier == tier;
      });
      if (it == report.cells.end() || it->missing) {
        line.emplace_back("--");
        continue;
      }
      std::string cell = format3((*it).*field);
      if (marks) cell += it->top ? "*" : (it->indistinguishable ? "~" : " ");
      line.push_back(cell);
    }
    t.rows.push_back(line);
  }
  return fmt::format("{}\n{}", title, t.render());
}

std::string summary_table(const char* title, const std::vector<SummaryMean>& means) {
  Table t;
  t.rows.push_back({"name", "auroc", "auosc", "norm_auosc"});
  for (const auto& m : means) {
    t.rows.push_back({m.name, format3(m.auroc), format3(m.auosc), format3(m.normalized_auosc)});
  }
  return fmt::format("{}\n{}", title, t.render());
}

}  // namespace

std::string render_text(const EvalReport& report) {
  std::string out;
  if (!report.header.empty()) out += report.header + "\n\n";
  out += grid_table(report, "AUROC (* top of column, ~ not significantly different from top)", &CellSummary::auroc, true);
  out += "\n" + grid_table(report, "AUOSC", &CellSummary::auosc, false);
  out += "\n" + grid_table(report, "Normalized AUOSC", &CellSummary::normalized_auosc, false);
  out += "\n" + summary_table("Mean per detector", report.per_detector);
  out += "\n" + summary_table("Mean per regime", report.per_regime);
  out += fmt::format("\nDeLong test vs column top, Holm-corrected within column, alpha = {}\n", report.alpha);
  return out;
}

std::string render_csv(const EvalReport& report) {
  std::string out =
      "regime,detector,tier,runs,auroc,auosc,normalized_auosc,closed_set_accuracy,top,indistinguishable,p_vs_top\n";
  for (const auto& c : report.cells) {
    if (c.missing) {
      out += fmt::format("{},{},{},0,,,,,0,0,\n", c.regime, c.detector, data::tier_name(c.tier));
      continue;
    }
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", c.regime, c.detector, data::tier_name(c.tier), c.runs,
                       format3(c.auroc), format3(c.auosc), format3(c.normalized_auosc),
                       format3(c.closed_set_accuracy), c.top ? 1 : 0, c.indistinguishable ? 1 : 0,
                       format3(c.p_vs_top));
  }
  return out;
}

std::string render_runs_csv(const std::vector<Cell>& cells) {
  std::string out = "regime,detector,tier,run,auroc,auosc,normalized_auosc,closed_set_accuracy\n";
  for (data::Tier tier : kTierOrder) {
    for (const auto& c : cells) {
      if (c.tier != tier) continue;
      for (std::size_t r = 0; r < c.runs.size(); ++r) {
        const auto& x = c.runs[r];
        out += fmt::format("{},{},{},{},{},{},{},{}\n", c.regime, c.detector, data::tier_name(tier), r + 1,
                           format3(x.auroc), format3(x.auosc), format3(x.normalized_auosc),
                           format3(x.closed_set_accuracy));
      }
    }
  }
  return out;
}

std::string render_pairwise_csv(const EvalReport& report) {
  std::string out = "tier,a,b,median_p\n";
  for (const auto& p : report.pairwise) {
    out += fmt::format("{},{},{},{}\n", data::tier_name(p.tier), p.a, p.b, format3(p.median_p));
  }
  return out;
}

}  // namespace oskit::metrics
