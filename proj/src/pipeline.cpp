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

#include "oskit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

#include "oskit/seed.hpp"

namespace oskit::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool contains_tier(const std::vector<data::Tier>& tiers, data::Tier t) {
  return std::find(tiers.begin(), tiers.end(), t) != tiers.end();
}

RowMatrix take_matrix_rows(const RowMatrix& m, std::span<const std::size_t> rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(m.rows())) throw ShapeError("row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Images standardized_copy(const Images& images, const data::Standardization& st) {
  Images out = images;
  data::standardize(out, st);
  return out;
}

struct Scored {
  metrics::RunResult run;
  std::vector<int> predicted;
};

Scored score_detector(const detect::Detector& detector, const Probe& in, const Probe& out) {
  if (in.labels.size() != in.rows()) throw ShapeError("in-distribution probe needs labels");
  Scored s;
  const auto in_batch = in.batch();
  const auto in_scores = detector.scores(in_batch);
  s.predicted = detector.closed_set_labels(in_batch);
  const auto out_scores = detector.scores(out.batch());
  s.run = metrics::evaluate_run(in_scores, s.predicted, in.labels, out_scores);
  return s;
}

}  // namespace

RawData load_raw_data(const config::DataConfig& cfg, bool need_inter, bool need_background) {
  RawData raw;
  raw.known_classes = cfg.known_classes;
  {
    auto train = data::load_idx_raw(cfg.resolve(cfg.train_images), cfg.resolve(cfg.train_labels));
    auto split = data::split_open_set(train, cfg.known_classes);
    raw.train_known = std::move(split.known);
  }
  {
    auto test = data::load_idx_raw(cfg.resolve(cfg.test_images), cfg.resolve(cfg.test_labels));
    auto split = data::split_open_set(test, cfg.known_classes);
    raw.test_known = std::move(split.known);
    raw.intra = std::move(split.unknown.images);
  }
  if (raw.train_known.size() == 0) throw DataError("training file holds no known-class samples");
  if (raw.test_known.size() == 0) throw DataError("test file holds no known-class samples");
  if (need_inter) {
    if (!cfg.outlier_images) throw DataError("tier inter needs config key [data] outlier_images");
    raw.inter = data::load_idx_raw(cfg.resolve(*cfg.outlier_images), cfg.resolve(*cfg.outlier_labels)).images;
  }
  if (need_background) {
    if (!cfg.background_images) throw ConfigError("regime background_reg requires config key [data] background_images");
    auto bg = data::load_idx_raw(cfg.resolve(*cfg.background_images), cfg.resolve(*cfg.background_labels));
    if (cfg.background_count > 0 && cfg.background_count < bg.size()) {
      std::vector<std::size_t> rows(cfg.background_count);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      bg = data::subset(bg, rows);
    }
    std::fill(bg.labels.begin(), bg.labels.end(), data::kBackgroundLabel);
    raw.background = std::move(bg);
  }
  return raw;
}

DeskData prepare_split(const RawData& raw, const config::DataConfig& cfg, std::uint64_t seed) {
  const double tf = cfg.train_fraction;
  const std::vector<double> fractions{tf * (1.0 - cfg.val_fraction), tf * cfg.val_fraction, 1.0 - tf};
  const auto parts = data::stratified_partition(raw.train_known.labels, fractions, derive_seed(seed, "split"));
  DeskData d;
  d.train = data::subset(raw.train_known, parts[0]);
  d.val = data::subset(raw.train_known, parts[1]);
  if (d.train.size() == 0 || d.val.size() == 0) throw DataError("train/validation split left a part empty");
  d.standardization = data::compute_standardization(d.train.images);
  data::standardize(d.train.images, d.standardization);
  data::standardize(d.val.images, d.standardization);
  d.test_known = raw.test_known;
  data::standardize(d.test_known.images, d.standardization);
  d.intra = standardized_copy(raw.intra, d.standardization);
  if (raw.inter) d.inter = standardized_copy(*raw.inter, d.standardization);
  if (raw.background) {
    d.background = *raw.background;
    data::standardize(d.background->images, d.standardization);
  }
  return d;
}

Probe probe(const net::Network& net, Images images, std::vector<int> labels) {
  if (!labels.empty() && labels.size() != images.count) throw ShapeError("labels are not row-aligned with images");
  auto fwd = net::forward(net, images);
  Probe p;
  p.images = std::move(images);
  p.features = std::move(fwd.features);
  p.logits = std::move(fwd.logits);
  p.labels = std::move(labels);
  return p;
}

Probe probe(const net::Network& net, const data::LabeledImages& data) { return probe(net, data.images, data.labels); }

Probe take_rows(const Probe& source, std::span<const std::size_t> rows) {
  Probe p;
  p.images = data::subset(source.images, rows);
  p.features = take_matrix_rows(source.features, rows);
  p.logits = take_matrix_rows(source.logits, rows);
  if (!source.labels.empty()) {
    p.labels.reserve(rows.size());
    for (std::size_t r : rows) p.labels.push_back(source.labels[r]);
  }
  return p;
}

std::uint64_t run_seed(std::uint64_t root, int run) { return derive_seed(root, "run", static_cast<std::uint64_t>(run)); }

std::vector<NamedDetector> fit_detectors(const config::ToolkitConfig& cfg, const net::Network& net,
                                         const Probe& train, const Probe& calibration, std::uint64_t seed,
                                         const Progress& progress) {
  std::optional<Probe> noise;
  if (cfg.tune.enabled) {
    noise = probe(net, data::gaussian_noise_batch(cfg.tune.noise_count, net.architecture().input,
                                                  derive_seed(seed, "tune-noise")));
  }
  std::optional<Probe> svm_train;
  if (train.rows() > cfg.tune.ocsvm_max_train) {
    std::vector<std::size_t> rows(cfg.tune.ocsvm_max_train);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    svm_train = take_rows(train, rows);
  }
  std::vector<NamedDetector> out;
  for (const auto method : cfg.eval.methods) {
    const auto start = Clock::now();
    const Probe& fit_rows = method == detect::Method::kOcsvm && svm_train ? *svm_train : train;
    NamedDetector nd{method, nullptr, {}};
    nd.detector = with_stage(fmt::format("fit {}", detect::method_name(method)), [&] {
      return noise ? detect::fit_detector_tuned(method, fit_rows.labeled(), calibration.labeled(), noise->batch(),
                                                &net, cfg.detector, &nd.tuning)
                   : detect::fit_detector(method, fit_rows.labeled(), calibration.labeled(), &net, cfg.detector);
    });
    if (progress) {
      progress(fmt::format("  fit {:<12} {:.1f}s  {}", detect::method_name(method), seconds_since(start),
                           nd.detector->describe()));
    }
    out.push_back(std::move(nd));
  }
  return out;
}

metrics::RunResult evaluate_detector(const detect::Detector& detector, const Probe& in, const Probe& out) {
  return score_detector(detector, in, out).run;
}

Probe tier_pool(data::Tier tier, const net::Network& net, const Images& intra, const std::optional<Images>& inter,
                std::size_t n_each, std::uint64_t seed) {
  switch (tier) {
    case data::Tier::kNoise:
      return probe(net, data::gaussian_noise_batch(n_each, net.architecture().input, derive_seed(seed, "noise-eval")));
    case data::Tier::kInter:
      if (!inter) throw DataError("tier inter has no outlier data");
      return probe(net, *inter);
    case data::Tier::kIntra:
      if (intra.count == 0) throw DataError("tier intra has no unknown-class samples");
      return probe(net, intra);
  }
  throw ConfigError("unknown tier");
}

ReproduceResult reproduce_mnist(const config::ToolkitConfig& cfg, const std::filesystem::path& out,
                                const Progress& progress) {
  const auto start = Clock::now();
  auto say = [&](const std::string& line) {
    if (progress) progress(fmt::format("[{:7.1f}s] {}", seconds_since(start), line));
  };
  const auto& ev = cfg.eval;
  const bool need_bg = std::find(ev.regimes.begin(), ev.regimes.end(), net::LossRegime::kBackgroundReg) !=
                       ev.regimes.end();
  const bool need_inter = contains_tier(ev.tiers, data::Tier::kInter);
  std::filesystem::create_directories(out / "logs");

  const RawData raw = with_stage("load data", [&] { return load_raw_data(cfg.data, need_inter, need_bg); });
  say(fmt::format("data: {} known training rows, {} known test rows, {} intra outliers{}", raw.train_known.size(),
                  raw.test_known.size(), raw.intra.count,
                  raw.inter ? fmt::format(", {} inter outliers", raw.inter->count) : std::string()));

  ReproduceResult result;
  for (const auto regime : ev.regimes) {
    for (const auto method : ev.methods) {
      for (const auto tier : ev.tiers) {
        result.cells.push_back({std::string(net::regime_name(regime)), std::string(detect::method_name(method)), tier, {}});
      }
    }
  }
  auto cell_index = [&](std::size_t g, std::size_t m, std::size_t t) {
    return (g * ev.methods.size() + m) * ev.tiers.size() + t;
  };

  for (int run = 0; run < ev.runs; ++run) {
    const std::uint64_t seed = run_seed(ev.seed, run);
    const DeskData split = with_stage("split data", [&] { return prepare_split(raw, cfg.data, seed); });
    for (std::size_t g = 0; g < ev.regimes.size(); ++g) {
      const auto regime = ev.regimes[g];
      const std::string regime_name(net::regime_name(regime));
      net::TrainConfig tc = cfg.train;
      tc.regime = regime;
      tc.seed = derive_seed(seed, "train");
      const auto t0 = Clock::now();
      auto trained = with_stage(fmt::format("train {} run {}", regime_name, run), [&] {
        return net::train(cfg.architecture, tc, split.train, split.val,
                          regime == net::LossRegime::kBackgroundReg ? &*split.background : nullptr);
      });
      net::Network& model = trained.net;
      model.standardization = split.standardization;
      TrainingRecord rec{regime_name, run, seed, trained.log.empty() ? 0.0 : trained.log.back().val_top1,
                         net::top1_accuracy(model, split.test_known), seconds_since(t0)};
      result.training.push_back(rec);
      write_text(out / "logs" / fmt::format("train-{}-run{}.csv", regime_name, run),
                 render_epoch_log_csv(trained.log));
      say(fmt::format("run {}/{} {}: trained in {:.1f}s, test top-1 {:.4f}", run + 1, ev.runs, regime_name,
                      rec.seconds, rec.test_top1));

      const Probe train_probe = probe(model, split.train);
      const Probe val_probe = probe(model, split.val);
      const Probe known_pool = probe(model, split.test_known);
      const auto detectors = fit_detectors(cfg, model, train_probe, val_probe, seed, progress);

      const std::filesystem::path model_dir = out / regime_name;
      if (run == 0) {
        std::filesystem::create_directories(model_dir);
        net::save_checkpoint(model_dir / "network.oskn", model);
        for (const auto& nd : detectors) {
          nd.detector->save(model_dir / fmt::format("{}.det", detect::method_name(nd.method)));
        }
      }

      for (std::size_t t = 0; t < ev.tiers.size(); ++t) {
        const auto tier = ev.tiers[t];
        const std::string tier_label(data::tier_name(tier));
        const Probe pool = with_stage(fmt::format("evaluate {}", tier_label), [&] {
          return tier_pool(tier, model, split.intra, split.inter, ev.n_each, seed);
        });
        const auto draw = with_stage(fmt::format("evaluate {}", tier_label), [&] {
          return data::draw_eval_indices(known_pool.labels, pool.rows(), ev.n_each,
                                         derive_seed(seed, "draw", static_cast<std::uint64_t>(tier)));
        });
        const Probe in = take_rows(known_pool, draw.in_indices);
        const Probe outliers = take_rows(pool, draw.out_indices);
        std::vector<plots::NamedCurve> roc;
        std::vector<plots::NamedCurve> osc;
        for (std::size_t m = 0; m < detectors.size(); ++m) {
          const auto& det = *detectors[m].detector;
          const std::string name(detect::method_name(detectors[m].method));
          auto scored = with_stage(fmt::format("evaluate {} {}", tier_label, name),
                                   [&] { return score_detector(det, in, outliers); });
          if (run == 0) {
            const auto rc = metrics::roc_curve(scored.run.in_scores, scored.run.out_scores);
            roc.push_back({name, rc.points, rc.auroc});
            const auto oc = metrics::osc_curve(scored.run.in_scores, scored.predicted, in.labels, scored.run.out_scores);
            osc.push_back({name, oc.points, oc.auosc});
          }
          result.cells[cell_index(g, m, t)].runs.push_back(std::move(scored.run));
        }
        if (run == 0) {
          with_stage("plot", [&] {
            const std::string title = fmt::format("{} / {}", regime_name, tier_label);
            write_text(out / fmt::format("roc-{}-{}.svg", regime_name, tier_label),
                       plots::render_curves(roc, title, "true positive rate", "AUROC"));
            write_text(out / fmt::format("osc-{}-{}.svg", regime_name, tier_label),
                       plots::render_curves(osc, title, "correct classification rate", "AUOSC"));
            if (tier == data::Tier::kInter && model.feature_dim() == 2) {
              write_text(out / fmt::format("scatter-{}.svg", regime_name),
                         plots::render_scatter(in.features, in.labels, &outliers.features,
                                               fmt::format("{}: known test digits vs inter outliers", regime_name)));
            }
          });
        }
      }

      if (run == 0 && model.feature_dim() == 2) {
        with_stage("plot", [&] {
          const auto bounds = plots::feature_extent(train_probe.features, ev.grid_extent);
          for (const auto& nd : detectors) {
            const std::string name(detect::method_name(nd.method));
            const auto grid =
                plots::evaluate_grid(model, *nd.detector, bounds, ev.grid_resolution, nd.detector->threshold());
            const std::string note =
                nd.method == detect::Method::kOdin ? "ODIN drawn with temperature scaling only" : std::string();
            write_text(out / fmt::format("boundary-{}-{}.svg", regime_name, name),
                       plots::render_boundary_grid(grid, fmt::format("{}: {}", regime_name, name), note));
            result.boundaries.push_back({regime_name, name, grid.border_accepted(), grid.accepted_count(),
                                         grid.accepted.size()});
          }
        });
      }
    }
  }

  result.report = metrics::aggregate_report(result.cells, ev.alpha);
  result.report.header = fmt::format(
      "{} run(s); each run varies the training seed and the evaluation draw; root seed {}; {} in-distribution and {} "
      "outlier samples per tier",
      ev.runs, ev.seed, ev.n_each, ev.n_each);
  write_text(out / "report.txt", metrics::render_text(result.report));
  write_text(out / "report.csv", metrics::render_csv(result.report));
  write_text(out / "runs.csv", metrics::render_runs_csv(result.cells));
  write_text(out / "pairwise.csv", metrics::render_pairwise_csv(result.report));
  write_text(out / "training.csv", render_training_csv(result.training));
  std::string boundaries = "regime,detector,border_accepted,accepted_cells,total_cells\n";
  for (const auto& b : result.boundaries) {
    boundaries += fmt::format("{},{},{},{},{}\n", b.regime, b.method, b.border_accepted ? 1 : 0, b.accepted_cells,
                              b.total_cells);
  }
  write_text(out / "boundaries.csv", boundaries);
  result.seconds = seconds_since(start);
  say(fmt::format("done; artifacts in {}", out.string()));
  return result;
}

std::string render_training_csv(const std::vector<TrainingRecord>& records) {
  std::string s = "regime,run,seed,val_top1,test_top1\n";
  for (const auto& r : records) {
    s += fmt::format("{},{},{},{:.4f},{:.4f}\n", r.regime, r.run, r.seed, r.val_top1, r.test_top1);
  }
  return s;
}

std::string render_epoch_log_csv(const std::vector<net::EpochLog>& log) {
  std::string s = "epoch,lr,loss,val_top1\n";
  for (const auto& e : log) s += fmt::format("{},{:.6g},{:.6f},{:.4f}\n", e.epoch, e.lr, e.train_loss, e.val_top1);
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw DataError(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace oskit::pipeline
