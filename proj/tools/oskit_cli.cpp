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

// oskit command-line front end.
//
// Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
// 3 data error (missing, malformed or mis-shaped inputs), 4 numeric failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "oskit/config.hpp"
#include "oskit/datasets.hpp"
#include "oskit/detector.hpp"
#include "oskit/error.hpp"
#include "oskit/metrics.hpp"
#include "oskit/pipeline.hpp"
#include "oskit/plots.hpp"
#include "oskit/seed.hpp"

namespace fs = std::filesystem;
using namespace oskit;

namespace {

void log_line(std::string_view line) { fmt::print(stderr, "{}\n", line); }

std::vector<int> remap_labels(const std::vector<int>& labels, const std::vector<int>& known) {
  if (known.empty()) return labels;
  std::map<int, int> index;
  for (std::size_t i = 0; i < known.size(); ++i) index[known[i]] = static_cast<int>(i);
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = index.find(labels[i]);
    out[i] = it == index.end() ? data::kBackgroundLabel : it->second;
  }
  return out;
}

Images load_network_input(const net::Network& model, const fs::path& path) {
  Images images = data::load_idx_images(path);
  if (!(images.shape == model.architecture().input)) {
    throw ShapeError(fmt::format("images in '{}' are {}x{}x{} but the network expects {}x{}x{}", path.string(),
                                 images.shape.channels, images.shape.height, images.shape.width,
                                 model.architecture().input.channels, model.architecture().input.height,
                                 model.architecture().input.width));
  }
  data::standardize(images, model.standardization);
  return images;
}

// Labels from an OODF table or an IDX label file.
std::vector<int> read_labels(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  char magic[4] = {};
  in.read(magic, 4);
  if (in && std::string_view(magic, 4) == "OODF") {
    auto table = data::read_feature_table(path);
    if (!table.labels) throw ConfigError(fmt::format("table '{}' carries no labels", path.string()));
    return *table.labels;
  }
  return data::load_idx_labels(path);
}

struct TableInput {
  std::optional<RowMatrix> matrix;
  std::optional<std::vector<int>> labels;
};

TableInput read_table(const std::string& path) {
  TableInput t;
  if (path.empty()) return t;
  auto table = data::read_feature_table(path);
  t.matrix = table.to_matrix();
  t.labels = table.labels;
  return t;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

RowMatrix rows_of(const RowMatrix& m, const std::vector<std::size_t>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// ---------------------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out = "network.oskn";
  std::string log;
  std::optional<std::uint64_t> seed;
  std::string regime;
};

int run_train(const TrainArgs& a) {
  auto cfg = config::load_config(a.config);
  if (!a.regime.empty()) cfg.train.regime = net::parse_regime(a.regime);
  config::check_training_inputs(cfg);
  const std::uint64_t seed = a.seed.value_or(cfg.train.seed);
  const bool bg = cfg.train.regime == net::LossRegime::kBackgroundReg;
  const auto raw = pipeline::with_stage("load data", [&] { return pipeline::load_raw_data(cfg.data, false, bg); });
  const auto split = pipeline::prepare_split(raw, cfg.data, seed);
  net::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, "train");
  auto result = pipeline::with_stage("train", [&] {
    return net::train(cfg.architecture, tc, split.train, split.val, bg ? &*split.background : nullptr);
  });
  result.net.standardization = split.standardization;
  net::save_checkpoint(a.out, result.net);
  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  pipeline::write_text(log_path, pipeline::render_epoch_log_csv(result.log));
  for (const auto& e : result.log) {
    log_line(fmt::format("epoch {:3d}  lr {:.3g}  loss {:.5f}  val top-1 {:.4f}", e.epoch, e.lr, e.train_loss, e.val_top1));
  }
  fmt::print("test top-1 {:.4f}\ncheckpoint {}\nlog {}\n", net::top1_accuracy(result.net, split.test_known), a.out,
             log_path);
  return 0;
}

// ---------------------------------------------------------------------------------------

struct ExtractArgs {
  std::string checkpoint;
  std::string images;
  std::string labels;
  std::vector<int> known;
  std::string out;
};

int run_extract(const ExtractArgs& a) {
  const auto model = net::load_checkpoint(a.checkpoint);
  Images images = load_network_input(model, a.images);
  std::optional<std::vector<int>> labels;
  if (!a.labels.empty()) {
    labels = remap_labels(data::load_idx_labels(a.labels), a.known);
    if (labels->size() != images.count) {
      throw ShapeError(fmt::format("{} images but {} labels", images.count, labels->size()));
    }
  }
  const auto fwd = net::forward(model, images);
  const std::string features_path = a.out + ".features.oodf";
  const std::string logits_path = a.out + ".logits.oodf";
  data::write_feature_table(features_path, data::FeatureTable::from_matrix(fwd.features, labels));
  data::write_feature_table(logits_path, data::FeatureTable::from_matrix(fwd.logits, labels));
  fmt::print("{} rows\n{}\n{}\n", images.count, features_path, logits_path);
  return 0;
}

// ---------------------------------------------------------------------------------------

struct FitArgs {
  std::string method;
  std::string features;
  std::string logits;
  std::string labels;
  std::vector<int> known;
  std::string checkpoint;
  std::string images;
  std::string out;
  bool tune_noise = false;
  std::size_t noise_count = 500;
  double calibration_fraction = 0.1;
  double tpr = 0.95;
  std::uint64_t seed = 1;
  std::optional<double> temperature, epsilon, nu, gamma;
  std::optional<int> tail_size, alpha;
};

int run_fit(const FitArgs& a) {
  const auto method = detect::parse_method(a.method);
  const auto req = detect::requirements(method);
  if (req.network && a.checkpoint.empty()) throw ConfigError(fmt::format("{} requires --checkpoint", a.method));
  if (method == detect::Method::kOdin && a.images.empty()) throw ConfigError("odin requires --images");
  if (a.tune_noise && a.checkpoint.empty()) throw ConfigError("--tune-noise requires --checkpoint");
  if (req.features && a.features.empty()) throw ConfigError(fmt::format("{} requires --features", a.method));
  if (req.logits && a.logits.empty()) throw ConfigError(fmt::format("{} requires --logits", a.method));
  if (req.labels && a.labels.empty()) throw ConfigError(fmt::format("{} requires --labels", a.method));

  std::optional<net::Network> model;
  if (!a.checkpoint.empty()) model = net::load_checkpoint(a.checkpoint);
  auto features = read_table(a.features);
  auto logits = read_table(a.logits);
  std::optional<Images> images;
  if (!a.images.empty()) images = load_network_input(*model, a.images);
  std::optional<std::vector<int>> labels;
  if (!a.labels.empty()) labels = remap_labels(read_labels(a.labels), a.known);

  std::optional<std::size_t> n;
  auto align = [&](std::size_t rows, const char* what) {
    if (n && *n != rows) throw ShapeError(fmt::format("{} has {} rows, expected {}", what, rows, *n));
    n = rows;
  };
  if (features.matrix) align(static_cast<std::size_t>(features.matrix->rows()), "--features");
  if (logits.matrix) align(static_cast<std::size_t>(logits.matrix->rows()), "--logits");
  if (images) align(images->count, "--images");
  if (labels) align(labels->size(), "--labels");
  if (!n) throw ConfigError("no input activations given");
  if (images && !logits.matrix) logits.matrix = net::forward(*model, *images).logits;

  // Held-out calibration rows; stratified when labels are known.
  std::vector<int> strata = labels ? *labels : std::vector<int>(*n, 0);
  const std::vector<double> fractions{1.0 - a.calibration_fraction, a.calibration_fraction};
  if (!(a.calibration_fraction > 0.0 && a.calibration_fraction < 1.0)) {
    throw ConfigError("--calibration-fraction must lie in (0, 1)");
  }
  const auto parts = data::stratified_partition(strata, fractions, derive_seed(a.seed, "calibration"));

  struct Side {
    std::optional<RowMatrix> features, logits;
    std::optional<Images> images;
    std::optional<std::vector<int>> labels;
    detect::LabeledBatch labeled() const {
      return {{features ? &*features : nullptr, logits ? &*logits : nullptr, images ? &*images : nullptr},
              labels ? &*labels : nullptr};
    }
  };
  auto side = [&](const std::vector<std::size_t>& rows) {
    Side s;
    if (features.matrix) s.features = rows_of(*features.matrix, rows);
    if (logits.matrix) s.logits = rows_of(*logits.matrix, rows);
    if (images) s.images = data::subset(*images, rows);
    if (labels) {
      s.labels.emplace();
      for (auto r : rows) s.labels->push_back((*labels)[r]);
    }
    return s;
  };
  const Side train = side(parts[0]);
  const Side calibration = side(parts[1]);

  detect::DetectorOptions options;
  options.tpr = a.tpr;
  if (a.temperature) options.odin.temperature = *a.temperature;
  if (a.epsilon) options.odin.epsilon = *a.epsilon;
  if (a.tail_size) options.openmax.tail_size = *a.tail_size;
  if (a.alpha) options.openmax.alpha = *a.alpha;
  if (a.nu) options.ocsvm.nu = *a.nu;
  if (a.gamma) options.ocsvm.gamma = *a.gamma;

  std::unique_ptr<detect::Detector> detector;
  if (a.tune_noise) {
    const auto noise = pipeline::probe(*model, data::gaussian_noise_batch(a.noise_count, model->architecture().input,
                                                                          derive_seed(a.seed, "tune-noise")));
    detect::ActivationBatch noise_batch{features.matrix ? &noise.features : nullptr, &noise.logits,
                                        images ? &noise.images : nullptr};
    detect::TuningLog tuning;
    detector = detect::fit_detector_tuned(method, train.labeled(), calibration.labeled(), noise_batch,
                                          model ? &*model : nullptr, options, &tuning);
    for (const auto& [setting, auroc] : tuning.grid) log_line(fmt::format("  {:<28} noise AUROC {:.4f}", setting, auroc));
    log_line(fmt::format("  selected {}", tuning.best));
  } else {
    detector = detect::fit_detector(method, train.labeled(), calibration.labeled(), model ? &*model : nullptr, options);
  }
  const std::string out = a.out.empty() ? a.method + ".det" : a.out;
  detector->save(out);
  fmt::print("{}\nthreshold {:.6g}\nbundle {}\n", detector->describe(), detector->threshold(), out);
  return 0;
}

// ---------------------------------------------------------------------------------------

struct EvaluateArgs {
  std::string config;
  std::string detectors;
  std::string checkpoint;
  std::vector<std::string> tiers;
  int runs = 5;
  std::uint64_t seed = 1;
  std::string out;
  std::string label;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto cfg = config::load_config(a.config);
  const fs::path dir(a.detectors);
  if (!fs::is_directory(dir)) throw DataError(fmt::format("detector directory '{}' not found", a.detectors));
  const auto model = net::load_checkpoint(a.checkpoint.empty() ? dir / "network.oskn" : fs::path(a.checkpoint));

  std::vector<std::pair<detect::Method, std::unique_ptr<detect::Detector>>> detectors;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".det") continue;
    auto d = detect::load_detector(entry.path());
    const auto m = d->method();
    detectors.emplace_back(m, std::move(d));
  }
  if (detectors.empty()) throw DataError(fmt::format("no .det bundles in '{}'", a.detectors));
  const auto& order = detect::all_methods();
  auto rank = [&](detect::Method m) { return std::find(order.begin(), order.end(), m) - order.begin(); };
  std::sort(detectors.begin(), detectors.end(), [&](const auto& x, const auto& y) { return rank(x.first) < rank(y.first); });

  std::vector<data::Tier> tiers;
  for (const auto& t : a.tiers) {
    if (t == "all") {
      tiers = {data::Tier::kNoise, data::Tier::kInter, data::Tier::kIntra};
      break;
    }
    const auto tier = data::parse_tier(t);
    if (!tier) throw ConfigError(fmt::format("unknown tier '{}'", t));
    tiers.push_back(*tier);
  }
  if (tiers.empty()) tiers = cfg.eval.tiers;
  std::sort(tiers.begin(), tiers.end());
  tiers.erase(std::unique(tiers.begin(), tiers.end()), tiers.end());
  if (a.runs < 1) throw ConfigError("--runs must be at least 1");

  const bool need_inter = std::find(tiers.begin(), tiers.end(), data::Tier::kInter) != tiers.end();
  const auto raw = pipeline::with_stage("load data", [&] { return pipeline::load_raw_data(cfg.data, need_inter, false); });
  data::LabeledImages known = raw.test_known;
  data::standardize(known.images, model.standardization);
  Images intra = raw.intra;
  data::standardize(intra, model.standardization);
  std::optional<Images> inter = raw.inter;
  if (inter) data::standardize(*inter, model.standardization);
  const auto known_pool = pipeline::probe(model, known);

  const std::string regime = a.label.empty() ? dir.filename().string() : a.label;
  std::vector<metrics::Cell> cells;
  for (const auto& [m, d] : detectors) {
    for (const auto t : tiers) cells.push_back({regime, std::string(detect::method_name(m)), t, {}});
  }
  for (int run = 0; run < a.runs; ++run) {
    const auto seed = pipeline::run_seed(a.seed, run);
    for (std::size_t t = 0; t < tiers.size(); ++t) {
      const auto tier = tiers[t];
      const auto pool = pipeline::with_stage(fmt::format("evaluate {}", data::tier_name(tier)), [&] {
        return pipeline::tier_pool(tier, model, intra, inter, cfg.eval.n_each, seed);
      });
      const auto draw = data::draw_eval_indices(known_pool.labels, pool.rows(), cfg.eval.n_each,
                                                derive_seed(seed, "draw", static_cast<std::uint64_t>(tier)));
      const auto in = pipeline::take_rows(known_pool, draw.in_indices);
      const auto out = pipeline::take_rows(pool, draw.out_indices);
      for (std::size_t m = 0; m < detectors.size(); ++m) {
        cells[m * tiers.size() + t].runs.push_back(pipeline::evaluate_detector(*detectors[m].second, in, out));
      }
    }
  }
  auto report = metrics::aggregate_report(cells, cfg.eval.alpha);
  report.header = fmt::format("{} run(s) of one trained network; runs vary the evaluation draw; root seed {}; {} samples per side",
                              a.runs, a.seed, cfg.eval.n_each);
  const fs::path out = a.out.empty() ? dir / "eval" : fs::path(a.out);
  fs::create_directories(out);
  pipeline::write_text(out / "report.txt", metrics::render_text(report));
  pipeline::write_text(out / "report.csv", metrics::render_csv(report));
  pipeline::write_text(out / "runs.csv", metrics::render_runs_csv(cells));
  pipeline::write_text(out / "pairwise.csv", metrics::render_pairwise_csv(report));
  fmt::print("{}", metrics::render_text(report));
  return 0;
}

// ---------------------------------------------------------------------------------------

struct PlotArgs {
  std::string kind;
  std::string checkpoint;
  std::vector<std::string> detectors;
  std::string features;
  std::string outliers;
  std::string in_features, in_logits, out_features, out_logits;
  double extent = 3.0;
  int resolution = 100;
  std::string title;
  std::string out;
};

int run_plot(const PlotArgs& a) {
  if (a.out.empty()) throw ConfigError("plot requires --out");
  if (a.kind == "boundary") {
    if (a.checkpoint.empty() || a.detectors.size() != 1 || a.features.empty()) {
      throw ConfigError("boundary plots need --checkpoint, one --detector and --features");
    }
    const auto model = net::load_checkpoint(a.checkpoint);
    const auto detector = detect::load_detector(a.detectors.front());
    const auto features = data::read_feature_table(a.features).to_matrix();
    const auto grid = plots::evaluate_grid(model, *detector, plots::feature_extent(features, a.extent), a.resolution,
                                           detector->threshold());
    const std::string note =
        detector->method() == detect::Method::kOdin ? "ODIN drawn with temperature scaling only" : std::string();
    pipeline::write_text(a.out, plots::render_boundary_grid(
                                    grid, a.title.empty() ? std::string(detect::method_name(detector->method())) : a.title,
                                    note));
    fmt::print("border accepted: {}\n", grid.border_accepted() ? "yes" : "no");
  } else if (a.kind == "scatter") {
    if (a.features.empty()) throw ConfigError("scatter plots need --features");
    const auto in = data::read_feature_table(a.features);
    if (!in.labels) throw ConfigError("scatter --features table needs labels");
    std::optional<RowMatrix> out;
    if (!a.outliers.empty()) out = data::read_feature_table(a.outliers).to_matrix();
    pipeline::write_text(a.out, plots::render_scatter(in.to_matrix(), *in.labels, out ? &*out : nullptr,
                                                      a.title.empty() ? "features" : a.title));
  } else if (a.kind == "roc" || a.kind == "osc") {
    if (a.detectors.empty() || a.in_logits.empty() || a.out_logits.empty()) {
      throw ConfigError("curve plots need --detector, --in-logits and --out-logits");
    }
    auto in_f = read_table(a.in_features);
    auto in_l = read_table(a.in_logits);
    auto out_f = read_table(a.out_features);
    auto out_l = read_table(a.out_logits);
    const detect::ActivationBatch in{in_f.matrix ? &*in_f.matrix : nullptr, &*in_l.matrix, nullptr};
    const detect::ActivationBatch out{out_f.matrix ? &*out_f.matrix : nullptr, &*out_l.matrix, nullptr};
    std::vector<plots::NamedCurve> curves;
    for (const auto& path : a.detectors) {
      const auto d = detect::load_detector(path);
      const std::string name(detect::method_name(d->method()));
      const auto si = d->scores(in);
      const auto so = d->scores(out);
      if (a.kind == "roc") {
        const auto c = metrics::roc_curve(si, so);
        curves.push_back({name, c.points, c.auroc});
      } else {
        if (!in_l.labels) throw ConfigError("osc plots need labels in the --in-logits table");
        const auto c = metrics::osc_curve(si, d->closed_set_labels(in), *in_l.labels, so);
        curves.push_back({name, c.points, c.auosc});
      }
    }
    const bool roc = a.kind == "roc";
    pipeline::write_text(a.out, plots::render_curves(curves, a.title.empty() ? a.kind : a.title,
                                                     roc ? "true positive rate" : "correct classification rate",
                                                     roc ? "AUROC" : "AUOSC"));
  } else {
    throw ConfigError(fmt::format("unknown plot kind '{}'", a.kind));
  }
  fmt::print("{}\n", a.out);
  return 0;
}

// ---------------------------------------------------------------------------------------

struct ReproduceArgs {
  std::string config = "configs/desk.ini";
  std::string out = "mnist-artifacts";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
};

int run_reproduce(const ReproduceArgs& a) {
  auto cfg = config::load_config(a.config);
  if (a.seed) cfg.eval.seed = *a.seed;
  if (a.runs) cfg.eval.runs = *a.runs;
  if (cfg.eval.runs < 1) throw ConfigError("--runs must be at least 1");
  const auto result = pipeline::reproduce_mnist(cfg, a.out, log_line);
  fmt::print("{}", metrics::render_text(result.report));
  fmt::print("total {:.1f}s\n", result.seconds);
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const DataError*>(&e) != nullptr || dynamic_cast<const ShapeError*>(&e) != nullptr ||
      dynamic_cast<const InvalidLabelError*>(&e) != nullptr) {
    return 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oskit: open-set and out-of-distribution detection toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a network from a config file");
  train->add_option("--config", train_args.config, "config file")->required();
  train->add_option("--out", train_args.out, "checkpoint path");
  train->add_option("--log", train_args.log, "per-epoch CSV log (default <out>.log.csv)");
  train->add_option("--seed", train_args.seed, "seed for the split and initialization");
  train->add_option("--regime", train_args.regime, "override [train] regime");

  ExtractArgs extract_args;
  auto* extract = app.add_subcommand("extract", "write penultimate features and logits for an IDX image file");
  extract->add_option("--checkpoint", extract_args.checkpoint)->required();
  extract->add_option("--data,--images", extract_args.images, "IDX image file")->required();
  extract->add_option("--labels", extract_args.labels, "IDX label file stored alongside the rows");
  extract->add_option("--known", extract_args.known, "known classes; labels are remapped, others become -1")
      ->delimiter(',');
  extract->add_option("--out", extract_args.out, "output prefix")->required();

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit-detector", "fit and calibrate one detector");
  fit->add_option("--method", fit_args.method)->required();
  fit->add_option("--features", fit_args.features, "features table");
  fit->add_option("--logits", fit_args.logits, "logits table");
  fit->add_option("--labels", fit_args.labels, "labels (OODF table with labels or IDX label file)");
  fit->add_option("--known", fit_args.known, "known classes for remapping IDX labels")->delimiter(',');
  fit->add_option("--checkpoint", fit_args.checkpoint, "network checkpoint (odin, --tune-noise)");
  fit->add_option("--images", fit_args.images, "IDX images row-aligned with the tables (odin)");
  fit->add_flag("--tune-noise", fit_args.tune_noise, "grid-tune hyperparameters against Gaussian noise");
  fit->add_option("--noise-count", fit_args.noise_count);
  fit->add_option("--calibration-fraction", fit_args.calibration_fraction);
  fit->add_option("--tpr", fit_args.tpr);
  fit->add_option("--seed", fit_args.seed);
  fit->add_option("--temperature", fit_args.temperature);
  fit->add_option("--epsilon", fit_args.epsilon);
  fit->add_option("--tail-size", fit_args.tail_size);
  fit->add_option("--alpha", fit_args.alpha);
  fit->add_option("--nu", fit_args.nu);
  fit->add_option("--gamma", fit_args.gamma);
  fit->add_option("--out", fit_args.out, "bundle path (default <method>.det)");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "score detector bundles on the evaluation tiers");
  evaluate->add_option("--config", eval_args.config, "config file (data paths, draw size)")->required();
  evaluate->add_option("--detectors", eval_args.detectors, "directory with network.oskn and *.det")->required();
  evaluate->add_option("--checkpoint", eval_args.checkpoint);
  evaluate->add_option("--eval-tier", eval_args.tiers, "noise, inter, intra or all (repeatable)");
  evaluate->add_option("--runs", eval_args.runs);
  evaluate->add_option("--seed", eval_args.seed);
  evaluate->add_option("--out", eval_args.out);
  evaluate->add_option("--label", eval_args.label, "row label (default: directory name)");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "render SVG figures");
  plot->add_option("--kind", plot_args.kind)->required()->check(CLI::IsMember({"boundary", "scatter", "roc", "osc"}));
  plot->add_option("--checkpoint", plot_args.checkpoint);
  plot->add_option("--detector", plot_args.detectors, "detector bundle (repeatable for curves)");
  plot->add_option("--features", plot_args.features, "features table (boundary extent, scatter)");
  plot->add_option("--outliers", plot_args.outliers, "outlier features table (scatter)");
  plot->add_option("--in-features", plot_args.in_features);
  plot->add_option("--in-logits", plot_args.in_logits);
  plot->add_option("--out-features", plot_args.out_features);
  plot->add_option("--out-logits", plot_args.out_logits);
  plot->add_option("--extent", plot_args.extent);
  plot->add_option("--resolution", plot_args.resolution);
  plot->add_option("--title", plot_args.title);
  plot->add_option("--out", plot_args.out)->required();

  ReproduceArgs repro_args;
  auto* repro = app.add_subcommand("reproduce-mnist", "train all regimes, fit all detectors, evaluate all tiers");
  repro->add_option("--config", repro_args.config);
  repro->add_option("--out", repro_args.out);
  repro->add_option("--seed", repro_args.seed);
  repro->add_option("--runs", repro_args.runs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(train_args);
    if (*extract) return run_extract(extract_args);
    if (*fit) return run_fit(fit_args);
    if (*evaluate) return run_evaluate(eval_args);
    if (*plot) return run_plot(plot_args);
    if (*repro) return run_reproduce(repro_args);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return exit_code(e);
  }
  return 1;
}
