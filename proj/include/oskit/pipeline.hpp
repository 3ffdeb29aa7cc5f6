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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "oskit/config.hpp"
#include "oskit/detector.hpp"
#include "oskit/error.hpp"
#include "oskit/metrics.hpp"
#include "oskit/plots.hpp"

namespace oskit::pipeline {

using Progress = std::function<void(std::string_view)>;

/// Runs \p f, prefixing any toolkit error with the stage name. The error type is kept.
template <class F>
decltype(auto) with_stage(std::string_view stage, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", stage, e.what()));
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("{}: {}", stage, e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", stage, e.what()));
  } catch (const ShapeError& e) {
    throw ShapeError(fmt::format("{}: {}", stage, e.what()));
  } catch (const InvalidLabelError& e) {
    throw InvalidLabelError(fmt::format("{}: {}", stage, e.what()));
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", stage, e.what()));
  }
}

/// Raw (unstandardized) desk datasets.
struct RawData {
  data::LabeledImages train_known;  ///< training file, known classes, labels remapped
  data::LabeledImages test_known;   ///< test file, known classes, labels remapped
  Images intra;                     ///< test file, remaining digit classes
  std::optional<Images> inter;
  std::optional<data::LabeledImages> background;
  std::vector<int> known_classes;
};

RawData load_raw_data(const config::DataConfig& cfg, bool need_inter, bool need_background);

/// One seeded split, standardized with constants from its training part.
struct DeskData {
  data::Standardization standardization;
  data::LabeledImages train;
  data::LabeledImages val;
  data::LabeledImages test_known;
  Images intra;
  std::optional<Images> inter;
  std::optional<data::LabeledImages> background;
};

DeskData prepare_split(const RawData& raw, const config::DataConfig& cfg, std::uint64_t seed);

/// Images with their network activations and optional labels, row-aligned.
struct Probe {
  Images images;
  RowMatrix features;
  RowMatrix logits;
  std::vector<int> labels;

  detect::ActivationBatch batch() const { return {&features, &logits, &images}; }
  detect::LabeledBatch labeled() const { return {batch(), labels.empty() ? nullptr : &labels}; }
  std::size_t rows() const { return images.count; }
};

Probe probe(const net::Network& net, Images images, std::vector<int> labels = {});
Probe probe(const net::Network& net, const data::LabeledImages& data);
Probe take_rows(const Probe& source, std::span<const std::size_t> rows);

/// Seed of evaluation run \p run.
std::uint64_t run_seed(std::uint64_t root, int run);

struct NamedDetector {
  detect::Method method;
  std::unique_ptr<detect::Detector> detector;
  detect::TuningLog tuning;
};

/// Fits every configured method on \p train and calibrates on \p calibration.
std::vector<NamedDetector> fit_detectors(const config::ToolkitConfig& cfg, const net::Network& net,
                                         const Probe& train, const Probe& calibration, std::uint64_t seed,
                                         const Progress& progress = {});

metrics::RunResult evaluate_detector(const detect::Detector& detector, const Probe& in, const Probe& out);

/// Outlier pool of one tier. Noise pools hold exactly \p n_each fresh draws.
Probe tier_pool(data::Tier tier, const net::Network& net, const Images& intra, const std::optional<Images>& inter,
                std::size_t n_each, std::uint64_t seed);

struct TrainingRecord {
  std::string regime;
  int run = 0;
  std::uint64_t seed = 0;
  double val_top1 = 0.0;
  double test_top1 = 0.0;
  double seconds = 0.0;
};

struct BoundaryRecord {
  std::string regime;
  std::string method;
  bool border_accepted = false;
  std::size_t accepted_cells = 0;
  std::size_t total_cells = 0;
};

struct ReproduceResult {
  std::vector<metrics::Cell> cells;
  metrics::EvalReport report;
  std::vector<TrainingRecord> training;
  std::vector<BoundaryRecord> boundaries;  ///< first run of every regime
  double seconds = 0.0;
};

/// Trains every regime for every run, fits all detectors, scores every tier and writes
/// reports, run-0 models and SVG figures under \p out.
ReproduceResult reproduce_mnist(const config::ToolkitConfig& cfg, const std::filesystem::path& out,
                                const Progress& progress = {});

std::string render_training_csv(const std::vector<TrainingRecord>& records);
std::string render_epoch_log_csv(const std::vector<net::EpochLog>& log);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace oskit::pipeline
