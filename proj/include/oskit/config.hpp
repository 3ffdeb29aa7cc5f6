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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oskit/datasets.hpp"
#include "oskit/detector.hpp"
#include "oskit/tensor_net.hpp"

namespace oskit::config {

/// Sectioned key=value text. '#' starts a comment; keys are unique per section.
class IniFile {
 public:
  static IniFile parse(std::string_view text, std::string origin = "<config>");
  static IniFile load(const std::filesystem::path& path);

  const std::string& origin() const { return origin_; }
  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> find(const std::string& section, const std::string& key) const;
  /// Throws ConfigError naming "[section] key" when absent.
  const std::string& require(const std::string& section, const std::string& key) const;
  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct DataConfig {
  std::filesystem::path root;
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::optional<std::filesystem::path> outlier_images;  ///< inter-dataset tier pool
  std::optional<std::filesystem::path> outlier_labels;
  std::optional<std::filesystem::path> background_images;
  std::optional<std::filesystem::path> background_labels;
  std::vector<int> known_classes;
  double train_fraction = 1.0;  ///< share of known-class training rows used at all
  double val_fraction = 0.1;    ///< share of those held out for calibration
  std::size_t background_count = 0;  ///< 0 keeps every background row

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

struct EvalConfig {
  int runs = 5;
  std::size_t n_each = 1000;
  std::uint64_t seed = 1;
  double alpha = 0.01;
  std::vector<data::Tier> tiers{data::Tier::kNoise, data::Tier::kInter, data::Tier::kIntra};
  std::vector<net::LossRegime> regimes{net::LossRegime::kCrossEntropy, net::LossRegime::kOneVsRest,
                                       net::LossRegime::kBackgroundReg};
  std::vector<detect::Method> methods;
  int grid_resolution = 100;
  double grid_extent = 3.0;
};

struct TuneConfig {
  bool enabled = true;
  std::size_t noise_count = 500;
  std::size_t ocsvm_max_train = 2000;  ///< OC-SVM fits on the first rows only
};

struct ToolkitConfig {
  DataConfig data;
  net::Architecture architecture;
  net::TrainConfig train;
  detect::DetectorOptions detector;
  TuneConfig tune;
  EvalConfig eval;
};

/// \p base_dir anchors relative paths. The data root falls back to $OSKIT_DATA_DIR, then
/// to "data" under \p base_dir. Unknown sections or keys are ConfigErrors.
ToolkitConfig parse_config(const IniFile& ini, const std::filesystem::path& base_dir);
ToolkitConfig load_config(const std::filesystem::path& path);

/// Validates that the configured regime has the data it needs.
void check_training_inputs(const ToolkitConfig& config);

}  // namespace oskit::config
