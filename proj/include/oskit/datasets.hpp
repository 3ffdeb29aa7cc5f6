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
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "oskit/tensor.hpp"

namespace oskit::data {

/// Label used for background / unknown samples in every label array.
inline constexpr int kBackgroundLabel = -1;

/// Pixel standardization constants, computed on an in-distribution training split.
struct Standardization {
  double mean = 0.0;
  double stddev = 1.0;
};

struct LabeledImages {
  Images images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Reads an IDX image file (plain or gzip-compressed); pixels scaled to [0, 1].
Images load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Reads an IDX image/label pair (plain or gzip-compressed). Pixels are scaled to [0, 1].
LabeledImages load_idx_raw(const std::filesystem::path& images_path,
                           const std::filesystem::path& labels_path);

/// Reads an IDX pair and standardizes pixels with \p standardization.
LabeledImages load_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path,
                       const Standardization& standardization);

Standardization compute_standardization(const Images& images);
void standardize(Images& images, const Standardization& standardization);

/// n i.i.d. standard-normal images; deterministic per seed.
Images gaussian_noise_batch(std::size_t n, Shape shape, std::uint64_t seed);

/// Copies the given rows of \p source.
LabeledImages subset(const LabeledImages& source, std::span<const std::size_t> indices);
Images subset(const Images& source, std::span<const std::size_t> indices);

struct OpenSetSplit {
  LabeledImages known;    ///< labels remapped to 0..|known|-1
  LabeledImages unknown;  ///< original labels kept
  std::vector<int> known_classes;          ///< new label i <- original known_classes[i]
  std::vector<std::size_t> known_indices;  ///< rows of the source, in order
  std::vector<std::size_t> unknown_indices;
};

/// Partitions \p data into known and unknown classes. Known classes keep a slot in the
/// remap even when no sample of that class is present.
OpenSetSplit split_open_set(const LabeledImages& data, std::span<const int> known_classes);

/// Stratified per-class partition of \p labels into consecutive parts with the given
/// fractions (the last part takes the rounding remainder). Deterministic per seed.
std::vector<std::vector<std::size_t>> stratified_partition(std::span<const int> labels,
                                                           std::span<const double> fractions,
                                                           std::uint64_t seed);

/// n x d activations with optional labels. The interchange object between the network
/// and the detectors.
struct FeatureTable {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::optional<std::vector<int>> labels;

  float at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }
  RowMatrix to_matrix() const;
  static FeatureTable from_matrix(const RowMatrix& m, std::optional<std::vector<int>> labels = {});
};

void write_feature_table(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_feature_table(const std::filesystem::path& path);
void write_feature_table(std::ostream& out, const FeatureTable& table);
FeatureTable read_feature_table(std::istream& in);

/// Full-precision variant of the table format (version 2, f64 values) used for arrays
/// embedded in detector bundles, where fitted state must round-trip exactly.
void write_matrix_block(std::ostream& out, const RowMatrix& m);
RowMatrix read_matrix_block(std::istream& in);

enum class Tier { kNoise, kInter, kIntra };
std::string_view tier_name(Tier tier);
std::optional<Tier> parse_tier(std::string_view name);

struct EvalDraw {
  std::vector<std::size_t> in_indices;
  std::vector<std::size_t> out_indices;
};

/// Draws \p n_each in-distribution rows spread evenly over the classes present in
/// \p in_labels (lower class ids take the remainder) and \p n_each outlier rows, all
/// without replacement. Index lists are returned sorted.
EvalDraw draw_eval_indices(std::span<const int> in_labels, std::size_t out_pool_size, std::size_t n_each,
                           std::uint64_t seed);

struct EvalSet {
  Tier tier = Tier::kNoise;
  FeatureTable in_features;
  FeatureTable out_features;
  std::vector<std::size_t> in_indices;
  std::vector<std::size_t> out_indices;
};

EvalSet build_eval_set(const FeatureTable& in_pool, const FeatureTable& out_pool, std::size_t n_each,
                       std::uint64_t seed, Tier tier);

}  // namespace oskit::data
