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
#include "oskit/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "oskit/error.hpp"
#include "oskit/seed.hpp"

namespace oskit::data {

namespace {

class GzFile {
 public:
  explicit GzFile(const std::filesystem::path& path) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), "rb");
    if (file_ == nullptr) throw DataError(fmt::format("cannot open '{}'", path_));
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
  ~GzFile() { gzclose(file_); }

  void read(void* dst, std::size_t bytes) {
    auto* out = static_cast<unsigned char*>(dst);
    while (bytes > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
      const int got = gzread(file_, out, chunk);
      if (got <= 0) throw FormatError(fmt::format("'{}' is truncated", path_));
      out += got;
      bytes -= static_cast<std::size_t>(got);
    }
  }

  std::uint32_t read_be32() {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

constexpr char kTableMagic[4] = {'O', 'O', 'D', 'F'};
constexpr std::uint32_t kTableVersion = 1;
constexpr std::uint32_t kMatrixVersion = 2;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated feature table");
  return v;
}

struct TableHeader {
  std::uint32_t version = 0;
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  bool has_labels = false;
};

TableHeader read_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated feature table");
  if (std::memcmp(magic, kTableMagic, 4) != 0) throw FormatError("not a feature table (bad magic)");
  TableHeader h;
  h.version = get<std::uint32_t>(in);
  h.rows = get<std::uint32_t>(in);
  h.dim = get<std::uint32_t>(in);
  const auto flag = get<std::uint8_t>(in);
  if (flag > 1) throw FormatError("bad label flag in feature table");
  h.has_labels = flag == 1;
  if (h.dim == 0) throw FormatError("feature table has zero columns");
  return h;
}

void write_header(std::ostream& out, std::uint32_t version, std::size_t rows, std::size_t dim, bool labels) {
  if (rows > UINT32_MAX || dim > UINT32_MAX) throw DataError("feature table too large");
  out.write(kTableMagic, 4);
  put<std::uint32_t>(out, version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  put<std::uint8_t>(out, labels ? 1 : 0);
}

}  // namespace

Images load_idx_images(const std::filesystem::path& path) {
  GzFile file(path);
  if (file.read_be32() != 0x00000803) throw FormatError(fmt::format("'{}' is not an IDX image file", path.string()));
  const std::uint32_t n = file.read_be32();
  const std::uint32_t h = file.read_be32();
  const std::uint32_t w = file.read_be32();
  if (n == 0 || h == 0 || w == 0) throw DataError(fmt::format("'{}' holds no images", path.string()));
  Images out;
  out.shape = Shape{1, static_cast<int>(h), static_cast<int>(w)};
  out.count = n;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  file.read(pixels.data(), pixels.size());
  out.values.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out.values[i] = pixels[i] / 255.0;
  return out;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  GzFile file(path);
  if (file.read_be32() != 0x00000801) throw FormatError(fmt::format("'{}' is not an IDX label file", path.string()));
  const std::uint32_t n = file.read_be32();
  std::vector<unsigned char> raw(n);
  file.read(raw.data(), n);
  return {raw.begin(), raw.end()};
}

LabeledImages load_idx_raw(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  LabeledImages out;
  out.labels = load_idx_labels(labels_path);
  out.images = load_idx_images(images_path);
  if (out.labels.size() != out.images.count) {
    throw DataError(fmt::format("count mismatch: {} images but {} labels", out.images.count, out.labels.size()));
  }
  return out;
}

LabeledImages load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const Standardization& standardization) {
  auto out = load_idx_raw(images_path, labels_path);
  standardize(out.images, standardization);
  return out;
}

Standardization compute_standardization(const Images& images) {
  if (images.values.empty()) throw DataError("cannot standardize an empty image set");
  double mean = 0.0;
  for (double v : images.values) mean += v;
  mean /= static_cast<double>(images.values.size());
  double var = 0.0;
  for (double v : images.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(images.values.size());
  return Standardization{mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

void standardize(Images& images, const Standardization& standardization) {
  if (!(standardization.stddev > 0.0)) throw DataError("standardization stddev must be positive");
  for (double& v : images.values) {
    v = (v - standardization.mean) / standardization.stddev;
    if (!std::isfinite(v)) throw NumericError("non-finite pixel after standardization");
  }
}

Images gaussian_noise_batch(std::size_t n, Shape shape, std::uint64_t seed) {
  if (n == 0) throw DataError("noise batch needs n >= 1");
  if (shape.size() == 0) throw ShapeError("noise batch shape is empty");
  Images out;
  out.shape = shape;
  out.count = n;
  out.values.resize(n * shape.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.values) v = normal(rng);
  return out;
}

Images subset(const Images& source, std::span<const std::size_t> indices) {
  Images out;
  out.shape = source.shape;
  out.count = indices.size();
  out.values.reserve(indices.size() * source.shape.size());
  for (std::size_t i : indices) {
    if (i >= source.count) throw DataError(fmt::format("row {} out of range ({} images)", i, source.count));
    const auto s = source.sample(i);
    out.values.insert(out.values.end(), s.begin(), s.end());
  }
  return out;
}

LabeledImages subset(const LabeledImages& source, std::span<const std::size_t> indices) {
  LabeledImages out;
  out.images = subset(source.images, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(source.labels[i]);
  return out;
}

OpenSetSplit split_open_set(const LabeledImages& data, std::span<const int> known_classes) {
  if (known_classes.empty()) throw DataError("known class set is empty");
  std::map<int, int> remap;
  for (int c : known_classes) {
    if (c < 0) throw InvalidLabelError(fmt::format("known class {} is negative", c));
    if (!remap.emplace(c, static_cast<int>(remap.size())).second) {
      throw DataError(fmt::format("known class {} listed twice", c));
    }
  }
  OpenSetSplit out;
  out.known_classes.assign(known_classes.begin(), known_classes.end());
  for (std::size_t i = 0; i < data.size(); ++i) {
    (remap.contains(data.labels[i]) ? out.known_indices : out.unknown_indices).push_back(i);
  }
  out.known = subset(data, out.known_indices);
  for (int& y : out.known.labels) y = remap.at(y);
  out.unknown = subset(data, out.unknown_indices);
  return out;
}

std::vector<std::vector<std::size_t>> stratified_partition(std::span<const int> labels,
                                                           std::span<const double> fractions,
                                                           std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("no partition fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("partition fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("partition fractions must sum to 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> parts(fractions.size());
  for (auto& [label, rows] : by_class) {
    std::mt19937_64 rng(derive_seed(seed, "partition", static_cast<std::uint64_t>(label + 1)));
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t start = 0;
    double cumulative = 0.0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
      cumulative += fractions[p];
      const std::size_t stop = p + 1 == fractions.size()
                                   ? rows.size()
                                   : std::min(rows.size(), static_cast<std::size_t>(std::llround(cumulative * rows.size())));
      parts[p].insert(parts[p].end(), rows.begin() + static_cast<std::ptrdiff_t>(start),
                      rows.begin() + static_cast<std::ptrdiff_t>(std::max(start, stop)));
      start = std::max(start, stop);
    }
  }
  for (auto& part : parts) std::sort(part.begin(), part.end());
  return parts;
}

RowMatrix FeatureTable::to_matrix() const {
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
  return m;
}

FeatureTable FeatureTable::from_matrix(const RowMatrix& m, std::optional<std::vector<int>> labels) {
  if (labels && labels->size() != static_cast<std::size_t>(m.rows())) {
    throw ShapeError("label count does not match matrix rows");
  }
  FeatureTable t;
  t.rows = static_cast<std::size_t>(m.rows());
  t.dim = static_cast<std::size_t>(m.cols());
  t.values.resize(t.rows * t.dim);
  for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<float>(m.data()[i]);
  t.labels = std::move(labels);
  return t;
}

void write_feature_table(std::ostream& out, const FeatureTable& table) {
  if (table.dim == 0) throw DataError("feature table with d = 0 cannot be written");
  if (table.values.size() != table.rows * table.dim) throw ShapeError("feature table storage size mismatch");
  if (table.labels && table.labels->size() != table.rows) throw ShapeError("feature table label count mismatch");
  for (float v : table.values) {
    if (!std::isfinite(v)) throw NumericError("feature table contains NaN or Inf");
  }
  write_header(out, kTableVersion, table.rows, table.dim, table.labels.has_value());
  out.write(reinterpret_cast<const char*>(table.values.data()),
            static_cast<std::streamsize>(table.values.size() * sizeof(float)));
  if (table.labels) {
    for (int y : *table.labels) put<std::int32_t>(out, y);
  }
  if (!out) throw DataError("failed to write feature table");
}

FeatureTable read_feature_table(std::istream& in) {
  const auto h = read_header(in);
  if (h.version != kTableVersion) throw FormatError(fmt::format("unsupported feature table version {}", h.version));
  FeatureTable t;
  t.rows = h.rows;
  t.dim = h.dim;
  t.values.resize(t.rows * t.dim);
  if (!in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)))) {
    throw FormatError("truncated feature table");
  }
  for (float v : t.values) {
    if (!std::isfinite(v)) throw FormatError("feature table contains NaN or Inf");
  }
  if (h.has_labels) {
    std::vector<int> labels(t.rows);
    for (int& y : labels) y = get<std::int32_t>(in);
    t.labels = std::move(labels);
  }
  return t;
}

void write_feature_table(const std::filesystem::path& path, const FeatureTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  write_feature_table(out, table);
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return read_feature_table(in);
}

void write_matrix_block(std::ostream& out, const RowMatrix& m) {
  if (m.cols() == 0) throw DataError("matrix block with zero columns");
  write_header(out, kMatrixVersion, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), false);
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

RowMatrix read_matrix_block(std::istream& in) {
  const auto h = read_header(in);
  if (h.version != kMatrixVersion || h.has_labels) throw FormatError("bad matrix block header");
  RowMatrix m(h.rows, h.dim);
  if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw FormatError("truncated matrix block");
  }
  return m;
}

std::string_view tier_name(Tier tier) {
  switch (tier) {
    case Tier::kNoise:
      return "noise";
    case Tier::kInter:
      return "inter";
    case Tier::kIntra:
      return "intra";
  }
  return "unknown";
}

std::optional<Tier> parse_tier(std::string_view name) {
  if (name == "noise") return Tier::kNoise;
  if (name == "inter") return Tier::kInter;
  if (name == "intra") return Tier::kIntra;
  return std::nullopt;
}

EvalDraw draw_eval_indices(std::span<const int> in_labels, std::size_t out_pool_size, std::size_t n_each,
                           std::uint64_t seed) {
  if (n_each == 0) throw ConfigError("n_each must be >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < in_labels.size(); ++i) by_class[in_labels[i]].push_back(i);
  if (by_class.empty()) throw DataError("in-distribution pool is empty");
  const std::size_t classes = by_class.size();
  EvalDraw draw;
  std::size_t k = 0;
  for (auto& [label, rows] : by_class) {
    const std::size_t want = n_each / classes + (k < n_each % classes ? 1 : 0);
    if (want > rows.size()) {
      throw DataError(fmt::format("insufficient pool: class {} has {} rows, {} requested", label, rows.size(), want));
    }
    std::mt19937_64 rng(derive_seed(seed, "eval-in", static_cast<std::uint64_t>(label + 1)));
    std::shuffle(rows.begin(), rows.end(), rng);
    draw.in_indices.insert(draw.in_indices.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(want));
    ++k;
  }
  if (n_each > out_pool_size) {
    throw DataError(fmt::format("insufficient pool: {} outliers available, {} requested", out_pool_size, n_each));
  }
  std::vector<std::size_t> out_rows(out_pool_size);
  std::iota(out_rows.begin(), out_rows.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, "eval-out"));
  std::shuffle(out_rows.begin(), out_rows.end(), rng);
  draw.out_indices.assign(out_rows.begin(), out_rows.begin() + static_cast<std::ptrdiff_t>(n_each));
  std::sort(draw.in_indices.begin(), draw.in_indices.end());
  std::sort(draw.out_indices.begin(), draw.out_indices.end());
  return draw;
}

namespace {

FeatureTable take_rows(const FeatureTable& t, std::span<const std::size_t> rows, bool keep_labels) {
  FeatureTable out;
  out.rows = rows.size();
  out.dim = t.dim;
  out.values.reserve(rows.size() * t.dim);
  std::vector<int> labels;
  for (std::size_t r : rows) {
    out.values.insert(out.values.end(), t.values.begin() + static_cast<std::ptrdiff_t>(r * t.dim),
                      t.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.dim));
    if (keep_labels && t.labels) labels.push_back((*t.labels)[r]);
  }
  if (keep_labels && t.labels) out.labels = std::move(labels);
  return out;
}

}  // namespace

EvalSet build_eval_set(const FeatureTable& in_pool, const FeatureTable& out_pool, std::size_t n_each,
                       std::uint64_t seed, Tier tier) {
  if (!in_pool.labels) throw DataError("in-distribution pool needs closed-set labels");
  if (in_pool.dim != out_pool.dim) {
    throw ShapeError(fmt::format("in pool has {} columns, out pool {}", in_pool.dim, out_pool.dim));
  }
  for (int y : *in_pool.labels) {
    if (y < 0) throw InvalidLabelError("in-distribution pool contains a negative label");
  }
  auto draw = draw_eval_indices(*in_pool.labels, out_pool.rows, n_each, seed);
  EvalSet set;
  set.tier = tier;
  set.in_features = take_rows(in_pool, draw.in_indices, true);
  set.out_features = take_rows(out_pool, draw.out_indices, false);
  set.in_indices = std::move(draw.in_indices);
  set.out_indices = std::move(draw.out_indices);
  return set;
}

}  // namespace oskit::data
