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

#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "oskit/datasets.hpp"
#include "oskit/error.hpp"

using namespace oskit;
using namespace oskit::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const auto dir = fs::temp_directory_path() / "oskit-test-datasets";
  fs::create_directories(dir);
  return dir;
}

std::map<int, std::size_t> histogram(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::map<int, std::size_t> h;
  for (auto r : rows) ++h[labels[r]];
  return h;
}

}  // namespace

TEST_CASE("IDX loading scales pixels and reads labels") {
  const auto dir = temp_dir();
  oracle::write_idx_images(dir / "img", 2, 2, 3, {0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 255});
  oracle::write_idx_labels(dir / "lab", {3, 7});
  const auto d = load_idx_raw(dir / "img", dir / "lab");
  CHECK(d.size() == 2);
  CHECK(d.images.shape == Shape{1, 2, 3});
  CHECK(d.images.values[1] == doctest::Approx(0.2));
  CHECK(d.images.values[5] == 1.0);
  CHECK(d.labels == std::vector<int>{3, 7});

  const auto st = Standardization{0.5, 0.25};
  const auto s = load_idx(dir / "img", dir / "lab", st);
  CHECK(s.images.values[0] == doctest::Approx(-2.0));
  CHECK(s.images.values[5] == doctest::Approx(2.0));
}

TEST_CASE("IDX loading reads gzip files") {
  const auto dir = temp_dir();
  oracle::write_idx_labels(dir / "plain-labels", {1, 2, 3});
  std::ifstream in(dir / "plain-labels", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  gzFile gz = gzopen((dir / "labels.gz").string().c_str(), "wb");
  gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(gz);
  CHECK(load_idx_labels(dir / "labels.gz") == std::vector<int>{1, 2, 3});
}

TEST_CASE("IDX loading errors") {
  const auto dir = temp_dir();
  { std::ofstream(dir / "empty", std::ios::binary); }
  oracle::write_idx_images(dir / "img", 3, 2, 2, std::vector<unsigned char>(12, 9));
  oracle::write_idx_labels(dir / "lab2", {1, 2});
  CHECK_THROWS_AS(load_idx_raw(dir / "empty", dir / "lab2"), FormatError);
  CHECK_THROWS_AS(load_idx_raw(dir / "img", dir / "lab2"), DataError);
  CHECK_THROWS_AS(load_idx_raw(dir / "lab2", dir / "lab2"), FormatError);
  CHECK_THROWS_AS(load_idx_raw(dir / "missing", dir / "lab2"), DataError);
  oracle::write_idx_images(dir / "short", 3, 2, 2, std::vector<unsigned char>(7, 9));
  CHECK_THROWS_AS(load_idx_images(dir / "short"), FormatError);
}

TEST_CASE("MNIST training file header") {
  const fs::path root = fs::path(OSKIT_SOURCE_DIR) / "data";
  const auto images = root / "mnist-train-images-idx3-ubyte.gz";
  const auto labels = root / "mnist-train-labels-idx1-ubyte.gz";
  if (!fs::exists(images) || !fs::exists(labels)) {
    MESSAGE("MNIST files not prepared; skipping");
    return;
  }
  const auto d = load_idx_raw(images, labels);
  CHECK(d.size() == 60000);
  CHECK(d.images.shape == Shape{1, 28, 28});
  CHECK(std::set<int>(d.labels.begin(), d.labels.end()).size() == 10);
}

TEST_CASE("gaussian noise batches") {
  const Shape shape{1, 28, 28};
  const auto a = gaussian_noise_batch(10000, shape, 3);
  const auto b = gaussian_noise_batch(10000, shape, 3);
  const auto c = gaussian_noise_batch(10000, shape, 4);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  double sum = 0.0;
  for (double v : a.values) sum += v;
  const double mean = sum / static_cast<double>(a.values.size());
  double sq = 0.0;
  for (double v : a.values) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(a.values.size() - 1);
  CHECK(mean > -0.01);
  CHECK(mean < 0.01);
  CHECK(var > 0.98);
  CHECK(var < 1.02);
  CHECK(std::all_of(a.values.begin(), a.values.end(), [](double v) { return std::isfinite(v); }));
  CHECK_THROWS_AS(gaussian_noise_batch(0, shape, 1), DataError);
}

TEST_CASE("open-set split") {
  LabeledImages d;
  d.images = gaussian_noise_batch(50, Shape{1, 2, 2}, 1);
  for (int i = 0; i < 50; ++i) d.labels.push_back(i % 10);

  SUBCASE("known 0..4") {
    const std::vector<int> known{0, 1, 2, 3, 4};
    const auto s = split_open_set(d, known);
    CHECK(std::set<int>(s.known.labels.begin(), s.known.labels.end()) == std::set<int>{0, 1, 2, 3, 4});
    for (int y : s.unknown.labels) CHECK(y >= 5);
    std::set<std::size_t> all(s.known_indices.begin(), s.known_indices.end());
    for (auto i : s.unknown_indices) CHECK(all.insert(i).second);
    CHECK(all.size() == 50);
    for (std::size_t r = 0; r < s.known_indices.size(); ++r) {
      CHECK(s.known_classes[static_cast<std::size_t>(s.known.labels[r])] == d.labels[s.known_indices[r]]);
    }
  }
  SUBCASE("remap follows the known-class order") {
    const std::vector<int> known{7, 2};
    const auto s = split_open_set(d, known);
    for (std::size_t r = 0; r < s.known_indices.size(); ++r) {
      CHECK(s.known.labels[r] == (d.labels[s.known_indices[r]] == 7 ? 0 : 1));
    }
  }
  SUBCASE("all classes known") {
    std::vector<int> known(10);
    for (int i = 0; i < 10; ++i) known[static_cast<std::size_t>(i)] = i;
    CHECK(split_open_set(d, known).unknown.size() == 0);
  }
  SUBCASE("absent class keeps its slot") {
    const std::vector<int> known{0, 11, 1};
    const auto s = split_open_set(d, known);
    CHECK(s.known_classes == known);
    for (int y : s.known.labels) CHECK(y != 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(split_open_set(d, std::vector<int>{}), DataError);
    CHECK_THROWS_AS(split_open_set(d, std::vector<int>{1, 1}), DataError);
  }
}

TEST_CASE("stratified partition") {
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) labels.push_back(i % 3);
  const std::vector<double> fractions{0.7, 0.2, 0.1};
  const auto parts = stratified_partition(labels, fractions, 5);
  CHECK(parts == stratified_partition(labels, fractions, 5));
  CHECK(parts != stratified_partition(labels, fractions, 6));
  std::set<std::size_t> seen;
  for (const auto& p : parts) {
    for (auto i : p) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == labels.size());
  CHECK(parts[0].size() == 210);
  CHECK(parts[1].size() == 60);
  for (const auto& [label, count] : histogram(labels, parts[1])) CHECK(count == 20);
  CHECK_THROWS_AS(stratified_partition(labels, std::vector<double>{0.5, 0.4}, 1), ConfigError);
}

TEST_CASE("evaluation draws") {
  std::vector<int> in_labels;
  for (int i = 0; i < 2000; ++i) in_labels.push_back(i % 5);

  SUBCASE("even split over five classes") {
    const auto d = draw_eval_indices(in_labels, 3000, 1000, 1);
    CHECK(d.in_indices.size() == 1000);
    CHECK(d.out_indices.size() == 1000);
    for (const auto& [label, count] : histogram(in_labels, d.in_indices)) CHECK(count == 200);
    CHECK(std::set<std::size_t>(d.in_indices.begin(), d.in_indices.end()).size() == 1000);
    CHECK(std::set<std::size_t>(d.out_indices.begin(), d.out_indices.end()).size() == 1000);
    for (auto o : d.out_indices) CHECK(o < 3000);
  }
  SUBCASE("uneven totals differ by at most one per class") {
    const auto d = draw_eval_indices(in_labels, 3000, 1003, 2);
    std::size_t lo = 10000, hi = 0;
    for (const auto& [label, count] : histogram(in_labels, d.in_indices)) {
      lo = std::min(lo, count);
      hi = std::max(hi, count);
    }
    CHECK(hi - lo <= 1);
  }
  SUBCASE("seeds change the indices but not the counts") {
    const auto a = draw_eval_indices(in_labels, 3000, 500, 1);
    const auto b = draw_eval_indices(in_labels, 3000, 500, 2);
    CHECK(a.in_indices != b.in_indices);
    CHECK(a.out_indices != b.out_indices);
    CHECK(histogram(in_labels, a.in_indices) == histogram(in_labels, b.in_indices));
    CHECK(a.in_indices == draw_eval_indices(in_labels, 3000, 500, 1).in_indices);
  }
  SUBCASE("insufficient pools") {
    CHECK_THROWS_AS(draw_eval_indices(in_labels, 999, 1000, 1), DataError);
    CHECK_THROWS_AS(draw_eval_indices(in_labels, 5000, 2001, 1), DataError);
  }
}

TEST_CASE("evaluation set assembly") {
  RowMatrix in(20, 2), out(30, 2);
  in.setRandom();
  out.setRandom();
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 2);
  const auto in_pool = FeatureTable::from_matrix(in, labels);
  const auto out_pool = FeatureTable::from_matrix(out);
  const auto set = build_eval_set(in_pool, out_pool, 10, 3, Tier::kIntra);
  CHECK(set.tier == Tier::kIntra);
  CHECK(set.in_features.rows == 10);
  CHECK(set.out_features.rows == 10);
  REQUIRE(set.in_features.labels.has_value());
  for (std::size_t r = 0; r < 10; ++r) {
    CHECK(set.in_features.at(r, 0) == in_pool.at(set.in_indices[r], 0));
    CHECK((*set.in_features.labels)[r] == labels[set.in_indices[r]]);
  }
}

TEST_CASE("feature table files") {
  RowMatrix m(3, 2);
  m << 1.5, -2.25, 3.0, 4.125, -0.5, 1e-3;
  const auto table = FeatureTable::from_matrix(m, std::vector<int>{0, -1, 4});
  std::stringstream buf;
  write_feature_table(buf, table);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "OODF");
  std::stringstream in(bytes);
  const auto back = read_feature_table(in);
  CHECK(back.rows == 3);
  CHECK(back.dim == 2);
  CHECK(std::memcmp(back.values.data(), table.values.data(), table.values.size() * sizeof(float)) == 0);
  CHECK(back.labels == table.labels);

  std::string bad = bytes;
  bad[1] = 'X';
  std::stringstream corrupt(bad);
  CHECK_THROWS_AS(read_feature_table(corrupt), FormatError);

  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  std::stringstream versioned(wrong_version);
  CHECK_THROWS_AS(read_feature_table(versioned), FormatError);

  std::string nan_bytes = bytes;
  const float nan = std::nanf("");
  std::memcpy(nan_bytes.data() + 17, &nan, sizeof nan);
  std::stringstream with_nan(nan_bytes);
  CHECK_THROWS_AS(read_feature_table(with_nan), FormatError);

  FeatureTable empty;
  empty.rows = 3;
  std::stringstream sink;
  CHECK_THROWS_AS(write_feature_table(sink, empty), DataError);
}

TEST_CASE("matrix blocks round-trip at full precision") {
  RowMatrix m(2, 3);
  m << 0.1, 1.0 / 3.0, -1e-300, 2.5, 7.0, std::ldexp(1.0, -40);
  std::stringstream buf;
  write_matrix_block(buf, m);
  CHECK(read_matrix_block(buf) == m);
}

TEST_CASE("standardization uses the given split") {
  Images a;
  a.shape = Shape{1, 1, 2};
  a.count = 2;
  a.values = {0.0, 1.0, 1.0, 2.0};
  const auto st = compute_standardization(a);
  CHECK(st.mean == doctest::Approx(1.0));
  CHECK(st.stddev == doctest::Approx(std::sqrt(0.5)));
  standardize(a, st);
  CHECK(a.values[0] == doctest::Approx(-std::sqrt(2.0)));
}

TEST_CASE("tier names") {
  CHECK(tier_name(Tier::kNoise) == "noise");
  CHECK(tier_name(Tier::kInter) == "inter");
  CHECK(tier_name(Tier::kIntra) == "intra");
  CHECK(parse_tier("inter") == Tier::kInter);
  CHECK_FALSE(parse_tier("bogus").has_value());
}
