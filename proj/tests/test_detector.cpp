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

#include <random>
#include <sstream>

#include "oskit/datasets.hpp"
#include "oskit/detector.hpp"
#include "oskit/error.hpp"

using namespace oskit;
using namespace oskit::detect;

namespace {

struct Fixture {
  net::Network net;
  Images images;
  RowMatrix features;
  RowMatrix logits;
  std::vector<int> labels;

  ActivationBatch batch() const { return ActivationBatch{&features, &logits, &images}; }
  LabeledBatch labeled() const { return LabeledBatch{batch(), &labels}; }
};

// Random inputs through a small random net, labelled by the net's own prediction.
Fixture make_fixture(std::size_t n, std::uint64_t seed) {
  Fixture f;
  f.net = net::Network(net::Architecture::parse("input 1 2 2\ndense 6\nrelu\ndense 3\ndense 3\n"));
  f.net.initialize(seed);
  f.images = data::gaussian_noise_batch(n, Shape{1, 2, 2}, seed + 1);
  for (double& v : f.images.values) v *= 2.0;
  const auto out = net::forward(f.net, f.images);
  f.features = out.features;
  f.logits = out.logits;
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) f.labels.push_back(scorers::argmax(row_span(f.logits, i)));
  return f;
}

std::unique_ptr<Detector> round_trip(const Detector& d) {
  std::stringstream ss;
  d.save(ss);
  return load_detector(ss);
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK(all_methods().size() == 7);
  CHECK_THROWS_AS(parse_method("nonsense"), ConfigError);
}

TEST_CASE("every detector fits, calibrates, round-trips and follows the decision rule") {
  const auto train = make_fixture(1500, 3);
  const auto calib = make_fixture(1500, 4);
  const auto probe = make_fixture(300, 5);
  DetectorOptions options;
  options.openmax.tail_size = 10;
  options.odin = scorers::OdinParams{10.0, 0.01};
  for (Method m : all_methods()) {
    CAPTURE(method_name(m));
    const auto d = fit_detector(m, train.labeled(), calib.labeled(), &train.net, options);
    REQUIRE(d != nullptr);
    CHECK(d->method() == m);
    CHECK(std::isfinite(d->threshold()));

    const auto cal_scores = d->scores(calib.batch());
    std::size_t kept = 0;
    for (double s : cal_scores) kept += s >= d->threshold() ? 1 : 0;
    if (m == Method::kOpenMax && d->threshold() == 1e-12) {
      // The rejection class wins on more than 5% of the calibration set; only those are rejected.
      std::size_t rejection_wins = 0;
      for (double s : cal_scores) rejection_wins += s < 0.0 ? 1 : 0;
      CHECK(kept + rejection_wins == cal_scores.size());
    } else {
      CHECK(static_cast<double>(kept) / static_cast<double>(cal_scores.size()) >= 0.95);
    }

    const auto back = round_trip(*d);
    CHECK(back->method() == m);
    CHECK(back->threshold() == d->threshold());
    CHECK(back->scores(probe.batch()) == d->scores(probe.batch()));
    CHECK(back->describe() == d->describe());

    const auto scores = d->scores(probe.batch());
    const auto heads = d->closed_set_labels(probe.batch());
    const auto decisions = d->decide(probe.batch());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      CHECK(decisions[i].score == scores[i]);
      if (scores[i] < d->threshold()) {
        CHECK(decisions[i].label == scorers::kReject);
      } else {
        CHECK(decisions[i].label == heads[i]);
      }
    }
  }
}

TEST_CASE("missing inputs") {
  const auto f = make_fixture(200, 6);
  const ActivationBatch logits_only{nullptr, &f.logits, nullptr};
  const LabeledBatch unlabeled{f.batch(), nullptr};
  const LabeledBatch no_features{logits_only, &f.labels};
  const DetectorOptions options;
  CHECK_NOTHROW(fit_detector(Method::kTauSoftmax, LabeledBatch{logits_only, nullptr}, LabeledBatch{logits_only, nullptr},
                             nullptr, options));
  CHECK_THROWS_AS(fit_detector(Method::kMahalanobis, unlabeled, unlabeled, nullptr, options), ConfigError);
  CHECK_THROWS_AS(fit_detector(Method::kMahalanobis, no_features, no_features, nullptr, options), ConfigError);
  CHECK_THROWS_AS(fit_detector(Method::kOdin, f.labeled(), f.labeled(), nullptr, options), ConfigError);
  CHECK(requirements(Method::kOcsvm).features);
  CHECK_FALSE(requirements(Method::kTauSigmoid).labels);
  CHECK(requirements(Method::kOdin).network);
}

TEST_CASE("ODIN scores without images fall back to temperature scaling") {
  const auto f = make_fixture(100, 7);
  const auto d = fit_detector(Method::kOdin, f.labeled(), f.labeled(), &f.net, DetectorOptions{});
  const ActivationBatch logits_only{nullptr, &f.logits, nullptr};
  const auto s = d->scores(logits_only);
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) {
    CHECK(s[static_cast<std::size_t>(i)] ==
          scorers::tempered_max_softmax(row_span(f.logits, i), DetectorOptions{}.odin.temperature));
  }
}

TEST_CASE("tuned fitting records the grid") {
  const auto train = make_fixture(800, 8);
  const auto calib = make_fixture(200, 9);
  const auto noise_images = data::gaussian_noise_batch(200, Shape{1, 2, 2}, 10);
  const auto noise_out = net::forward(train.net, noise_images);
  const ActivationBatch noise{&noise_out.features, &noise_out.logits, &noise_images};
  DetectorOptions options;
  TuningLog log;
  const auto d = fit_detector_tuned(Method::kOcsvm, train.labeled(), calib.labeled(), noise, &train.net, options, &log);
  CHECK(log.grid.size() == 9);
  CHECK_FALSE(log.best.empty());
  double best = 0.0;
  for (const auto& [setting, auroc] : log.grid) best = std::max(best, auroc);
  bool matched = false;
  for (const auto& [setting, auroc] : log.grid) matched = matched || (setting == log.best && auroc == best);
  CHECK(matched);
}

TEST_CASE("corrupt bundles") {
  std::stringstream empty;
  CHECK_THROWS_AS(load_detector(empty), FormatError);
  std::stringstream junk("not a detector\n");
  CHECK_THROWS_AS(load_detector(junk), FormatError);
}
