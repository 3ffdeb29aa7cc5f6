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

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "oskit/error.hpp"
#include "oskit/scorers.hpp"
#include "oskit/tensor_net.hpp"

using namespace oskit;
using namespace oskit::net;

namespace {

Images random_images(Shape shape, std::size_t n, std::uint64_t seed) {
  Images b;
  b.shape = shape;
  b.count = n;
  b.values.resize(n * shape.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  for (auto& v : b.values) v = d(rng);
  return b;
}

// About 200 parameters: conv, pool, relu and two dense layers.
Architecture small_arch() {
  return Architecture::parse("input 1 6 6\nconv 2 3 1 1\nrelu\nmaxpool\ndense 6\nrelu\ndense 2\ndense 4\n");
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); }

double worst_param_gradient_error(Network& n, const Images& batch, const std::vector<int>& labels, LossRegime regime,
                                  const LossParams& lp) {
  const auto g = loss_and_grad(n, batch, labels, regime, lp);
  double worst = 0.0;
  const double h = 1e-4;
  for (std::size_t i = 0; i < n.num_params(); ++i) {
    const double orig = n.params()[i];
    n.params()[i] = orig + h;
    const double up = loss_and_grad(n, batch, labels, regime, lp).loss;
    n.params()[i] = orig - h;
    const double down = loss_and_grad(n, batch, labels, regime, lp).loss;
    n.params()[i] = orig;
    worst = std::max(worst, rel_err((up - down) / (2 * h), g.gradients[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("zero parameters give zero logits and a uniform softmax") {
  Network n(small_arch());
  const auto out = forward(n, random_images(n.architecture().input, 3, 1));
  CHECK(out.logits.rows() == 3);
  CHECK(out.logits.cols() == 4);
  for (Eigen::Index i = 0; i < out.logits.rows(); ++i) {
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(out.logits(i, k) == 0.0);
    CHECK(scorers::tau_softmax_score(row_span(out.logits, i)) == 0.25);
  }
}

TEST_CASE("identity dense layer passes its input through") {
  Architecture arch;
  arch.input = Shape{3, 1, 1};
  arch.layers = {DenseSpec{3}};
  Network n(arch);
  auto p = n.params();
  for (int j = 0; j < 3; ++j) p[static_cast<std::size_t>(j * 3 + j)] = 1.0;
  Images x;
  x.shape = arch.input;
  x.count = 1;
  x.values = {0.5, -2.0, 7.25};
  const auto out = forward(n, x);
  CHECK(out.logits(0, 0) == 0.5);
  CHECK(out.logits(0, 1) == -2.0);
  CHECK(out.logits(0, 2) == 7.25);
}

TEST_CASE("batch forward matches a naive scalar forward pass") {
  const auto arch =
      Architecture::parse("input 2 9 9\nconv 3 3 1 1\nrelu\nmaxpool\nconv 4 3 2 0\nrelu\ndense 7\nrelu\ndense 2\ndense 3\n");
  Network n(arch);
  n.initialize(42);
  const auto batch = random_images(arch.input, 4, 7);
  const auto out = forward(n, batch);
  CHECK(out.features.cols() == n.feature_dim());
  CHECK(n.feature_dim() == 2);
  for (std::size_t i = 0; i < batch.count; ++i) {
    std::vector<double> feats;
    const auto x = batch.sample(i);
    const auto ref = oracle::naive_forward_layers(n, {x.begin(), x.end()}, &feats);
    for (int k = 0; k < 3; ++k) {
      CHECK(out.logits(static_cast<Eigen::Index>(i), k) ==
            doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-12));
    }
    for (int j = 0; j < 2; ++j) {
      CHECK(out.features(static_cast<Eigen::Index>(i), j) ==
            doctest::Approx(feats[static_cast<std::size_t>(j)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward rejects mismatched input") {
  Network n(small_arch());
  CHECK_THROWS_AS(forward(n, random_images(Shape{1, 5, 5}, 1, 1)), ShapeError);
}

TEST_CASE("parameter count is a function of the architecture") {
  const auto arch = Architecture::lenet_plus_plus(10, 2);
  // conv 1->32, 32->32, 32->64, 64->64, 64->128, 128->128 (5x5 kernels), dense 1152->2, 2->10.
  const std::size_t expected = 32 * (25 + 1) + 32 * (32 * 25 + 1) + 64 * (32 * 25 + 1) + 64 * (64 * 25 + 1) +
                               128 * (64 * 25 + 1) + 128 * (128 * 25 + 1) + 2 * (128 * 3 * 3 + 1) + 10 * (2 + 1);
  CHECK(parameter_count(arch) == expected);
  CHECK(Network(arch).num_params() == expected);
  CHECK(Network(arch).feature_dim() == 2);
  CHECK(Architecture::parse(arch.to_text()) == arch);
}

TEST_CASE("background sample with equal logits costs ln K and has zero logit gradient") {
  LossParams lp;
  const std::vector<double> logits{1.5, 1.5, 1.5, 1.5, 1.5};
  const std::vector<double> features{0.0, 0.0};
  std::vector<double> gl(5), gf(2);
  const double loss = sample_loss(logits, features, data::kBackgroundLabel, LossRegime::kBackgroundReg, lp, gl, gf);
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-15));
  for (double g : gl) CHECK(std::abs(g) < 1e-16);
}

TEST_CASE("background label outside background_reg is an invalid label") {
  LossParams lp;
  std::vector<double> logits{0.0, 1.0}, features{0.0}, gl(2), gf(1);
  CHECK_THROWS_AS(sample_loss(logits, features, data::kBackgroundLabel, LossRegime::kCrossEntropy, lp, gl, gf),
                  InvalidLabelError);
  CHECK_THROWS_AS(sample_loss(logits, features, 2, LossRegime::kCrossEntropy, lp, gl, gf), InvalidLabelError);
}

TEST_CASE("background_reg with zero weight equals cross-entropy bit for bit") {
  Network n(small_arch());
  n.initialize(5);
  const auto batch = random_images(n.architecture().input, 6, 3);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  LossParams off;
  off.entropic.background_weight = 0.0;
  const auto bg = loss_and_grad(n, batch, labels, LossRegime::kBackgroundReg, off);
  const auto ce = loss_and_grad(n, batch, labels, LossRegime::kCrossEntropy, LossParams{});
  CHECK(bg.loss == ce.loss);
  CHECK(bg.gradients == ce.gradients);
}

TEST_CASE("analytic gradients match central finite differences") {
  Network n(small_arch());
  n.initialize(11);
  CHECK(n.num_params() <= 1000);
  const auto batch = random_images(n.architecture().input, 4, 13);
  LossParams lp;
  lp.entropic.margin = 50.0;  // keeps every known sample inside the hinge
  lp.negative_weights = {0.5, 2.0, 1.0, 0.25};
  SUBCASE("cross_entropy") {
    CHECK(worst_param_gradient_error(n, batch, {0, 1, 2, 3}, LossRegime::kCrossEntropy, lp) < 1e-4);
  }
  SUBCASE("one_vs_rest") {
    CHECK(worst_param_gradient_error(n, batch, {3, 2, 1, 0}, LossRegime::kOneVsRest, lp) < 1e-4);
  }
  SUBCASE("background_reg") {
    CHECK(worst_param_gradient_error(n, batch, {0, -1, 2, -1}, LossRegime::kBackgroundReg, lp) < 1e-4);
  }
}

TEST_CASE("one-vs-rest weights are n_pos / n_neg") {
  const std::vector<int> labels{0, 0, 0, 1, 2, 2};
  const auto w = one_vs_rest_weights(labels, 3);
  CHECK(w[0] == doctest::Approx(3.0 / 3.0));
  CHECK(w[1] == doctest::Approx(1.0 / 5.0));
  CHECK(w[2] == doctest::Approx(2.0 / 4.0));
}

TEST_CASE("sgd_step") {
  SUBCASE("vanilla step") {
    std::vector<double> p{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
    sgd_step(p, g, v, SgdHyper{0.1, 0.0, 0.0});
    CHECK(p[0] == doctest::Approx(1.0 - 0.05));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.025));
  }
  SUBCASE("zero gradient is a fixed point") {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, v{0.0, 0.0};
    sgd_step(p, g, v, SgdHyper{0.1, 0.9, 0.0});
    CHECK(p == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("two momentum steps match the unrolled recurrence") {
    std::vector<double> p{2.0}, v{0.0};
    const double lr = 0.1, mu = 0.9, wd = 0.01, g1 = 0.3, g2 = -0.7;
    sgd_step(p, std::vector<double>{g1}, v, SgdHyper{lr, mu, wd});
    sgd_step(p, std::vector<double>{g2}, v, SgdHyper{lr, mu, wd});
    const double v1 = g1 + wd * 2.0;
    const double p1 = 2.0 - lr * v1;
    const double v2 = mu * v1 + g2 + wd * p1;
    const double p2 = p1 - lr * v2;
    CHECK(p[0] == doctest::Approx(p2).epsilon(1e-15));
    CHECK(v[0] == doctest::Approx(v2).epsilon(1e-15));
  }
}

TEST_CASE("small learning rate decreases the loss on a fixed batch") {
  Network n(small_arch());
  n.initialize(21);
  const auto batch = random_images(n.architecture().input, 8, 22);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  std::vector<double> velocity(n.num_params(), 0.0);
  double prev = loss_and_grad(n, batch, labels, LossRegime::kCrossEntropy, {}).loss;
  for (int step = 0; step < 10; ++step) {
    const auto g = loss_and_grad(n, batch, labels, LossRegime::kCrossEntropy, {});
    sgd_step(n.params(), g.gradients, velocity, SgdHyper{1e-4, 0.0, 0.0});
    const double now = loss_and_grad(n, batch, labels, LossRegime::kCrossEntropy, {}).loss;
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("training is deterministic and validates its inputs") {
  const auto arch = small_arch();
  data::LabeledImages train_set{random_images(arch.input, 40, 1), {}};
  for (int i = 0; i < 40; ++i) train_set.labels.push_back(i % 4);
  data::LabeledImages val{random_images(arch.input, 8, 2), {0, 1, 2, 3, 0, 1, 2, 3}};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.lr_decay_every = 2;
  cfg.seed = 9;
  const auto a = train(arch, cfg, train_set, val);
  const auto b = train(arch, cfg, train_set, val);
  CHECK(std::equal(a.net.params().begin(), a.net.params().end(), b.net.params().begin()));
  REQUIRE(a.log.size() == 3);
  CHECK(a.log[0].lr == doctest::Approx(0.01));
  CHECK(a.log[2].lr == doctest::Approx(0.001));

  data::LabeledImages empty{random_images(arch.input, 0, 1), {}};
  CHECK_THROWS_AS(train(arch, cfg, empty, val), DataError);
  cfg.regime = LossRegime::kBackgroundReg;
  CHECK_THROWS_AS(train(arch, cfg, train_set, val), ConfigError);
  cfg.regime = LossRegime::kCrossEntropy;
  CHECK_THROWS_AS(train(arch, cfg, train_set, val, &val), ConfigError);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("input gradient") {
  const auto arch = Architecture::parse("input 1 8 8\nconv 2 3 1 1\nrelu\nmaxpool\ndense 5\nrelu\ndense 3\n");
  const ObjectiveSpec objective{ScalarObjective::kTemperedMaxLogSoftmax, 2.0};
  const auto x_img = random_images(arch.input, 1, 31);
  const std::vector<double> x(x_img.values.begin(), x_img.values.end());

  SUBCASE("zero weights give a zero gradient") {
    Network zero(arch);
    for (double g : input_gradient(zero, x, objective)) CHECK(g == 0.0);
  }
  SUBCASE("finite differences on an 8x8 input") {
    Network n(arch);
    n.initialize(4);
    const auto g = input_gradient(n, x, objective);
    REQUIRE(g.size() == x.size());
    auto f = [&](const std::vector<double>& xx) {
      return std::log(oracle::softmax_max(oracle::naive_forward_layers(n, xx), objective.temperature));
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto up = x, down = x;
      up[i] += 1e-4;
      down[i] -= 1e-4;
      worst = std::max(worst, rel_err((f(up) - f(down)) / 2e-4, g[i]));
    }
    CHECK(worst < 1e-4);
    for (double v : g) {
      const double s = (v > 0) - (v < 0);
      CHECK((s == -1.0 || s == 0.0 || s == 1.0));
    }
  }
}

TEST_CASE("checkpoint round trip") {
  Network n(small_arch());
  n.initialize(8);
  n.standardization = {0.1307, 0.3081};
  std::stringstream buf;
  save_checkpoint(buf, n);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "OSKN");
  std::stringstream in(bytes);
  const auto back = load_checkpoint(in);
  CHECK(back.architecture() == n.architecture());
  CHECK(std::equal(back.params().begin(), back.params().end(), n.params().begin()));
  CHECK(back.standardization.mean == n.standardization.mean);
  CHECK(back.standardization.stddev == n.standardization.stddev);

  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream corrupt(bad);
  CHECK_THROWS_AS(load_checkpoint(corrupt), FormatError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(truncated), FormatError);
}
