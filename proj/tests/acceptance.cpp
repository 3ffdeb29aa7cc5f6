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

// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero on any FAIL.
//
//   acceptance [--config configs/desk.ini] [--out DIR] [--only N[,N...]]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "oracles.hpp"
#include "oskit/config.hpp"
#include "oskit/datasets.hpp"
#include "oskit/detector.hpp"
#include "oskit/mahalanobis.hpp"
#include "oskit/metrics.hpp"
#include "oskit/ocsvm.hpp"
#include "oskit/openmax.hpp"
#include "oskit/pipeline.hpp"
#include "oskit/scorers.hpp"
#include "oskit/tensor_net.hpp"

using namespace oskit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b)); }

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

RowMatrix normal_rows(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  RowMatrix m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  }
  return m;
}

std::vector<double> row(const RowMatrix& m, Eigen::Index i) { return {m.row(i).data(), m.row(i).data() + m.cols()}; }

// ---------------------------------------------------------------------------------------

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  net::Network n(net::Architecture::parse("input 1 6 6\nconv 2 3 1 1\nrelu\nmaxpool\ndense 6\nrelu\ndense 2\ndense 4\n"));
  n.initialize(11);
  const auto batch = random_images(n.architecture().input, 4, 13);
  net::LossParams lp;
  lp.entropic.margin = 50.0;
  lp.negative_weights = {0.5, 2.0, 1.0, 0.25};
  double worst = 0.0;
  const std::vector<std::pair<net::LossRegime, std::vector<int>>> cases{
      {net::LossRegime::kCrossEntropy, {0, 1, 2, 3}},
      {net::LossRegime::kOneVsRest, {3, 2, 1, 0}},
      {net::LossRegime::kBackgroundReg, {0, -1, 2, -1}}};
  for (const auto& [regime, labels] : cases) {
    const auto g = net::loss_and_grad(n, batch, labels, regime, lp);
    for (std::size_t i = 0; i < n.num_params(); ++i) {
      const double orig = n.params()[i];
      n.params()[i] = orig + 1e-4;
      const double up = net::loss_and_grad(n, batch, labels, regime, lp).loss;
      n.params()[i] = orig - 1e-4;
      const double down = net::loss_and_grad(n, batch, labels, regime, lp).loss;
      n.params()[i] = orig;
      worst = std::max(worst, rel_err((up - down) / 2e-4, g.gradients[i]));
    }
  }

  net::Network m(net::Architecture::parse("input 1 8 8\nconv 2 3 1 1\nrelu\nmaxpool\ndense 5\nrelu\ndense 3\n"));
  m.initialize(4);
  const net::ObjectiveSpec objective{net::ScalarObjective::kTemperedMaxLogSoftmax, 2.0};
  const auto x_img = random_images(m.architecture().input, 1, 31);
  const std::vector<double> x(x_img.values.begin(), x_img.values.end());
  const auto g = net::input_gradient(m, x, objective);
  auto f = [&](const std::vector<double>& xx) {
    return std::log(oracle::softmax_max(oracle::naive_forward_layers(m, xx), objective.temperature));
  };
  double worst_input = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto up = x, down = x;
    up[i] += 1e-4;
    down[i] -= 1e-4;
    worst_input = std::max(worst_input, rel_err((f(up) - f(down)) / 2e-4, g[i]));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool small = n.num_params() <= 1000 && m.num_params() <= 1000;
  return {small && worst < 1e-4 && worst_input < 1e-4 && secs < 60.0,
          fmt::format("loss rel err {:.2e}, input rel err {:.2e}, {} and {} params, {:.1f}s", worst, worst_input,
                      n.num_params(), m.num_params(), secs)};
}

// ---------------------------------------------------------------------------------------

std::vector<double> tied_scores(std::size_t n, double shift, std::mt19937_64& rng) {
  std::normal_distribution<double> g(shift, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = std::round(g(rng) * 4.0) / 4.0;
  return v;
}

Outcome oracles() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(1, 200);
  std::uniform_real_distribution<double> shift(-1.0, 2.0);
  double auroc_err = 0.0;
  for (int instance = 0; instance < 200; ++instance) {
    const auto in = tied_scores(size(rng), shift(rng), rng);
    const auto out = tied_scores(size(rng), 0.0, rng);
    auroc_err = std::max(auroc_err, std::abs(metrics::auroc(in, out) - oracle::pairwise_auroc(in, out)));
  }

  double delong_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto in_a = tied_scores(50, 1.0, rng);
    const auto out_a = tied_scores(50, 0.0, rng);
    auto in_b = in_a, out_b = out_a;
    std::normal_distribution<double> noise(0.0, 0.7);
    for (double& x : in_b) x = std::round((x + noise(rng)) * 4.0) / 4.0;
    for (double& x : out_b) x = std::round((x + noise(rng)) * 4.0) / 4.0;
    const auto t = metrics::delong_test(in_a, out_a, in_b, out_b);
    const auto naive = oracle::naive_delong(in_a, out_a, in_b, out_b);
    delong_err = std::max({delong_err, std::abs(t.var_a - naive.var_a), std::abs(t.var_b - naive.var_b),
                           std::abs(t.cov_ab - naive.cov)});
  }

  const auto x = normal_rows(300, 4, 2);
  const auto svm = ocsvm::ocsvm_fit(x, ocsvm::OcsvmParams{0.1, 0.3});
  double svm_err = 0.0;
  std::normal_distribution<double> g(0.0, 1.5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> z(4);
    for (double& v : z) v = g(rng);
    svm_err = std::max(svm_err, std::abs(svm.decision(z) - oracle::naive_decision(svm, z)));
  }

  openmax::OpenMaxModel om;
  om.mavs = RowMatrix(3, 3);
  om.mavs << 4.0, -1.0, 0.5, -0.5, 3.5, 0.0, 0.2, -0.3, 5.0;
  om.weibulls = {openmax::WeibullModel{2.5, 3.0, 20, 0}, openmax::WeibullModel{1.5, 2.0, 20, 1},
                 openmax::WeibullModel{4.0, 5.0, 20, 2}};
  double om_err = 0.0;
  std::normal_distribution<double> h(1.0, 3.0);
  for (int alpha = 1; alpha <= 3; ++alpha) {
    om.alpha = alpha;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> v(3);
      for (double& e : v) e = h(rng);
      const auto p = om.recalibrate(v);
      const auto q = oracle::naive_recalibrate(om, v);
      for (std::size_t i = 0; i < p.size(); ++i) om_err = std::max(om_err, std::abs(p[i] - q[i]));
    }
  }
  return {auroc_err <= 1e-12 && delong_err <= 1e-10 && svm_err <= 1e-10 && om_err <= 1e-10,
          fmt::format("AUROC {:.1e}, DeLong {:.1e}, OC-SVM {:.1e}, OpenMax {:.1e}", auroc_err, delong_err, svm_err,
                      om_err)};
}

// ---------------------------------------------------------------------------------------

Outcome recovery() {
  const auto fit = openmax::weibull_fit_mle(oracle::weibull_draws(10000, 2.0, 1.0, 17));
  const bool weibull_ok = std::abs(fit.shape - 2.0) <= 0.1 && std::abs(fit.scale - 1.0) <= 0.05;

  const auto x = normal_rows(1000, 2, 2);
  double worst_nu = 0.0;
  for (double nu : {0.05, 0.1, 0.2}) {
    const double tol = 1e-7;
    const auto m = ocsvm::ocsvm_fit(x, ocsvm::OcsvmParams{nu, 0.5, tol});
    std::size_t outliers = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) outliers += m.decision(row(x, i)) < -10.0 * tol ? 1 : 0;
    worst_nu = std::max(worst_nu, std::abs(static_cast<double>(outliers) / 1000.0 - nu));
  }

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  const int n = 10000, d = 8, k = 4;
  RowMatrix f(n, d);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    const int y = i % k;
    labels[static_cast<std::size_t>(i)] = y;
    for (int j = 0; j < d; ++j) f(i, j) = 10.0 * y * (j + 1) + g(rng);
  }
  const auto maha = mahalanobis::mahalanobis_fit(f, labels, k);
  const double cov_err = (maha.covariance - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
  return {weibull_ok && worst_nu <= 0.03 && cov_err <= 0.05,
          fmt::format("Weibull ({:.4f}, {:.4f}), worst |outliers - nu| {:.3f}, covariance err {:.4f} at d = {}",
                      fit.shape, fit.scale, worst_nu, cov_err, d)};
}

// ---------------------------------------------------------------------------------------

Outcome identities() {
  net::Network tiny(net::Architecture::parse("input 1 1 3\ndense 4\nrelu\ndense 2\ndense 3\n"));
  tiny.initialize(11);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  bool odin_ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(3);
    for (double& v : x) v = 3.0 * g(rng);
    net::Trace trace;
    net::forward_sample(tiny, x, trace);
    odin_ok = odin_ok && scorers::odin_score(tiny, x, scorers::OdinParams{1.0, 0.0}) ==
                             scorers::tau_softmax_score(trace.logits());
  }

  net::Network n(net::Architecture::parse("input 1 6 6\nconv 2 3 1 1\nrelu\nmaxpool\ndense 6\nrelu\ndense 2\ndense 4\n"));
  n.initialize(5);
  const auto batch = random_images(n.architecture().input, 6, 3);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  net::LossParams off;
  off.entropic.background_weight = 0.0;
  const auto bg = net::loss_and_grad(n, batch, labels, net::LossRegime::kBackgroundReg, off);
  const auto ce = net::loss_and_grad(n, batch, labels, net::LossRegime::kCrossEntropy, net::LossParams{});
  const bool bg_ok = bg.loss == ce.loss && bg.gradients == ce.gradients;

  openmax::OpenMaxModel om;
  om.mavs = RowMatrix::Zero(3, 3);
  om.weibulls = {openmax::WeibullModel{2.0, 1e300, 20, 0}, openmax::WeibullModel{2.0, 1e300, 20, 1},
                 openmax::WeibullModel{2.0, 1e300, 20, 2}};
  om.alpha = 3;
  double om_err = 0.0;
  bool om_zero_rest = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(3);
    for (double& e : v) e = 4.0 * g(rng);
    const auto p = om.recalibrate(v);
    const double known = p[0] + p[1] + p[2];
    const double top = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double e : v) z += std::exp(e - top);
    for (std::size_t i = 0; i < 3; ++i) om_err = std::max(om_err, std::abs(p[i] / known - std::exp(v[i] - top) / z));
    // No activation is moved to the rejection class; its probability is e^0 / Z.
    double zz = 1.0;
    for (double e : v) zz += std::exp(e);
    om_zero_rest = om_zero_rest && std::abs(p[3] - 1.0 / zz) <= 1e-15;
  }

  RowMatrix mu = normal_rows(3, 4, 6);
  const auto iso = mahalanobis::from_moments(mu, Eigen::MatrixXd::Identity(4, 4), 0.0);
  double maha_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> z(4);
    for (double& v : z) v = g(rng);
    double best = 1e300;
    for (int k = 0; k < 3; ++k) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += (z[static_cast<std::size_t>(j)] - mu(k, j)) * (z[static_cast<std::size_t>(j)] - mu(k, j));
      best = std::min(best, s);
    }
    maha_err = std::max(maha_err, std::abs(mahalanobis::mahalanobis_score(iso, z) + best) / std::max(1.0, best));
  }
  return {odin_ok && bg_ok && om_err <= 1e-14 && om_zero_rest && maha_err <= 1e-14,
          fmt::format("ODIN==tau-softmax {}, background_reg==cross_entropy {}, OpenMax vs softmax {:.1e}, "
                      "Mahalanobis vs -|z-mu|^2 {:.1e}",
                      odin_ok ? "yes" : "no", bg_ok ? "yes" : "no", om_err, maha_err)};
}

// ---------------------------------------------------------------------------------------

struct Fixture {
  net::Network net;
  Images images;
  RowMatrix features, logits;
  std::vector<int> labels;
  detect::ActivationBatch batch() const { return {&features, &logits, &images}; }
  detect::LabeledBatch labeled() const { return {batch(), &labels}; }
};

Fixture make_fixture(std::size_t n, std::uint64_t seed) {
  Fixture f;
  f.net = net::Network(net::Architecture::parse("input 1 2 2\ndense 6\nrelu\ndense 3\ndense 3\n"));
  f.net.initialize(3);
  f.images = data::gaussian_noise_batch(n, Shape{1, 2, 2}, seed);
  for (double& v : f.images.values) v *= 2.0;
  const auto out = net::forward(f.net, f.images);
  f.features = out.features;
  f.logits = out.logits;
  for (Eigen::Index i = 0; i < f.logits.rows(); ++i) f.labels.push_back(scorers::argmax(row_span(f.logits, i)));
  return f;
}

Outcome decision_fuzz() {
  const auto train = make_fixture(1500, 4);
  const auto calib = make_fixture(1500, 5);
  const auto probe = make_fixture(250, 6);
  detect::DetectorOptions options;
  options.openmax.tail_size = 10;
  options.odin = scorers::OdinParams{10.0, 0.01};
  std::mt19937_64 rng(7);
  std::size_t pairs = 0, violations = 0;
  for (detect::Method m : detect::all_methods()) {
    auto d = detect::fit_detector(m, train.labeled(), calib.labeled(), &train.net, options);
    const auto scores = d->scores(probe.batch());
    const auto heads = d->closed_set_labels(probe.batch());
    std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int t = 0; t < 6; ++t) {
      // Thresholds at, just above and just below observed scores, plus random offsets.
      const double s = scores[pick(rng)];
      double delta = s;
      if (t % 3 == 1) delta = std::nextafter(s, 1e300);
      if (t % 3 == 2) delta = s + jitter(rng);
      d->set_threshold(delta);
      const auto decisions = d->decide(probe.batch());
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const int want = scores[i] < d->threshold() ? scorers::kReject : heads[i];
        violations += (decisions[i].label != want || decisions[i].score != scores[i]) ? 1 : 0;
        ++pairs;
      }
    }
  }
  while (pairs < 10000) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_int_distribution<int> head(0, 9);
    const double s = std::round(u(rng) * 8.0) / 8.0;
    const double delta = std::round(u(rng) * 8.0) / 8.0;
    const int h = head(rng);
    const auto dec = scorers::decide(s, delta, h);
    violations += dec.label != (s < delta ? scorers::kReject : h) ? 1 : 0;
    ++pairs;
  }
  return {violations == 0, fmt::format("{} (score, threshold) pairs over {} detectors, {} violations", pairs,
                                       detect::all_methods().size(), violations)};
}

// ---------------------------------------------------------------------------------------

double mean_auroc(const std::vector<metrics::Cell>& cells, const std::string& regime, const std::string& method,
                  data::Tier tier, std::size_t* runs) {
  for (const auto& c : cells) {
    if (c.regime != regime || c.detector != method || c.tier != tier) continue;
    double s = 0.0;
    for (const auto& r : c.runs) s += r.auroc;
    *runs = c.runs.size();
    return c.runs.empty() ? 0.0 : s / static_cast<double>(c.runs.size());
  }
  *runs = 0;
  return 0.0;
}

Outcome reproduction(const pipeline::ReproduceResult& r) {
  double worst_ce = 1.0;
  std::size_t ce_runs = 0;
  for (const auto& t : r.training) {
    if (t.regime != "cross_entropy") continue;
    worst_ce = std::min(worst_ce, t.test_top1);
    ++ce_runs;
  }
  std::size_t n_ce = 0, n_bg = 0;
  const double soft_ce = mean_auroc(r.cells, "cross_entropy", "tau-softmax", data::Tier::kInter, &n_ce);
  const double soft_bg = mean_auroc(r.cells, "background_reg", "tau-softmax", data::Tier::kInter, &n_bg);
  const bool pass = ce_runs == 5 && n_ce == 5 && n_bg == 5 && worst_ce >= 0.985 && soft_ce >= 0.90 &&
                    soft_bg - soft_ce >= 0.01 && r.seconds <= 3600.0;
  return {pass, fmt::format("cross-entropy top-1 min {:.4f} over {} runs; tau-softmax inter AUROC {:.4f} "
                            "(cross_entropy) vs {:.4f} (background_reg), gain {:+.4f}; total {:.1f} min",
                            worst_ce, ce_runs, soft_ce, soft_bg, soft_bg - soft_ce, r.seconds / 60.0)};
}

Outcome metric_inequalities(const pipeline::ReproduceResult& r) {
  std::size_t evaluations = 0, violations = 0;
  double worst_sym = 0.0;
  for (const auto& c : r.cells) {
    for (const auto& run : c.runs) {
      ++evaluations;
      const double eps = 1e-12;
      const bool ok = run.auosc <= std::min(run.auroc, run.closed_set_accuracy) + eps &&
                      run.normalized_auosc >= 0.0 && run.normalized_auosc <= 1.0;
      const double sym =
          std::abs(metrics::auroc(run.in_scores, run.out_scores) + metrics::auroc(run.out_scores, run.in_scores) - 1.0);
      worst_sym = std::max(worst_sym, sym);
      violations += (!ok || sym > eps || std::abs(metrics::auroc(run.in_scores, run.out_scores) - run.auroc) > eps) ? 1 : 0;
    }
  }
  return {evaluations > 0 && violations == 0,
          fmt::format("{} evaluations, {} violations, worst |AUROC(in,out) + AUROC(out,in) - 1| {:.1e}", evaluations,
                      violations, worst_sym)};
}

Outcome boundary_contrast(const pipeline::ReproduceResult& r, double extent) {
  const pipeline::BoundaryRecord* soft = nullptr;
  const pipeline::BoundaryRecord* maha = nullptr;
  for (const auto& b : r.boundaries) {
    if (b.regime != "cross_entropy") continue;
    if (b.method == "tau-softmax") soft = &b;
    if (b.method == "mahalanobis") maha = &b;
  }
  if (soft == nullptr || maha == nullptr) return {false, "cross_entropy boundary grids missing"};
  return {!maha->border_accepted && soft->border_accepted && extent == 3.0,
          fmt::format("cross_entropy net at {}x feature extent: Mahalanobis border cells {}, tau-softmax border cells {}",
                      extent, maha->border_accepted ? "yes" : "none", soft->border_accepted ? "yes" : "none")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("oskit acceptance checks");
  std::string config_path = fs::path(OSKIT_SOURCE_DIR) / "configs" / "desk.ini";
  std::string out = "acceptance-artifacts";
  std::vector<int> only;
  app.add_option("--config", config_path);
  app.add_option("--out", out);
  app.add_option("--only", only)->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };
  bool all_pass = true;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    all_pass = all_pass && o.pass;
    fmt::print("{} {}. {}: {}\n", o.pass ? "PASS" : "FAIL", id, name, o.detail);
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradients);
  report(2, "oracle equivalence", oracles);
  report(3, "statistical recovery", recovery);
  report(4, "identity and limit reductions", identities);

  if (wanted(5) || wanted(7) || wanted(8)) {
    std::optional<pipeline::ReproduceResult> result;
    double extent = 0.0;
    std::string failure;
    try {
      const auto cfg = config::load_config(config_path);
      extent = cfg.eval.grid_extent;
      result = pipeline::reproduce_mnist(cfg, out, [](std::string_view line) { fmt::print(stderr, "{}\n", line); });
    } catch (const std::exception& e) {
      failure = fmt::format("desk reproduction failed: {}", e.what());
    }
    auto from_run = [&](const std::function<Outcome(const pipeline::ReproduceResult&)>& f) {
      return [&, f] { return result ? f(*result) : Outcome{false, failure}; };
    };
    report(5, "desk-scale reproduction", from_run(reproduction));
    report(6, "decision-rule fuzz", decision_fuzz);
    report(7, "metric inequalities", from_run(metric_inequalities));
    report(8, "bounded and unbounded acceptance regions",
           from_run([&](const pipeline::ReproduceResult& r) { return boundary_contrast(r, extent); }));
  } else {
    report(6, "decision-rule fuzz", decision_fuzz);
  }
  return all_pass ? 0 : 1;
}
