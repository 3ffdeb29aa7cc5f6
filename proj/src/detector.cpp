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


#include "oskit/detector.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "oskit/error.hpp"
#include "oskit/metrics.hpp"

namespace oskit::detect {

namespace {

constexpr Method kMethods[] = {Method::kTauSoftmax, Method::kTauSigmoid, Method::kDoc,        Method::kOdin,
                               Method::kOpenMax,    Method::kOcsvm,      Method::kMahalanobis};

std::string hex(double v) { return fmt::format("{:a}", v); }

double parse_number(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw FormatError(fmt::format("bad number '{}'", text));
  return v;
}

const RowMatrix& need(const RowMatrix* m, const char* what, Method method) {
  if (m == nullptr) throw ConfigError(fmt::format("{} needs {}", method_name(method), what));
  return *m;
}

std::vector<int> argmax_rows(const RowMatrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = scorers::argmax(row_span(logits, i));
  return out;
}

RowMatrix row_vector(const std::vector<double>& v) {
  RowMatrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::vector<double> to_vector(const RowMatrix& m) { return {m.data(), m.data() + m.size()}; }

// Scores every logit row with a pure function of that row.
template <class F>
std::vector<double> per_logit_row(const ActivationBatch& batch, Method method, F&& f) {
  const auto& logits = need(batch.logits, "logits", method);
  std::vector<double> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = f(row_span(logits, i));
  return out;
}

class TauSoftmax final : public Detector {
 public:
  Method method() const override { return Method::kTauSoftmax; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    return per_logit_row(b, method(), [](std::span<const double> l) { return scorers::tau_softmax_score(l); });
  }
  std::string describe() const override { return fmt::format("delta={:.6g}", threshold_); }

 protected:
  void save_state(Bundle&) const override {}
};

class TauSigmoid final : public Detector {
 public:
  Method method() const override { return Method::kTauSigmoid; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    return per_logit_row(b, method(), [](std::span<const double> l) { return scorers::tau_sigmoid_score(l); });
  }
  std::string describe() const override { return fmt::format("delta={:.6g}", threshold_); }

 protected:
  void save_state(Bundle&) const override {}
};

class Doc final : public Detector {
 public:
  explicit Doc(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {}
  Method method() const override { return Method::kDoc; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    return per_logit_row(b, method(), [&](std::span<const double> l) { return scorers::doc_score(l, thresholds_); });
  }
  std::vector<int> closed_set_labels(const ActivationBatch& b) const override {
    const auto& logits = need(b.logits, "logits", method());
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = scorers::doc_head(row_span(logits, i), thresholds_);
    }
    return out;
  }
  std::string describe() const override {
    return fmt::format("per-class thresholds [{:.4f}]", fmt::join(thresholds_, ", "));
  }
  const std::vector<double>& class_thresholds() const { return thresholds_; }

 protected:
  void save_state(Bundle& b) const override { b.blocks["thresholds"] = row_vector(thresholds_); }

 private:
  std::vector<double> thresholds_;
};

class Odin final : public Detector {
 public:
  Odin(net::Network network, scorers::OdinParams params) : net_(std::move(network)), params_(params) {}
  Method method() const override { return Method::kOdin; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    if (b.images == nullptr) {
      // Feature-space points carry no input to perturb: temperature scaling only.
      return per_logit_row(b, method(), [&](std::span<const double> l) {
        return scorers::tempered_max_softmax(l, params_.temperature);
      });
    }
    std::vector<double> out(b.images->count);
    for (std::size_t i = 0; i < b.images->count; ++i) out[i] = scorers::odin_score(net_, b.images->sample(i), params_);
    return out;
  }
  std::vector<int> closed_set_labels(const ActivationBatch& b) const override {
    if (b.logits != nullptr) return argmax_rows(*b.logits);
    if (b.images == nullptr) throw ConfigError("odin needs logits or images");
    return argmax_rows(net::forward(net_, *b.images).logits);
  }
  std::string describe() const override {
    return fmt::format("T={} epsilon={} delta={:.6g}", params_.temperature, params_.epsilon, threshold_);
  }

 protected:
  void save_state(Bundle& b) const override {
    b.set("temperature", params_.temperature);
    b.set("epsilon", params_.epsilon);
    std::ostringstream out;
    net::save_checkpoint(out, net_);
    b.checkpoint = out.str();
  }

 private:
  net::Network net_;
  scorers::OdinParams params_;
};

class OpenMax final : public Detector {
 public:
  explicit OpenMax(openmax::OpenMaxModel model) : model_(std::move(model)) {}
  Method method() const override { return Method::kOpenMax; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    return per_logit_row(b, method(),
                         [&](std::span<const double> l) { return openmax::openmax_score(model_.recalibrate(l)); });
  }
  std::vector<int> closed_set_labels(const ActivationBatch& b) const override {
    const auto& logits = need(b.logits, "logits", method());
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = openmax::openmax_head(model_.recalibrate(row_span(logits, i)));
    }
    return out;
  }
  // A positive threshold keeps the generic rule equal to openmax_decide.
  void set_threshold(double delta) override { threshold_ = std::max(delta, 1e-12); }
  std::string describe() const override {
    return fmt::format("tail={} alpha={} delta={:.6g}", model_.weibulls.empty() ? 0 : model_.weibulls[0].tail_size,
                       model_.alpha, threshold_);
  }

 protected:
  void save_state(Bundle& b) const override {
    b.set("alpha", static_cast<double>(model_.alpha));
    b.blocks["mavs"] = model_.mavs;
    RowMatrix w(static_cast<Eigen::Index>(model_.weibulls.size()), 3);
    for (std::size_t k = 0; k < model_.weibulls.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      w(r, 0) = model_.weibulls[k].shape;
      w(r, 1) = model_.weibulls[k].scale;
      w(r, 2) = model_.weibulls[k].tail_size;
    }
    b.blocks["weibull"] = w;
  }

 private:
  openmax::OpenMaxModel model_;
};

class Ocsvm final : public Detector {
 public:
  explicit Ocsvm(ocsvm::OcsvmModel model) : model_(std::move(model)) {}
  Method method() const override { return Method::kOcsvm; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    const auto& f = need(b.features, "features", method());
    std::vector<double> out(static_cast<std::size_t>(f.rows()));
    for (Eigen::Index i = 0; i < f.rows(); ++i) out[static_cast<std::size_t>(i)] = model_.decision(row_span(f, i));
    return out;
  }
  std::string describe() const override {
    return fmt::format("nu={} gamma={:.6g} support_vectors={} delta={:.6g}", model_.nu, model_.gamma,
                       model_.support_vectors.rows(), threshold_);
  }

 protected:
  void save_state(Bundle& b) const override {
    b.set("rho", model_.rho);
    b.set("gamma", model_.gamma);
    b.set("nu", model_.nu);
    b.blocks["support_vectors"] = model_.support_vectors;
    b.blocks["alphas"] = row_vector(model_.alphas);
  }

 private:
  ocsvm::OcsvmModel model_;
};

class Mahalanobis final : public Detector {
 public:
  explicit Mahalanobis(mahalanobis::MahalanobisModel model) : model_(std::move(model)) {}
  Method method() const override { return Method::kMahalanobis; }
  std::vector<double> scores(const ActivationBatch& b) const override {
    const auto& f = need(b.features, "features", method());
    std::vector<double> out(static_cast<std::size_t>(f.rows()));
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = mahalanobis::mahalanobis_score(model_, row_span(f, i));
    }
    return out;
  }
  std::vector<int> closed_set_labels(const ActivationBatch& b) const override {
    const auto& f = need(b.features, "features", method());
    std::vector<int> out(static_cast<std::size_t>(f.rows()));
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = mahalanobis::mahalanobis_classify(model_, row_span(f, i));
    }
    return out;
  }
  std::string describe() const override {
    return fmt::format("lambda_r={:.3g} delta={:.6g}", model_.regularizer, threshold_);
  }

 protected:
  void save_state(Bundle& b) const override {
    b.set("lambda", model_.regularizer);
    b.blocks["means"] = model_.means;
    b.blocks["covariance"] = model_.covariance;
  }

 private:
  mahalanobis::MahalanobisModel model_;
};

void check_rows(const ActivationBatch& b, const char* what) {
  const std::size_t n = b.rows();
  auto same = [&](std::size_t r) {
    if (r != n) throw ShapeError(fmt::format("{} activations are not row-aligned", what));
  };
  if (b.features != nullptr) same(static_cast<std::size_t>(b.features->rows()));
  if (b.logits != nullptr) same(static_cast<std::size_t>(b.logits->rows()));
  if (b.images != nullptr) same(b.images->count);
}

void check_inputs(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                  const net::Network* network) {
  const auto req = requirements(method);
  const auto name = method_name(method);
  if (req.features && (train.batch.features == nullptr || calibration.batch.features == nullptr)) {
    throw ConfigError(fmt::format("{} requires features", name));
  }
  if (req.logits && (train.batch.logits == nullptr || calibration.batch.logits == nullptr)) {
    throw ConfigError(fmt::format("{} requires logits", name));
  }
  if (req.labels && (train.labels == nullptr || (method == Method::kDoc && calibration.labels == nullptr))) {
    throw ConfigError(fmt::format("{} requires labels", name));
  }
  if (req.network && network == nullptr) throw ConfigError(fmt::format("{} requires the network checkpoint", name));
  check_rows(train.batch, "training");
  check_rows(calibration.batch, "calibration");
  if (train.labels != nullptr && train.labels->size() != train.batch.rows()) {
    throw ShapeError("training labels are not row-aligned");
  }
  if (calibration.labels != nullptr && calibration.labels->size() != calibration.batch.rows()) {
    throw ShapeError("calibration labels are not row-aligned");
  }
}

std::unique_ptr<Detector> fit_untuned(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                                      const net::Network* network, const DetectorOptions& options) {
  std::unique_ptr<Detector> d;
  switch (method) {
    case Method::kTauSoftmax:
      d = std::make_unique<TauSoftmax>();
      break;
    case Method::kTauSigmoid:
      d = std::make_unique<TauSigmoid>();
      break;
    case Method::kDoc: {
      const auto& logits = *calibration.batch.logits;
      std::vector<std::vector<double>> by_class(static_cast<std::size_t>(logits.cols()));
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = (*calibration.labels)[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw InvalidLabelError(fmt::format("calibration label {} out of range", y));
        by_class[static_cast<std::size_t>(y)].push_back(scorers::logistic(logits(i, y)));
      }
      auto doc = std::make_unique<Doc>(scorers::doc_fit(by_class, options.tpr));
      doc->set_threshold(0.0);
      return doc;
    }
    case Method::kOdin:
      options.odin.validate();
      d = std::make_unique<Odin>(*network, options.odin);
      break;
    case Method::kOpenMax:
      d = std::make_unique<OpenMax>(openmax::fit_openmax(*train.batch.logits, *train.labels, options.openmax));
      break;
    case Method::kOcsvm:
      d = std::make_unique<Ocsvm>(ocsvm::ocsvm_fit(*train.batch.features, options.ocsvm));
      break;
    case Method::kMahalanobis: {
      const int k = train.batch.logits != nullptr
                        ? static_cast<int>(train.batch.logits->cols())
                        : *std::max_element(train.labels->begin(), train.labels->end()) + 1;
      d = std::make_unique<Mahalanobis>(mahalanobis::mahalanobis_fit(*train.batch.features, *train.labels, k));
      break;
    }
  }
  d->set_threshold(scorers::calibrate_threshold(d->scores(calibration.batch), options.tpr));
  return d;
}

}  // namespace

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kTauSoftmax:
      return "tau-softmax";
    case Method::kTauSigmoid:
      return "tau-sigmoid";
    case Method::kDoc:
      return "doc";
    case Method::kOdin:
      return "odin";
    case Method::kOpenMax:
      return "openmax";
    case Method::kOcsvm:
      return "ocsvm";
    case Method::kMahalanobis:
      return "mahalanobis";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : kMethods) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError(fmt::format("unknown detector method '{}'", name));
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods(std::begin(kMethods), std::end(kMethods));
  return methods;
}

std::size_t ActivationBatch::rows() const {
  if (features != nullptr) return static_cast<std::size_t>(features->rows());
  if (logits != nullptr) return static_cast<std::size_t>(logits->rows());
  if (images != nullptr) return images->count;
  return 0;
}

Requirements requirements(Method method) {
  switch (method) {
    case Method::kTauSoftmax:
    case Method::kTauSigmoid:
      return {false, true, false, false};
    case Method::kDoc:
      return {false, true, true, false};
    case Method::kOdin:
      return {false, true, false, true};
    case Method::kOpenMax:
      return {false, true, true, false};
    case Method::kOcsvm:
      return {true, true, false, false};
    case Method::kMahalanobis:
      return {true, false, true, false};
  }
  return {};
}

void Bundle::set(const std::string& key, double value) { set(key, hex(value)); }

void Bundle::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : fields) {
    if (k == key) {
      v = value;
      return;
    }
  }
  fields.emplace_back(key, value);
}

const std::string& Bundle::get(const std::string& key) const {
  for (const auto& [k, v] : fields) {
    if (k == key) return v;
  }
  throw FormatError(fmt::format("detector bundle lacks field '{}'", key));
}

double Bundle::get_double(const std::string& key) const { return parse_number(get(key)); }

const RowMatrix& Bundle::block(const std::string& name) const {
  const auto it = blocks.find(name);
  if (it == blocks.end()) throw FormatError(fmt::format("detector bundle lacks block '{}'", name));
  return it->second;
}

void Bundle::write(std::ostream& out) const {
  out << "oskit-detector 1\n";
  for (const auto& [k, v] : fields) out << k << ' ' << v << '\n';
  for (const auto& [name, m] : blocks) {
    out << "block " << name << '\n';
    data::write_matrix_block(out, m);
    out << '\n';
  }
  if (!checkpoint.empty()) {
    out << "checkpoint " << checkpoint.size() << '\n';
    out.write(checkpoint.data(), static_cast<std::streamsize>(checkpoint.size()));
    out << '\n';
  }
  out << "end\n";
  if (!out) throw DataError("failed to write detector bundle");
}

Bundle Bundle::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "oskit-detector 1") throw FormatError("not a detector bundle");
  Bundle b;
  while (std::getline(in, line)) {
    if (line == "end") return b;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError(fmt::format("bad bundle line '{}'", line));
    const std::string key = line.substr(0, space);
    const std::string value = line.substr(space + 1);
    if (key == "block") {
      b.blocks[value] = data::read_matrix_block(in);
      in.ignore(1);
    } else if (key == "checkpoint") {
      const auto size = static_cast<std::size_t>(parse_number(value));
      b.checkpoint.resize(size);
      if (!in.read(b.checkpoint.data(), static_cast<std::streamsize>(size))) throw FormatError("truncated checkpoint");
      in.ignore(1);
    } else {
      b.fields.emplace_back(key, value);
    }
  }
  throw FormatError("detector bundle is truncated");
}

std::vector<int> Detector::closed_set_labels(const ActivationBatch& batch) const {
  return argmax_rows(need(batch.logits, "logits", method()));
}

void Detector::set_threshold(double delta) {
  if (!std::isfinite(delta)) throw NumericError("detector threshold must be finite");
  threshold_ = delta;
}

std::vector<scorers::Decision> Detector::decide(const ActivationBatch& batch) const {
  const auto s = scores(batch);
  const auto heads = closed_set_labels(batch);
  std::vector<scorers::Decision> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = scorers::decide(s[i], threshold_, heads[i]);
  return out;
}

Bundle Detector::to_bundle() const {
  Bundle b;
  b.set("method", std::string(method_name(method())));
  b.set("threshold", threshold_);
  save_state(b);
  return b;
}

void Detector::save(std::ostream& out) const { to_bundle().write(out); }

void Detector::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  save(out);
}

std::unique_ptr<Detector> load_detector(std::istream& in) {
  const Bundle b = Bundle::read(in);
  const Method method = parse_method(b.get("method"));
  std::unique_ptr<Detector> d;
  switch (method) {
    case Method::kTauSoftmax:
      d = std::make_unique<TauSoftmax>();
      break;
    case Method::kTauSigmoid:
      d = std::make_unique<TauSigmoid>();
      break;
    case Method::kDoc:
      d = std::make_unique<Doc>(to_vector(b.block("thresholds")));
      break;
    case Method::kOdin: {
      std::istringstream ck(b.checkpoint);
      d = std::make_unique<Odin>(net::load_checkpoint(ck),
                                 scorers::OdinParams{b.get_double("temperature"), b.get_double("epsilon")});
      break;
    }
    case Method::kOpenMax: {
      openmax::OpenMaxModel model;
      model.alpha = static_cast<int>(b.get_double("alpha"));
      model.mavs = b.block("mavs");
      const auto& w = b.block("weibull");
      for (Eigen::Index k = 0; k < w.rows(); ++k) {
        model.weibulls.push_back(openmax::WeibullModel{w(k, 0), w(k, 1), static_cast<int>(w(k, 2)), static_cast<int>(k)});
      }
      d = std::make_unique<OpenMax>(std::move(model));
      break;
    }
    case Method::kOcsvm: {
      ocsvm::OcsvmModel model;
      model.rho = b.get_double("rho");
      model.gamma = b.get_double("gamma");
      model.nu = b.get_double("nu");
      model.support_vectors = b.block("support_vectors");
      model.alphas = to_vector(b.block("alphas"));
      d = std::make_unique<Ocsvm>(std::move(model));
      break;
    }
    case Method::kMahalanobis:
      d = std::make_unique<Mahalanobis>(
          mahalanobis::from_moments(b.block("means"), b.block("covariance"), b.get_double("lambda")));
      break;
  }
  d->set_threshold(b.get_double("threshold"));
  return d;
}

std::unique_ptr<Detector> load_detector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open detector bundle '{}'", path.string()));
  return load_detector(in);
}

std::unique_ptr<Detector> fit_detector(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                                       const net::Network* network, const DetectorOptions& options) {
  check_inputs(method, train, calibration, network);
  return fit_untuned(method, train, calibration, network, options);
}

std::unique_ptr<Detector> fit_detector_tuned(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                                             const ActivationBatch& noise, const net::Network* network,
                                             const DetectorOptions& options, TuningLog* log) {
  check_inputs(method, train, calibration, network);
  check_rows(noise, "noise");
  std::vector<DetectorOptions> grid;
  std::vector<std::string> labels;
  switch (method) {
    case Method::kOdin:
      for (const auto& p : scorers::odin_grid()) {
        DetectorOptions o = options;
        o.odin = p;
        grid.push_back(o);
        labels.push_back(fmt::format("T={} epsilon={}", p.temperature, p.epsilon));
      }
      break;
    case Method::kOpenMax:
      for (const auto& p : openmax::openmax_grid()) {
        DetectorOptions o = options;
        o.openmax = p;
        grid.push_back(o);
        labels.push_back(fmt::format("tail={} alpha={}", p.tail_size, p.alpha));
      }
      break;
    case Method::kOcsvm: {
      const double base = options.ocsvm.gamma > 0.0 ? options.ocsvm.gamma : ocsvm::default_gamma(*train.batch.features);
      for (const auto& p : ocsvm::ocsvm_grid(base)) {
        DetectorOptions o = options;
        o.ocsvm.nu = p.nu;
        o.ocsvm.gamma = p.gamma;
        grid.push_back(o);
        labels.push_back(fmt::format("nu={} gamma={:.6g}", p.nu, p.gamma));
      }
      break;
    }
    default:
      grid.push_back(options);
      labels.emplace_back("default");
      break;
  }
  std::unique_ptr<Detector> best;
  double best_auroc = -1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::unique_ptr<Detector> d;
    try {
      d = fit_untuned(method, train, calibration, network, grid[g]);
    } catch (const DataError&) {
      // e.g. a tail size larger than a class's correct samples: skip the grid point.
      if (log != nullptr) log->grid.emplace_back(labels[g], std::nan(""));
      continue;
    }
    const double a = metrics::auroc(d->scores(calibration.batch), d->scores(noise));
    if (log != nullptr) log->grid.emplace_back(labels[g], a);
    if (a > best_auroc) {
      best_auroc = a;
      best = std::move(d);
      if (log != nullptr) log->best = labels[g];
    }
  }
  if (!best) throw DataError(fmt::format("no {} grid point could be fitted", method_name(method)));
  return best;
}

}  // namespace oskit::detect
