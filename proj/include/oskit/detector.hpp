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

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oskit/mahalanobis.hpp"
#include "oskit/ocsvm.hpp"
#include "oskit/openmax.hpp"
#include "oskit/scorers.hpp"
#include "oskit/tensor_net.hpp"

namespace oskit::detect {

enum class Method { kTauSoftmax, kTauSigmoid, kDoc, kOdin, kOpenMax, kOcsvm, kMahalanobis };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

/// Row-aligned views of one sample set. Detectors read only what they need.
struct ActivationBatch {
  const RowMatrix* features = nullptr;
  const RowMatrix* logits = nullptr;
  const Images* images = nullptr;  ///< standardized network inputs (ODIN perturbation)

  std::size_t rows() const;
};

struct LabeledBatch {
  ActivationBatch batch;
  const std::vector<int>* labels = nullptr;
};

struct Requirements {
  bool features = false;
  bool logits = false;
  bool labels = false;
  bool network = false;
};

/// Inputs a method needs at fit time.
Requirements requirements(Method method);

/// Text header fields plus named matrix blocks and an optional embedded checkpoint.
struct Bundle {
  std::vector<std::pair<std::string, std::string>> fields;
  std::map<std::string, RowMatrix> blocks;
  std::string checkpoint;

  void set(const std::string& key, double value);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  const RowMatrix& block(const std::string& name) const;

  void write(std::ostream& out) const;
  static Bundle read(std::istream& in);
};

class Detector {
 public:
  virtual ~Detector() = default;

  virtual Method method() const = 0;
  virtual std::vector<double> scores(const ActivationBatch& batch) const = 0;
  /// Closed-set head used for accepted samples. Defaults to the logit argmax.
  virtual std::vector<int> closed_set_labels(const ActivationBatch& batch) const;

  double threshold() const { return threshold_; }
  virtual void set_threshold(double delta);

  /// Accept with the closed-set label when S(x) >= delta, otherwise reject.
  std::vector<scorers::Decision> decide(const ActivationBatch& batch) const;

  /// One line describing the fitted hyperparameters.
  virtual std::string describe() const = 0;

  Bundle to_bundle() const;
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 protected:
  virtual void save_state(Bundle& bundle) const = 0;
  double threshold_ = 0.0;
};

std::unique_ptr<Detector> load_detector(std::istream& in);
std::unique_ptr<Detector> load_detector(const std::filesystem::path& path);

struct DetectorOptions {
  double tpr = 0.95;
  scorers::OdinParams odin;
  openmax::OpenMaxParams openmax;
  ocsvm::OcsvmParams ocsvm;
};

/// Fits on \p train and calibrates the threshold at \p options.tpr on \p calibration.
std::unique_ptr<Detector> fit_detector(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                                       const net::Network* network, const DetectorOptions& options);

struct TuningLog {
  std::vector<std::pair<std::string, double>> grid;  ///< setting, noise AUROC
  std::string best;
};

/// Grid search over the method's hyperparameters, maximising calibration-vs-noise AUROC.
std::unique_ptr<Detector> fit_detector_tuned(Method method, const LabeledBatch& train, const LabeledBatch& calibration,
                                             const ActivationBatch& noise, const net::Network* network,
                                             const DetectorOptions& options, TuningLog* log = nullptr);

}  // namespace oskit::detect
