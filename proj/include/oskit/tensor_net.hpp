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
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "oskit/datasets.hpp"
#include "oskit/tensor.hpp"

namespace oskit::net {

/// 2-D convolution with symmetric zero padding.
struct ConvSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};
/// 2x2 max pooling with stride 2.
struct MaxPoolSpec {
  friend bool operator==(const MaxPoolSpec&, const MaxPoolSpec&) = default;
};
struct DenseSpec {
  int width = 0;
  friend bool operator==(const DenseSpec&, const DenseSpec&) = default;
};
struct ReluSpec {
  friend bool operator==(const ReluSpec&, const ReluSpec&) = default;
};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, DenseSpec, ReluSpec>;

/// Layer menu plus input geometry. The last layer must be dense (the logits); the
/// output of the layer before it is the penultimate feature vector.
struct Architecture {
  Shape input;
  std::vector<LayerSpec> layers;

  /// Text form, one layer per line: "input 1 28 28", "conv 32 5 1 2" (filters, kernel,
  /// stride, padding), "maxpool", "relu", "dense 2".
  std::string to_text() const;
  static Architecture parse(std::string_view text);

  /// LeNet++: three blocks of [conv5x5 -> conv5x5 -> maxpool] with 32/64/128 filters
  /// (padding 2, ReLU), a feature layer of width \p feature_dim and a linear classifier.
  static Architecture lenet_plus_plus(int num_classes, int feature_dim = 2);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

std::size_t parameter_count(const Architecture& arch);

class Network {
 public:
  Network() = default;
  /// Builds a network with all parameters zero. Throws ShapeError for invalid architectures.
  explicit Network(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> layer_params(std::size_t layer);
  std::span<const double> layer_params(std::size_t layer) const;
  /// Output geometry of each layer (dense layers report C = width, H = W = 1).
  const std::vector<Shape>& layer_shapes() const { return shapes_; }

  /// Kaiming-uniform (fan-in) weights and zero biases.
  void initialize(std::uint64_t seed);

  /// Applies only the final dense layer to a feature vector.
  std::vector<double> logits_from_features(std::span<const double> features) const;

  /// Input pixel standardization the network was trained with.
  data::Standardization standardization;

 private:
  Architecture arch_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  int num_classes_ = 0;
  int feature_dim_ = 0;
};

struct ForwardOutput {
  RowMatrix features;  ///< n x feature_dim
  RowMatrix logits;    ///< n x K
};

/// Batch forward pass; deterministic given the parameters.
ForwardOutput forward(const Network& net, const Images& batch);

/// Per-sample activation record used by the backward pass.
struct Trace {
  std::vector<std::vector<double>> activations;  ///< [0] = input, [i + 1] = output of layer i
  std::vector<std::vector<std::uint32_t>> argmax;  ///< max-pool winners per layer

  std::span<const double> logits() const { return activations.back(); }
  std::span<const double> features() const { return activations[activations.size() - 2]; }
};

void forward_sample(const Network& net, std::span<const double> x, Trace& trace);

/// Back-propagates dL/dlogits (and an optional extra dL/dfeatures term) through the net.
/// Parameter gradients are accumulated into \p grad_params; the input gradient is written
/// to \p grad_input when it is non-empty.
void backward_sample(const Network& net, const Trace& trace, std::span<const double> grad_logits,
                     std::span<const double> grad_features, std::span<double> grad_params,
                     std::span<double> grad_input);

enum class LossRegime { kCrossEntropy, kOneVsRest, kBackgroundReg };
std::string_view regime_name(LossRegime regime);
LossRegime parse_regime(std::string_view name);

/// Entropic open-set / objectosphere terms.
struct EntropicLossParams {
  double margin = 5.0;             ///< hinge margin on known-sample feature magnitude
  double background_weight = 0.1;  ///< weight of the magnitude terms
};

struct LossParams {
  EntropicLossParams entropic;
  /// Per-class multiplier on the negative terms of the one-vs-rest loss.
  std::vector<double> negative_weights;
};

/// One-vs-rest negative weights n_pos(k) / n_neg(k) from training label counts.
std::vector<double> one_vs_rest_weights(std::span<const int> labels, int num_classes);

/// Loss of one sample given its logits and features. Writes dL/dlogits and dL/dfeatures.
double sample_loss(std::span<const double> logits, std::span<const double> features, int label,
                   LossRegime regime, const LossParams& params, std::span<double> grad_logits,
                   std::span<double> grad_features);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> gradients;  ///< same layout as Network::params()
};

/// Mean loss over the batch and its parameter gradient.
LossAndGrad loss_and_grad(const Network& net, const Images& batch, std::span<const int> labels,
                          LossRegime regime, const LossParams& params);

struct SgdHyper {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-5;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdHyper& hyper);

struct TrainConfig {
  int epochs = 20;
  double lr = 0.01;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 15;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  int batch_size = 128;
  std::uint64_t seed = 1;
  LossRegime regime = LossRegime::kCrossEntropy;
  EntropicLossParams entropic;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<EpochLog> log;
};

/// Minibatch SGD. Background samples (any labels) are mixed into each epoch as
/// kBackgroundLabel rows and are required iff the regime is kBackgroundReg.
TrainResult train(const Architecture& arch, const TrainConfig& config,
                  const data::LabeledImages& train_data, const data::LabeledImages& val_data,
                  const data::LabeledImages* background_data = nullptr);

/// Closed-set top-1 accuracy of argmax(logits).
double top1_accuracy(const Network& net, const data::LabeledImages& data);

enum class ScalarObjective {
  kTemperedMaxLogSoftmax,  ///< log max_k softmax(logits / T)_k
};

struct ObjectiveSpec {
  ScalarObjective id = ScalarObjective::kTemperedMaxLogSoftmax;
  double temperature = 1.0;
};

/// Gradient of the scalar objective with respect to the input x.
std::vector<double> input_gradient(const Network& net, std::span<const double> x, const ObjectiveSpec& objective);

/// Checkpoint: "OSKN", u32 version, u32-length-prefixed architecture text, then the
/// little-endian f64 parameters in layer order.
void save_checkpoint(std::ostream& out, const Network& net);
Network load_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace oskit::net
