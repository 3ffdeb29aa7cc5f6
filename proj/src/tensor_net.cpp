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
#include "oskit/tensor_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "oskit/error.hpp"
#include "oskit/seed.hpp"

namespace oskit::net {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Shape output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const ConvSpec& c) {
            if (c.filters <= 0 || c.kernel <= 0 || c.stride <= 0 || c.padding < 0) {
              throw ShapeError("conv layer needs positive filters, kernel and stride");
            }
            const int h = in.height + 2 * c.padding - c.kernel;
            const int w = in.width + 2 * c.padding - c.kernel;
            if (in.channels <= 0 || h < 0 || w < 0) {
              throw ShapeError(fmt::format("conv kernel {} does not fit input {}x{}", c.kernel, in.height, in.width));
            }
            return Shape{c.filters, h / c.stride + 1, w / c.stride + 1};
          },
          [&](const MaxPoolSpec&) {
            if (in.height < 2 || in.width < 2) throw ShapeError("maxpool input smaller than 2x2");
            return Shape{in.channels, in.height / 2, in.width / 2};
          },
          [&](const DenseSpec& d) {
            if (d.width <= 0) throw ShapeError("dense layer needs a positive width");
            return Shape{d.width, 1, 1};
          },
          [&](const ReluSpec&) { return in; },
      },
      layer);
}

std::size_t layer_param_count(const LayerSpec& layer, const Shape& in) {
  if (const auto* c = std::get_if<ConvSpec>(&layer)) {
    return static_cast<std::size_t>(c->filters) * (in.channels * c->kernel * c->kernel + 1);
  }
  if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    return static_cast<std::size_t>(d->width) * (in.size() + 1);
  }
  return 0;
}

// Unfolds the (zero-padded) input into a (C*k*k) x (OH*OW) row-major patch matrix.
void im2col(const ConvSpec& spec, const Shape& in_shape, const Shape& out_shape, std::span<const double> x,
            RowMatrix& cols) {
  const int k = spec.kernel;
  const int s = spec.stride;
  const int pad = spec.padding;
  const int oh = out_shape.height;
  const int ow = out_shape.width;
  cols.resize(static_cast<Eigen::Index>(in_shape.channels) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < in_shape.channels; ++c) {
    const double* in_c = x.data() + static_cast<std::size_t>(c) * in_shape.height * in_shape.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + ky - pad;
          double* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= in_shape.height) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = in_c + static_cast<std::size_t>(iy) * in_shape.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s + kx - pad;
            dst[ox] = (ix >= 0 && ix < in_shape.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adds a patch-matrix gradient back onto the input positions it was read from.
void col2im(const ConvSpec& spec, const Shape& in_shape, const Shape& out_shape, const RowMatrix& cols,
            std::span<double> dx) {
  const int k = spec.kernel;
  const int s = spec.stride;
  const int pad = spec.padding;
  const int oh = out_shape.height;
  const int ow = out_shape.width;
  std::fill(dx.begin(), dx.end(), 0.0);
  for (int c = 0; c < in_shape.channels; ++c) {
    double* dx_c = dx.data() + static_cast<std::size_t>(c) * in_shape.height * in_shape.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= in_shape.height) continue;
          double* dst = dx_c + static_cast<std::size_t>(iy) * in_shape.width;
          const double* src = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s + kx - pad;
            if (ix >= 0 && ix < in_shape.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

void conv_forward(const ConvSpec& spec, const Shape& in_shape, const Shape& out_shape,
                  std::span<const double> params, std::span<const double> x, std::vector<double>& out) {
  thread_local RowMatrix cols;
  im2col(spec, in_shape, out_shape, x, cols);
  const Eigen::Index patch = cols.rows();
  const Eigen::Index positions = cols.cols();
  const ConstRowMap weights(params.data(), spec.filters, patch);
  const double* bias = params.data() + static_cast<std::size_t>(spec.filters) * patch;
  out.resize(static_cast<std::size_t>(spec.filters * positions));
  RowMap o(out.data(), spec.filters, positions);
  o.noalias() = weights * cols;
  for (int f = 0; f < spec.filters; ++f) o.row(f).array() += bias[f];
}

void conv_backward(const ConvSpec& spec, const Shape& in_shape, const Shape& out_shape,
                   std::span<const double> params, std::span<const double> x, std::span<const double> dout,
                   std::span<double> dparams, std::span<double> dx) {
  thread_local RowMatrix cols;
  thread_local RowMatrix dcols;
  const Eigen::Index patch = static_cast<Eigen::Index>(in_shape.channels) * spec.kernel * spec.kernel;
  const Eigen::Index positions = static_cast<Eigen::Index>(out_shape.height) * out_shape.width;
  const ConstRowMap g(dout.data(), spec.filters, positions);
  if (!dparams.empty()) {
    im2col(spec, in_shape, out_shape, x, cols);
    RowMap dw(dparams.data(), spec.filters, patch);
    dw.noalias() += g * cols.transpose();
    double* db = dparams.data() + static_cast<std::size_t>(spec.filters) * patch;
    for (int f = 0; f < spec.filters; ++f) db[f] += g.row(f).sum();
  }
  if (!dx.empty()) {
    const ConstRowMap weights(params.data(), spec.filters, patch);
    dcols.noalias() = weights.transpose() * g;
    col2im(spec, in_shape, out_shape, dcols, dx);
  }
}

void dense_forward(int width, std::span<const double> params, std::span<const double> x, std::vector<double>& out) {
  const std::size_t in = x.size();
  const double* bias = params.data() + static_cast<std::size_t>(width) * in;
  out.resize(width);
  for (int j = 0; j < width; ++j) {
    const double* w = params.data() + static_cast<std::size_t>(j) * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    out[j] = acc + bias[j];
  }
}

void dense_backward(int width, std::span<const double> params, std::span<const double> x,
                    std::span<const double> dout, std::span<double> dparams, std::span<double> dx) {
  const std::size_t in = x.size();
  if (!dparams.empty()) {
    for (int j = 0; j < width; ++j) {
      double* dw = dparams.data() + static_cast<std::size_t>(j) * in;
      const double g = dout[j];
      for (std::size_t i = 0; i < in; ++i) dw[i] += g * x[i];
      dparams[static_cast<std::size_t>(width) * in + j] += g;
    }
  }
  if (!dx.empty()) {
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int j = 0; j < width; ++j) {
      const double* w = params.data() + static_cast<std::size_t>(j) * in;
      const double g = dout[j];
      for (std::size_t i = 0; i < in; ++i) dx[i] += w[i] * g;
    }
  }
}

void softmax(std::span<const double> logits, double inv_temperature, std::span<double> out) {
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l * inv_temperature);
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] * inv_temperature - m);
    s += out[k];
  }
  for (double& p : out) p /= s;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string format_double(double v) { return fmt::format("{:a}", v); }

double parse_double(const std::string& token) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) throw ShapeError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("bad number '{}' in architecture text", token));
  }
}

}  // namespace

std::string Architecture::to_text() const {
  std::string text = fmt::format("input {} {} {}\n", input.channels, input.height, input.width);
  for (const auto& layer : layers) {
    text += std::visit(Overloaded{
                           [](const ConvSpec& c) {
                             return fmt::format("conv {} {} {} {}\n", c.filters, c.kernel, c.stride, c.padding);
                           },
                           [](const MaxPoolSpec&) { return std::string("maxpool\n"); },
                           [](const DenseSpec& d) { return fmt::format("dense {}\n", d.width); },
                           [](const ReluSpec&) { return std::string("relu\n"); },
                       },
                       layer);
  }
  return text;
}

Architecture Architecture::parse(std::string_view text) {
  Architecture arch;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_input = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string op;
    if (!(ls >> op) || op.starts_with('#')) continue;
    auto ints = [&](int count) {
      std::vector<int> v(count);
      for (int& x : v) {
        if (!(ls >> x)) throw FormatError(fmt::format("architecture line '{}' needs {} integers", line, count));
      }
      std::string extra;
      if (ls >> extra) throw FormatError(fmt::format("trailing tokens in architecture line '{}'", line));
      return v;
    };
    if (op == "input") {
      const auto v = ints(3);
      arch.input = Shape{v[0], v[1], v[2]};
      have_input = true;
    } else if (op == "conv") {
      std::vector<int> v;
      int x = 0;
      while (ls >> x) v.push_back(x);
      if (v.size() < 2 || v.size() > 4) throw FormatError(fmt::format("bad conv line '{}'", line));
      arch.layers.emplace_back(ConvSpec{v[0], v[1], v.size() > 2 ? v[2] : 1, v.size() > 3 ? v[3] : 0});
    } else if (op == "maxpool") {
      ints(0);
      arch.layers.emplace_back(MaxPoolSpec{});
    } else if (op == "relu") {
      ints(0);
      arch.layers.emplace_back(ReluSpec{});
    } else if (op == "dense") {
      arch.layers.emplace_back(DenseSpec{ints(1)[0]});
    } else {
      throw FormatError(fmt::format("unknown layer '{}'", op));
    }
  }
  if (!have_input) throw FormatError("architecture text has no input line");
  return arch;
}

Architecture Architecture::lenet_plus_plus(int num_classes, int feature_dim) {
  Architecture arch;
  arch.input = Shape{1, 28, 28};
  for (int filters : {32, 64, 128}) {
    arch.layers.emplace_back(ConvSpec{filters, 5, 1, 2});
    arch.layers.emplace_back(ReluSpec{});
    arch.layers.emplace_back(ConvSpec{filters, 5, 1, 2});
    arch.layers.emplace_back(ReluSpec{});
    arch.layers.emplace_back(MaxPoolSpec{});
  }
  arch.layers.emplace_back(DenseSpec{feature_dim});
  arch.layers.emplace_back(DenseSpec{num_classes});
  return arch;
}

std::size_t parameter_count(const Architecture& arch) {
  Shape s = arch.input;
  std::size_t total = 0;
  for (const auto& layer : arch.layers) {
    total += layer_param_count(layer, s);
    s = output_shape(layer, s);
  }
  return total;
}

Network::Network(Architecture arch) : arch_(std::move(arch)) {
  if (arch_.input.size() == 0) throw ShapeError("architecture input shape is empty");
  if (arch_.layers.empty() || !std::holds_alternative<DenseSpec>(arch_.layers.back())) {
    throw ShapeError("architecture must end with a dense (logit) layer");
  }
  Shape s = arch_.input;
  std::size_t offset = 0;
  for (const auto& layer : arch_.layers) {
    offsets_.push_back(offset);
    offset += layer_param_count(layer, s);
    s = output_shape(layer, s);
    shapes_.push_back(s);
  }
  offsets_.push_back(offset);
  params_.assign(offset, 0.0);
  num_classes_ = std::get<DenseSpec>(arch_.layers.back()).width;
  feature_dim_ = static_cast<int>(shapes_.size() >= 2 ? shapes_[shapes_.size() - 2].size() : arch_.input.size());
}

std::span<double> Network::layer_params(std::size_t layer) {
  return std::span<double>(params_).subspan(offsets_[layer], offsets_[layer + 1] - offsets_[layer]);
}

std::span<const double> Network::layer_params(std::size_t layer) const {
  return std::span<const double>(params_).subspan(offsets_[layer], offsets_[layer + 1] - offsets_[layer]);
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "init"));
  Shape s = arch_.input;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const auto& layer = arch_.layers[i];
    auto p = layer_params(i);
    std::size_t fan_in = 0;
    std::size_t weights = 0;
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      fan_in = static_cast<std::size_t>(s.channels) * c->kernel * c->kernel;
      weights = fan_in * c->filters;
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      fan_in = s.size();
      weights = fan_in * d->width;
    }
    if (fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t j = 0; j < weights; ++j) p[j] = dist(rng);
      std::fill(p.begin() + static_cast<std::ptrdiff_t>(weights), p.end(), 0.0);
    }
    s = shapes_[i];
  }
}

std::vector<double> Network::logits_from_features(std::span<const double> features) const {
  if (features.size() != static_cast<std::size_t>(feature_dim_)) {
    throw ShapeError(fmt::format("feature vector has {} entries, network expects {}", features.size(), feature_dim_));
  }
  std::vector<double> out;
  dense_forward(num_classes_, layer_params(arch_.layers.size() - 1), features, out);
  return out;
}

void forward_sample(const Network& net, std::span<const double> x, Trace& trace) {
  const auto& arch = net.architecture();
  if (x.size() != arch.input.size()) {
    throw ShapeError(fmt::format("input has {} values, network expects {}", x.size(), arch.input.size()));
  }
  const std::size_t n_layers = arch.layers.size();
  trace.activations.resize(n_layers + 1);
  trace.argmax.resize(n_layers);
  trace.activations[0].assign(x.begin(), x.end());
  Shape in_shape = arch.input;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& in = trace.activations[i];
    auto& out = trace.activations[i + 1];
    const Shape& out_shape = net.layer_shapes()[i];
    const auto& layer = arch.layers[i];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      conv_forward(*c, in_shape, out_shape, net.layer_params(i), in, out);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      dense_forward(d->width, net.layer_params(i), in, out);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      out.resize(in.size());
      for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
    } else {
      const int oh = out_shape.height;
      const int ow = out_shape.width;
      out.resize(out_shape.size());
      auto& arg = trace.argmax[i];
      arg.resize(out_shape.size());
      for (int c = 0; c < in_shape.channels; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * in_shape.height * in_shape.width;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            std::size_t best = base + static_cast<std::size_t>(2 * oy) * in_shape.width + 2 * ox;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * in_shape.width + 2 * ox + dx;
                if (in[idx] > in[best]) best = idx;
              }
            }
            const std::size_t o = (static_cast<std::size_t>(c) * oh + oy) * ow + ox;
            out[o] = in[best];
            arg[o] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
    in_shape = out_shape;
  }
}

void backward_sample(const Network& net, const Trace& trace, std::span<const double> grad_logits,
                     std::span<const double> grad_features, std::span<double> grad_params,
                     std::span<double> grad_input) {
  const auto& arch = net.architecture();
  const std::size_t n_layers = arch.layers.size();
  if (grad_logits.size() != static_cast<std::size_t>(net.num_classes())) {
    throw ShapeError("logit gradient has the wrong length");
  }
  if (!grad_params.empty() && grad_params.size() != net.num_params()) {
    throw ShapeError("parameter gradient buffer has the wrong length");
  }
  std::vector<double> grad(grad_logits.begin(), grad_logits.end());
  std::vector<double> next;
  for (std::size_t i = n_layers; i-- > 0;) {
    const bool need_input = i > 0 || !grad_input.empty();
    const Shape in_shape = i == 0 ? arch.input : net.layer_shapes()[i - 1];
    const auto& in = trace.activations[i];
    std::span<double> dparams;
    if (!grad_params.empty()) {
      const auto lp = net.layer_params(i);
      dparams = grad_params.subspan(static_cast<std::size_t>(lp.data() - net.params().data()), lp.size());
    }
    next.assign(need_input ? in.size() : 0, 0.0);
    const auto& layer = arch.layers[i];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      conv_backward(*c, in_shape, net.layer_shapes()[i], net.layer_params(i), in, grad, dparams, next);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      dense_backward(d->width, net.layer_params(i), in, grad, dparams, next);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      if (need_input) {
        for (std::size_t j = 0; j < in.size(); ++j) next[j] = in[j] > 0.0 ? grad[j] : 0.0;
      }
    } else if (need_input) {
      const auto& arg = trace.argmax[i];
      for (std::size_t o = 0; o < grad.size(); ++o) next[arg[o]] += grad[o];
    }
    if (!need_input) break;
    grad.swap(next);
    // After stepping back through the logit layer, grad is dL/d(features).
    if (i == n_layers - 1 && !grad_features.empty()) {
      if (grad_features.size() != grad.size()) throw ShapeError("feature gradient has the wrong length");
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += grad_features[j];
    }
  }
  if (!grad_input.empty()) {
    if (grad_input.size() != arch.input.size()) throw ShapeError("input gradient buffer has the wrong length");
    std::copy(grad.begin(), grad.end(), grad_input.begin());
  }
}

ForwardOutput forward(const Network& net, const Images& batch) {
  if (batch.shape != net.architecture().input) {
    throw ShapeError(fmt::format("batch images are {}x{}x{}, network expects {}x{}x{}", batch.shape.channels,
                                 batch.shape.height, batch.shape.width, net.architecture().input.channels,
                                 net.architecture().input.height, net.architecture().input.width));
  }
  if (batch.values.size() != batch.count * batch.shape.size()) throw ShapeError("batch storage size mismatch");
  ForwardOutput out;
  out.features.resize(static_cast<Eigen::Index>(batch.count), net.feature_dim());
  out.logits.resize(static_cast<Eigen::Index>(batch.count), net.num_classes());
  Trace trace;
  for (std::size_t i = 0; i < batch.count; ++i) {
    forward_sample(net, batch.sample(i), trace);
    const auto f = trace.features();
    const auto l = trace.logits();
    std::copy(f.begin(), f.end(), out.features.row(static_cast<Eigen::Index>(i)).data());
    std::copy(l.begin(), l.end(), out.logits.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

std::string_view regime_name(LossRegime regime) {
  switch (regime) {
    case LossRegime::kCrossEntropy:
      return "cross_entropy";
    case LossRegime::kOneVsRest:
      return "one_vs_rest";
    case LossRegime::kBackgroundReg:
      return "background_reg";
  }
  return "unknown";
}

LossRegime parse_regime(std::string_view name) {
  if (name == "cross_entropy") return LossRegime::kCrossEntropy;
  if (name == "one_vs_rest") return LossRegime::kOneVsRest;
  if (name == "background_reg") return LossRegime::kBackgroundReg;
  throw ConfigError(fmt::format("unknown loss regime '{}'", name));
}

std::vector<double> one_vs_rest_weights(std::span<const int> labels, int num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  std::size_t total = 0;
  for (int y : labels) {
    if (y < 0 || y >= num_classes) continue;
    counts[y] += 1.0;
    ++total;
  }
  std::vector<double> w(num_classes, 1.0);
  for (int k = 0; k < num_classes; ++k) {
    const double neg = static_cast<double>(total) - counts[k];
    if (neg > 0) w[k] = counts[k] / neg;
  }
  return w;
}

double sample_loss(std::span<const double> logits, std::span<const double> features, int label, LossRegime regime,
                   const LossParams& params, std::span<double> grad_logits, std::span<double> grad_features) {
  const int k_classes = static_cast<int>(logits.size());
  if (label == data::kBackgroundLabel) {
    if (regime != LossRegime::kBackgroundReg) {
      throw InvalidLabelError(fmt::format("background label under the {} regime", regime_name(regime)));
    }
  } else if (label < 0 || label >= k_classes) {
    throw InvalidLabelError(fmt::format("label {} outside 0..{}", label, k_classes - 1));
  }
  std::fill(grad_features.begin(), grad_features.end(), 0.0);

  if (regime == LossRegime::kOneVsRest) {
    double loss = 0.0;
    for (int k = 0; k < k_classes; ++k) {
      const double l = logits[k];
      if (k == label) {
        loss += softplus(-l);
        grad_logits[k] = sigmoid(l) - 1.0;
      } else {
        const double w = params.negative_weights.empty() ? 1.0 : params.negative_weights.at(k);
        loss += w * softplus(l);
        grad_logits[k] = w * sigmoid(l);
      }
    }
    return loss;
  }

  // Log-softmax via log-sum-exp.
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) m = std::max(m, l);
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  const double log_s = std::log(s);
  double loss = 0.0;
  if (label == data::kBackgroundLabel) {
    const double uniform = 1.0 / k_classes;
    for (int k = 0; k < k_classes; ++k) {
      loss -= (logits[k] - m - log_s);
      grad_logits[k] = std::exp(logits[k] - m) / s - uniform;
    }
    loss /= k_classes;
  } else {
    loss = -(logits[label] - m - log_s);
    for (int k = 0; k < k_classes; ++k) grad_logits[k] = std::exp(logits[k] - m) / s;
    grad_logits[label] -= 1.0;
  }

  const double lambda = params.entropic.background_weight;
  if (regime == LossRegime::kBackgroundReg && lambda != 0.0) {
    double sq = 0.0;
    for (double z : features) sq += z * z;
    if (label == data::kBackgroundLabel) {
      loss += lambda * sq;
      for (std::size_t j = 0; j < features.size(); ++j) grad_features[j] = 2.0 * lambda * features[j];
    } else {
      const double norm = std::sqrt(sq);
      const double gap = params.entropic.margin - norm;
      if (gap > 0.0) {
        loss += lambda * gap * gap;
        if (norm > 0.0) {
          for (std::size_t j = 0; j < features.size(); ++j) {
            grad_features[j] = -2.0 * lambda * gap * features[j] / norm;
          }
        }
      }
    }
  }
  return loss;
}

namespace {

// Sums per-sample losses and gradients for the given rows.
double accumulate(const Network& net, std::span<const std::span<const double>> samples, std::span<const int> labels,
                  LossRegime regime, const LossParams& params, std::span<double> grads) {
  Trace trace;
  std::vector<double> dlogits(net.num_classes());
  std::vector<double> dfeatures(net.feature_dim());
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    forward_sample(net, samples[i], trace);
    total += sample_loss(trace.logits(), trace.features(), labels[i], regime, params, dlogits, dfeatures);
    const bool has_feature_grad = regime == LossRegime::kBackgroundReg && params.entropic.background_weight != 0.0;
    backward_sample(net, trace, dlogits, has_feature_grad ? std::span<const double>(dfeatures) : std::span<const double>(),
                    grads, {});
  }
  return total;
}

}  // namespace

LossAndGrad loss_and_grad(const Network& net, const Images& batch, std::span<const int> labels, LossRegime regime,
                          const LossParams& params) {
  if (batch.shape != net.architecture().input) throw ShapeError("batch shape does not match the network input");
  if (labels.size() != batch.count) throw ShapeError("label count does not match batch size");
  if (batch.count == 0) throw DataError("empty batch");
  std::vector<std::span<const double>> samples;
  samples.reserve(batch.count);
  for (std::size_t i = 0; i < batch.count; ++i) samples.push_back(batch.sample(i));
  LossAndGrad out;
  out.gradients.assign(net.num_params(), 0.0);
  out.loss = accumulate(net, samples, labels, regime, params, out.gradients);
  const double inv = 1.0 / static_cast<double>(batch.count);
  out.loss *= inv;
  for (double& g : out.gradients) g *= inv;
  return out;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdHyper& hyper) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = hyper.momentum * velocity[i] + grads[i] + hyper.weight_decay * params[i];
    params[i] -= hyper.lr * velocity[i];
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be > 0");
  if (!(entropic.margin >= 0.0)) throw ConfigError("entropic margin must be >= 0");
  if (!(entropic.background_weight >= 0.0)) throw ConfigError("background weight must be >= 0");
}

double top1_accuracy(const Network& net, const data::LabeledImages& data) {
  if (data.size() == 0) return 0.0;
  const auto out = forward(net, data.images);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < out.logits.rows(); ++i) {
    Eigen::Index best = 0;
    out.logits.row(i).maxCoeff(&best);
    if (best == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(const Architecture& arch, const TrainConfig& config, const data::LabeledImages& train_data,
                  const data::LabeledImages& val_data, const data::LabeledImages* background_data) {
  config.validate();
  if (train_data.size() == 0) throw DataError("training set is empty");
  const bool background_regime = config.regime == LossRegime::kBackgroundReg;
  if (background_regime && (background_data == nullptr || background_data->size() == 0)) {
    throw ConfigError("background_reg regime requires background data");
  }
  if (!background_regime && background_data != nullptr && background_data->size() > 0) {
    throw ConfigError("background data is only used by the background_reg regime");
  }
  TrainResult result{Network(arch), {}};
  Network& net = result.net;
  if (train_data.images.shape != arch.input) throw ShapeError("training images do not match the architecture input");
  for (int y : train_data.labels) {
    if (y < 0 || y >= net.num_classes()) throw InvalidLabelError(fmt::format("training label {} out of range", y));
  }
  net.initialize(config.seed);

  LossParams loss_params;
  loss_params.entropic = config.entropic;
  if (config.regime == LossRegime::kOneVsRest) {
    loss_params.negative_weights = one_vs_rest_weights(train_data.labels, net.num_classes());
  }

  // Rows [0, n) are known samples, [n, n + m) background samples.
  const std::size_t n_known = train_data.size();
  const std::size_t n_background = background_regime ? background_data->size() : 0;
  std::vector<std::size_t> order(n_known + n_background);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto sample_at = [&](std::size_t row) {
    return row < n_known ? train_data.images.sample(row) : background_data->images.sample(row - n_known);
  };
  auto label_at = [&](std::size_t row) { return row < n_known ? train_data.labels[row] : data::kBackgroundLabel; };

  std::mt19937_64 rng(derive_seed(config.seed, "shuffle"));
  std::vector<double> velocity(net.num_params(), 0.0);
  std::vector<double> grads(net.num_params());
  std::vector<std::span<const double>> batch;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr * std::pow(config.lr_decay_factor, epoch / config.lr_decay_every);
    const SgdHyper hyper{lr, config.momentum, config.weight_decay};
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(sample_at(order[i]));
        batch_labels.push_back(label_at(order[i]));
      }
      std::fill(grads.begin(), grads.end(), 0.0);
      const double loss = accumulate(net, batch, batch_labels, config.regime, loss_params, grads);
      if (!std::isfinite(loss)) throw NumericError(fmt::format("non-finite training loss in epoch {}", epoch + 1));
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (double& g : grads) g *= inv;
      sgd_step(net.params(), grads, velocity, hyper);
      epoch_loss += loss;
    }
    result.log.push_back(EpochLog{epoch + 1, lr, epoch_loss / static_cast<double>(order.size()),
                                  top1_accuracy(net, val_data)});
  }
  return result;
}

std::vector<double> input_gradient(const Network& net, std::span<const double> x, const ObjectiveSpec& objective) {
  if (objective.id != ScalarObjective::kTemperedMaxLogSoftmax) {
    throw ConfigError(fmt::format("unsupported scalar objective id {}", static_cast<int>(objective.id)));
  }
  if (!(objective.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  Trace trace;
  forward_sample(net, x, trace);
  const auto logits = trace.logits();
  std::vector<double> p(logits.size());
  const double inv_t = 1.0 / objective.temperature;
  softmax(logits, inv_t, p);
  const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  // d log p_top / d logit_j = (1/T) (1[j = top] - p_j)
  std::vector<double> dlogits(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) dlogits[j] = inv_t * ((j == top ? 1.0 : 0.0) - p[j]);
  std::vector<double> grad(x.size());
  backward_sample(net, trace, dlogits, {}, {}, grad);
  return grad;
}

namespace {

constexpr char kCheckpointMagic[4] = {'O', 'S', 'K', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Network& net) {
  std::string text = net.architecture().to_text();
  text += fmt::format("standardize {} {}\n", format_double(net.standardization.mean),
                      format_double(net.standardization.stddev));
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto p = net.params();
  out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out) throw DataError("failed to write checkpoint");
}

Network load_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated checkpoint");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  if (read_u32(in) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const std::uint32_t length = read_u32(in);
  std::string text(length, '\0');
  if (!in.read(text.data(), length)) throw FormatError("truncated checkpoint descriptor");

  std::string arch_text;
  data::Standardization standardization;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.starts_with("standardize ")) {
      std::istringstream ls(line.substr(12));
      std::string mean, stddev;
      ls >> mean >> stddev;
      standardization = {parse_double(mean), parse_double(stddev)};
    } else {
      arch_text += line + "\n";
    }
  }
  Network net(Architecture::parse(arch_text));
  net.standardization = standardization;
  auto p = net.params();
  if (!in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)))) {
    throw FormatError("truncated checkpoint parameters");
  }
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open '{}' for writing", path.string()));
  save_checkpoint(out, net);
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  return load_checkpoint(in);
}

}  // namespace oskit::net
