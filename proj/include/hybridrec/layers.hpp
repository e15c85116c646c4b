// Copyright 2026 The hybridrec Authors.
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
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridrec/tensor.hpp"

namespace hybridrec {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

enum class LayerKind {
  dense,
  dropout,
  relu,
  leaky_relu,
  sigmoid,
  softmax,
  conv2d,
  batch_norm,
  max_pool2d,
  flatten,
  reshape,
  lstm,
  global_max_pool1d,
  embedding,
  dot,
  concatenate,
  lambda,
};

std::string_view kind_name(LayerKind kind);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Single-input layer. forward() caches what backward() needs; backward()
/// consumes that cache, so each forward pairs with at most one backward.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }

 protected:
  void mark_forward() { pending_ = true; }
  void consume_forward();

 private:
  bool pending_ = false;
};

double glorot_limit(std::size_t fan_in, std::size_t fan_out);
void fill_uniform(Tensor& t, double limit, Rng& rng);

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Rng& rng);
  LayerKind kind() const override { return LayerKind::dense; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  Parameter weight_;  // (in, out)
  Parameter bias_;    // (out)
  Tensor input_;
};

/// Inverted dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); infer mode is the identity.
class Dropout final : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed);
  LayerKind kind() const override { return LayerKind::dropout; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  double rate() const { return rate_; }

 private:
  double rate_;
  Rng rng_;
  std::vector<double> mask_;
  bool identity_ = true;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class LeakyRelu final : public Layer {
 public:
  explicit LeakyRelu(double slope = 0.01) : slope_(slope) {}
  LayerKind kind() const override { return LayerKind::leaky_relu; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double slope_;
  Tensor input_;
};

class Sigmoid final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::sigmoid; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

/// Softmax over the last axis, with max subtraction.
class Softmax final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::softmax; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

/// Stride-1 cross-correlation with same padding. Input and output are NHWC.
class Conv2D final : public Layer {
 public:
  Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel, Rng& rng);
  LayerKind kind() const override { return LayerKind::conv2d; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  std::size_t in_ch_, filters_, kernel_;
  Parameter weight_;  // (k, k, in_ch, filters)
  Parameter bias_;    // (filters)
  Tensor input_;
};

/// Normalizes every channel (last axis) over all other axes.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.99);
  LayerKind kind() const override { return LayerKind::batch_norm; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  const Parameter& running_mean() const { return running_mean_; }
  const Parameter& running_var() const { return running_var_; }

 private:
  std::size_t channels_;
  double eps_, momentum_;
  Parameter gamma_, beta_;
  Parameter running_mean_, running_var_;  // not trainable; saved with the snapshot
  Tensor normalized_;
  std::vector<double> inv_std_;
  Mode last_mode_ = Mode::infer;
};

/// 2x2 window, stride 2, NHWC, ceil mode (odd edges pool over a clipped
/// window). Ties route to the first index in row-major order.
class MaxPool2D final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::max_pool2d; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class Flatten final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

/// Reshapes every batch item to `target` (batch axis excluded).
class Reshape final : public Layer {
 public:
  explicit Reshape(Shape target) : target_(std::move(target)) {}
  LayerKind kind() const override { return LayerKind::reshape; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape target_;
  Shape input_shape_;
};

/// Gated recurrence (input, forget, cell, output gates) over (batch, time,
/// features), returning the full hidden sequence.
class Lstm final : public Layer {
 public:
  Lstm(std::size_t in, std::size_t units, Rng& rng);
  LayerKind kind() const override { return LayerKind::lstm; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&kernel_, &recurrent_, &bias_}; }
  std::size_t units() const { return units_; }

 private:
  std::size_t in_, units_;
  Parameter kernel_;     // (in, 4u)   gate order i, f, g, o
  Parameter recurrent_;  // (u, 4u)
  Parameter bias_;       // (4u)
  Tensor input_;
  Tensor gates_;  // post-activation gates (B, T, 4u)
  Tensor cells_;  // (B, T, u)
  Tensor hidden_; // (B, T, u)
};

/// Max over the time axis of (batch, time, channels).
class GlobalMaxPool1D final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::global_max_pool1d; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Gathers rows of a (rows, dim) table. The input holds integral row indices;
/// the output shape is input shape + (dim). The pad row never receives
/// gradient, and a frozen table receives none at all.
class Embedding final : public Layer {
 public:
  Embedding(Tensor table, bool trainable, std::size_t pad_index);
  LayerKind kind() const override { return LayerKind::embedding; }
  Tensor forward(const Tensor& ids, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&table_}; }
  Parameter& table() { return table_; }
  std::size_t dim() const { return table_.value.dim(1); }
  std::size_t rows() const { return table_.value.dim(0); }

 private:
  Parameter table_;
  std::size_t pad_index_;
  std::vector<std::size_t> ids_;
};

/// y = lo + (hi - lo) * x
class Lambda final : public Layer {
 public:
  Lambda(double lo, double hi) : lo_(lo), hi_(hi) {}
  LayerKind kind() const override { return LayerKind::lambda; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  void set_range(double lo, double hi) { lo_ = lo; hi_ = hi; }

 private:
  double lo_, hi_;
};

/// Inner product of a (batch, f) vector with every position of a
/// (batch, m, f) sequence, giving (batch, m).
class Dot {
 public:
  LayerKind kind() const { return LayerKind::dot; }
  Tensor forward(const Tensor& vec, const Tensor& seq);
  std::pair<Tensor, Tensor> backward(const Tensor& grad_out);

 private:
  Tensor vec_, seq_;
  bool pending_ = false;
};

/// Concatenation along the last axis; leading axes must agree.
class Concatenate {
 public:
  LayerKind kind() const { return LayerKind::concatenate; }
  Tensor forward(std::span<const Tensor* const> inputs);
  std::vector<Tensor> backward(const Tensor& grad_out);

 private:
  std::vector<Shape> shapes_;
  bool pending_ = false;
};

/// Ordered record of executed layers; backward walks it in reverse and
/// empties it.
class GradientTape {
 public:
  void record(Layer& layer) { entries_.push_back(&layer); }
  Tensor backward(Tensor grad);
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<Layer*> entries_;
};

class Sequential {
 public:
  template <class L, class... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out) { return tape_.backward(grad_out); }
  std::vector<Parameter*> parameters();
  std::vector<Layer*> layers();
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  GradientTape tape_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound to the parameter list
/// passed on the first step; non-trainable parameters are skipped.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(std::span<Parameter* const> params);
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

/// Text snapshot of layer parameters. See docs/formats.md.
void save_snapshot(std::ostream& out, std::span<Layer* const> layers);
void load_snapshot(std::istream& in, std::span<Layer* const> layers);

}  // namespace hybridrec
