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

#include "hybridrec/layers.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hybridrec {

namespace {

void require_rank(const Tensor& x, std::size_t rank, std::string_view who) {
  if (x.rank() != rank) {
    throw std::invalid_argument(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                                shape_string(x.shape()));
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leakyrelu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batch_norm: return "batchnormalization";
    case LayerKind::max_pool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
    case LayerKind::lstm: return "lstm";
    case LayerKind::global_max_pool1d: return "globalmaxpool1d";
    case LayerKind::embedding: return "embedding";
    case LayerKind::dot: return "dot";
    case LayerKind::concatenate: return "concatenate";
    case LayerKind::lambda: return "lambda";
  }
  return "unknown";
}

void Layer::consume_forward() {
  if (!pending_) throw std::logic_error("backward called without a matching forward");
  pending_ = false;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(Tensor& t, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.values()) v = dist(rng);
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::size_t in, std::size_t out, Rng& rng)
    : in_(in), out_(out), weight_("kernel", Tensor({in, out})), bias_("bias", Tensor({out})) {
  fill_uniform(weight_.value, glorot_limit(in, out), rng);
}

Tensor Dense::forward(const Tensor& x, Mode) {
  require_rank(x, 2, "dense");
  if (x.dim(1) != in_) {
    throw std::invalid_argument("dense: input " + shape_string(x.shape()) + " incompatible with kernel " +
                                shape_string(weight_.value.shape()));
  }
  const std::size_t batch = x.dim(0);
  Tensor y({batch, out_});
  const double* w = weight_.value.data();
  const double* b = bias_.value.data();
  for (std::size_t n = 0; n < batch; ++n) {
    double* yr = y.data() + n * out_;
    std::copy(b, b + out_, yr);
    const double* xr = x.data() + n * in_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = w + i * out_;
      for (std::size_t o = 0; o < out_; ++o) yr[o] += xi * wr[o];
    }
  }
  input_ = x;
  mark_forward();
  return y;
}

Tensor Dense::backward(const Tensor& g) {
  consume_forward();
  const std::size_t batch = input_.dim(0);
  if (g.shape() != Shape{batch, out_}) {
    throw std::invalid_argument("dense backward: gradient " + shape_string(g.shape()) + " vs output " +
                                shape_string(Shape{batch, out_}));
  }
  Tensor dx({batch, in_});
  double* dw = weight_.grad.data();
  double* db = bias_.grad.data();
  const double* w = weight_.value.data();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* gr = g.data() + n * out_;
    const double* xr = input_.data() + n * in_;
    double* dxr = dx.data() + n * in_;
    for (std::size_t o = 0; o < out_; ++o) db[o] += gr[o];
    for (std::size_t i = 0; i < in_; ++i) {
      const double xi = xr[i];
      double* dwr = dw + i * out_;
      const double* wr = w + i * out_;
      double acc = 0.0;
      for (std::size_t o = 0; o < out_; ++o) {
        dwr[o] += xi * gr[o];
        acc += wr[o] * gr[o];
      }
      dxr[i] = acc;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0,1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  mark_forward();
  identity_ = mode == Mode::infer || rate_ == 0.0;
  if (identity_) return x;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.size());
  Tensor y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = unit(rng_) >= rate_ ? keep_scale : 0.0;
    y[i] *= mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& g) {
  consume_forward();
  if (identity_) return g;
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise activations

Tensor Relu::forward(const Tensor& x, Mode) {
  input_ = x;
  mark_forward();
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor Relu::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, input_, "relu backward");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input_[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

Tensor LeakyRelu::forward(const Tensor& x, Mode) {
  input_ = x;
  mark_forward();
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : slope_ * v;
  return y;
}

Tensor LeakyRelu::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, input_, "leakyrelu backward");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input_[i] > 0.0)) dx[i] *= slope_;
  }
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  output_ = y;
  mark_forward();
  return y;
}

Tensor Sigmoid::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, output_, "sigmoid backward");
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0 - output_[i]);
  return dx;
}

Tensor Softmax::forward(const Tensor& x, Mode) {
  if (x.rank() == 0 || x.empty()) throw std::invalid_argument("softmax: empty input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  Tensor y = x;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = y.data() + r * width;
    const double mx = *std::max_element(row, row + width);
    double total = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    for (std::size_t c = 0; c < width; ++c) row[c] /= total;
  }
  output_ = y;
  mark_forward();
  return y;
}

Tensor Softmax::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, output_, "softmax backward");
  const std::size_t width = output_.shape().back();
  const std::size_t rows = output_.size() / width;
  Tensor dx(output_.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = output_.data() + r * width;
    const double* gr = g.data() + r * width;
    double inner = 0.0;
    for (std::size_t c = 0; c < width; ++c) inner += yr[c] * gr[c];
    double* dr = dx.data() + r * width;
    for (std::size_t c = 0; c < width; ++c) dr[c] = yr[c] * (gr[c] - inner);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(std::size_t in_channels, std::size_t filters, std::size_t kernel, Rng& rng)
    : in_ch_(in_channels),
      filters_(filters),
      kernel_(kernel),
      weight_("kernel", Tensor({kernel, kernel, in_channels, filters})),
      bias_("bias", Tensor({filters})) {
  if (kernel % 2 == 0) throw std::invalid_argument("conv2d: same padding needs an odd kernel size");
  const std::size_t area = kernel * kernel;
  fill_uniform(weight_.value, glorot_limit(area * in_channels, area * filters), rng);
}

Tensor Conv2D::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "conv2d");
  if (x.dim(3) != in_ch_) {
    throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " incompatible with kernel " +
                                shape_string(weight_.value.shape()));
  }
  const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
  Tensor y({batch, height, width, filters_});
  const double* w = weight_.value.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        double* out = y.data() + ((n * height + r) * width + c) * filters_;
        std::copy(bias_.value.data(), bias_.value.data() + filters_, out);
        for (std::size_t kr = 0; kr < kernel_; ++kr) {
          const auto ir = static_cast<std::ptrdiff_t>(r + kr) - pad;
          if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t kc = 0; kc < kernel_; ++kc) {
            const auto ic = static_cast<std::ptrdiff_t>(c + kc) - pad;
            if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(width)) continue;
            const double* in = x.data() + ((n * height + ir) * width + ic) * in_ch_;
            const double* wk = w + (kr * kernel_ + kc) * in_ch_ * filters_;
            for (std::size_t ch = 0; ch < in_ch_; ++ch) {
              const double v = in[ch];
              if (v == 0.0) continue;
              const double* wf = wk + ch * filters_;
              for (std::size_t f = 0; f < filters_; ++f) out[f] += v * wf[f];
            }
          }
        }
      }
    }
  }
  input_ = x;
  mark_forward();
  return y;
}

Tensor Conv2D::backward(const Tensor& g) {
  consume_forward();
  const std::size_t batch = input_.dim(0), height = input_.dim(1), width = input_.dim(2);
  if (g.shape() != Shape{batch, height, width, filters_}) {
    throw std::invalid_argument("conv2d backward: gradient " + shape_string(g.shape()) + " vs input " +
                                shape_string(input_.shape()));
  }
  const auto pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
  Tensor dx(input_.shape());
  const double* w = weight_.value.data();
  double* dw = weight_.grad.data();
  double* db = bias_.grad.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double* go = g.data() + ((n * height + r) * width + c) * filters_;
        for (std::size_t f = 0; f < filters_; ++f) db[f] += go[f];
        for (std::size_t kr = 0; kr < kernel_; ++kr) {
          const auto ir = static_cast<std::ptrdiff_t>(r + kr) - pad;
          if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t kc = 0; kc < kernel_; ++kc) {
            const auto ic = static_cast<std::ptrdiff_t>(c + kc) - pad;
            if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(width)) continue;
            const std::size_t offset = ((n * height + ir) * width + ic) * in_ch_;
            const double* in = input_.data() + offset;
            double* din = dx.data() + offset;
            const std::size_t wbase = (kr * kernel_ + kc) * in_ch_ * filters_;
            for (std::size_t ch = 0; ch < in_ch_; ++ch) {
              const double v = in[ch];
              const double* wf = w + wbase + ch * filters_;
              double* dwf = dw + wbase + ch * filters_;
              double acc = 0.0;
              for (std::size_t f = 0; f < filters_; ++f) {
                dwf[f] += v * go[f];
                acc += wf[f] * go[f];
              }
              din[ch] += acc;
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::size_t channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_("gamma", Tensor({channels}, 1.0)),
      beta_("beta", Tensor({channels})),
      running_mean_("moving_mean", Tensor({channels}), false),
      running_var_("moving_variance", Tensor({channels}, 1.0), false) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  if (x.rank() < 2 || x.shape().back() != channels_) {
    throw std::invalid_argument("batchnormalization: input " + shape_string(x.shape()) + " incompatible with " +
                                std::to_string(channels_) + " channels");
  }
  const std::size_t count = x.size() / channels_;
  std::vector<double> mean(channels_, 0.0), var(channels_, 0.0);
  if (mode == Mode::train) {
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = x.data() + i * channels_;
      for (std::size_t c = 0; c < channels_; ++c) mean[c] += row[c];
    }
    for (double& m : mean) m /= static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = x.data() + i * channels_;
      for (std::size_t c = 0; c < channels_; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(count);
    for (std::size_t c = 0; c < channels_; ++c) {
      running_mean_.value[c] = momentum_ * running_mean_.value[c] + (1.0 - momentum_) * mean[c];
      running_var_.value[c] = momentum_ * running_var_.value[c] + (1.0 - momentum_) * var[c];
    }
  } else {
    std::copy(running_mean_.value.data(), running_mean_.value.data() + channels_, mean.begin());
    std::copy(running_var_.value.data(), running_var_.value.data() + channels_, var.begin());
  }
  inv_std_.resize(channels_);
  for (std::size_t c = 0; c < channels_; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

  normalized_ = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < count; ++i) {
    const double* row = x.data() + i * channels_;
    double* nr = normalized_.data() + i * channels_;
    double* yr = y.data() + i * channels_;
    for (std::size_t c = 0; c < channels_; ++c) {
      nr[c] = (row[c] - mean[c]) * inv_std_[c];
      yr[c] = gamma_.value[c] * nr[c] + beta_.value[c];
    }
  }
  last_mode_ = mode;
  mark_forward();
  return y;
}

Tensor BatchNorm::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, normalized_, "batchnormalization backward");
  const std::size_t count = g.size() / channels_;
  std::vector<double> sum_g(channels_, 0.0), sum_gx(channels_, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double* gr = g.data() + i * channels_;
    const double* nr = normalized_.data() + i * channels_;
    for (std::size_t c = 0; c < channels_; ++c) {
      sum_g[c] += gr[c];
      sum_gx[c] += gr[c] * nr[c];
    }
  }
  for (std::size_t c = 0; c < channels_; ++c) {
    beta_.grad[c] += sum_g[c];
    gamma_.grad[c] += sum_gx[c];
  }
  Tensor dx(g.shape());
  const auto n = static_cast<double>(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double* gr = g.data() + i * channels_;
    const double* nr = normalized_.data() + i * channels_;
    double* dr = dx.data() + i * channels_;
    for (std::size_t c = 0; c < channels_; ++c) {
      const double scale = gamma_.value[c] * inv_std_[c];
      if (last_mode_ == Mode::train) {
        dr[c] = scale * (gr[c] - sum_g[c] / n - nr[c] * sum_gx[c] / n);
      } else {
        dr[c] = scale * gr[c];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling, reshaping

Tensor MaxPool2D::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "maxpool2d");
  const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), ch = x.dim(3);
  if (height == 0 || width == 0) throw std::invalid_argument("maxpool2d: empty input " + shape_string(x.shape()));
  // Ceil mode: an odd trailing row or column forms a clipped window.
  const std::size_t oh = (height + 1) / 2, ow = (width + 1) / 2;
  Tensor y({batch, oh, ow, ch});
  argmax_.assign(y.size(), 0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t r = 0; r < oh; ++r) {
      const std::size_t rows = std::min<std::size_t>(2, height - 2 * r);
      for (std::size_t c = 0; c < ow; ++c) {
        const std::size_t cols = std::min<std::size_t>(2, width - 2 * c);
        for (std::size_t k = 0; k < ch; ++k) {
          std::size_t best_idx = ((n * height + 2 * r) * width + 2 * c) * ch + k;
          double best = x[best_idx];
          for (std::size_t dr = 0; dr < rows; ++dr) {
            for (std::size_t dc = 0; dc < cols; ++dc) {
              const std::size_t idx = ((n * height + 2 * r + dr) * width + 2 * c + dc) * ch + k;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          const std::size_t out = ((n * oh + r) * ow + c) * ch + k;
          y[out] = best;
          argmax_[out] = best_idx;
        }
      }
    }
  }
  input_shape_ = x.shape();
  mark_forward();
  return y;
}

Tensor MaxPool2D::backward(const Tensor& g) {
  consume_forward();
  if (g.size() != argmax_.size()) throw std::invalid_argument("maxpool2d backward: gradient size mismatch");
  Tensor dx(input_shape_);
  for (std::size_t i = 0; i < g.size(); ++i) dx[argmax_[i]] += g[i];
  return dx;
}

Tensor Flatten::forward(const Tensor& x, Mode) {
  if (x.rank() < 1) throw std::invalid_argument("flatten: scalar input");
  input_shape_ = x.shape();
  mark_forward();
  const std::size_t batch = x.dim(0);
  return x.reshaped({batch, batch ? x.size() / batch : 0});
}

Tensor Flatten::backward(const Tensor& g) {
  consume_forward();
  return g.reshaped(input_shape_);
}

Tensor Reshape::forward(const Tensor& x, Mode) {
  if (x.rank() < 1) throw std::invalid_argument("reshape: scalar input");
  Shape shape{x.dim(0)};
  shape.insert(shape.end(), target_.begin(), target_.end());
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot map " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  input_shape_ = x.shape();
  mark_forward();
  return x.reshaped(std::move(shape));
}

Tensor Reshape::backward(const Tensor& g) {
  consume_forward();
  return g.reshaped(input_shape_);
}

Tensor GlobalMaxPool1D::forward(const Tensor& x, Mode) {
  require_rank(x, 3, "globalmaxpool1d");
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  if (steps == 0) throw std::invalid_argument("globalmaxpool1d: empty time axis");
  Tensor y({batch, ch});
  argmax_.assign(y.size(), 0);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < ch; ++k) {
      std::size_t best = (n * steps) * ch + k;
      for (std::size_t t = 1; t < steps; ++t) {
        const std::size_t idx = (n * steps + t) * ch + k;
        if (x[idx] > x[best]) best = idx;
      }
      y[n * ch + k] = x[best];
      argmax_[n * ch + k] = best;
    }
  }
  input_shape_ = x.shape();
  mark_forward();
  return y;
}

Tensor GlobalMaxPool1D::backward(const Tensor& g) {
  consume_forward();
  if (g.size() != argmax_.size()) throw std::invalid_argument("globalmaxpool1d backward: gradient size mismatch");
  Tensor dx(input_shape_);
  for (std::size_t i = 0; i < g.size(); ++i) dx[argmax_[i]] += g[i];
  return dx;
}

// ---------------------------------------------------------------------------
// LSTM

Lstm::Lstm(std::size_t in, std::size_t units, Rng& rng)
    : in_(in),
      units_(units),
      kernel_("kernel", Tensor({in, 4 * units})),
      recurrent_("recurrent_kernel", Tensor({units, 4 * units})),
      bias_("bias", Tensor({4 * units})) {
  fill_uniform(kernel_.value, glorot_limit(in, 4 * units), rng);
  fill_uniform(recurrent_.value, 0.08, rng);
  for (std::size_t u = 0; u < units; ++u) bias_.value[units + u] = 1.0;
}

Tensor Lstm::forward(const Tensor& x, Mode) {
  require_rank(x, 3, "lstm");
  if (x.dim(2) != in_) {
    throw std::invalid_argument("lstm: input " + shape_string(x.shape()) + " incompatible with kernel " +
                                shape_string(kernel_.value.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), u = units_, g4 = 4 * units_;
  gates_ = Tensor({batch, steps, g4});
  cells_ = Tensor({batch, steps, u});
  hidden_ = Tensor({batch, steps, u});
  const double* w = kernel_.value.data();
  const double* rw = recurrent_.value.data();
  std::vector<double> z(g4);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy(bias_.value.data(), bias_.value.data() + g4, z.begin());
      const double* xt = x.data() + (n * steps + t) * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        const double xi = xt[i];
        if (xi == 0.0) continue;
        const double* wr = w + i * g4;
        for (std::size_t j = 0; j < g4; ++j) z[j] += xi * wr[j];
      }
      if (t > 0) {
        const double* hp = hidden_.data() + (n * steps + t - 1) * u;
        for (std::size_t i = 0; i < u; ++i) {
          const double hi = hp[i];
          const double* wr = rw + i * g4;
          for (std::size_t j = 0; j < g4; ++j) z[j] += hi * wr[j];
        }
      }
      double* gt = gates_.data() + (n * steps + t) * g4;
      double* ct = cells_.data() + (n * steps + t) * u;
      double* ht = hidden_.data() + (n * steps + t) * u;
      const double* cp = t > 0 ? cells_.data() + (n * steps + t - 1) * u : nullptr;
      for (std::size_t k = 0; k < u; ++k) {
        const double ig = sigmoid(z[k]);
        const double fg = sigmoid(z[u + k]);
        const double cg = std::tanh(z[2 * u + k]);
        const double og = sigmoid(z[3 * u + k]);
        gt[k] = ig;
        gt[u + k] = fg;
        gt[2 * u + k] = cg;
        gt[3 * u + k] = og;
        ct[k] = (cp ? fg * cp[k] : 0.0) + ig * cg;
        ht[k] = og * std::tanh(ct[k]);
      }
    }
  }
  input_ = x;
  mark_forward();
  return hidden_;
}

Tensor Lstm::backward(const Tensor& g) {
  consume_forward();
  require_same_shape(g, hidden_, "lstm backward");
  const std::size_t batch = input_.dim(0), steps = input_.dim(1), u = units_, g4 = 4 * units_;
  Tensor dx(input_.shape());
  const double* w = kernel_.value.data();
  const double* rw = recurrent_.value.data();
  double* dw = kernel_.grad.data();
  double* drw = recurrent_.grad.data();
  double* db = bias_.grad.data();
  std::vector<double> dh_next(u), dc_next(u), dz(g4);
  for (std::size_t n = 0; n < batch; ++n) {
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (std::size_t step = steps; step-- > 0;) {
      const std::size_t at = n * steps + step;
      const double* gt = gates_.data() + at * g4;
      const double* ct = cells_.data() + at * u;
      const double* cp = step > 0 ? cells_.data() + (at - 1) * u : nullptr;
      const double* go = g.data() + at * u;
      for (std::size_t k = 0; k < u; ++k) {
        const double ig = gt[k], fg = gt[u + k], cg = gt[2 * u + k], og = gt[3 * u + k];
        const double dh = go[k] + dh_next[k];
        const double tc = std::tanh(ct[k]);
        const double dc = dh * og * (1.0 - tc * tc) + dc_next[k];
        dz[k] = dc * cg * ig * (1.0 - ig);
        dz[u + k] = (cp ? dc * cp[k] : 0.0) * fg * (1.0 - fg);
        dz[2 * u + k] = dc * ig * (1.0 - cg * cg);
        dz[3 * u + k] = dh * tc * og * (1.0 - og);
        dc_next[k] = dc * fg;
      }
      for (std::size_t j = 0; j < g4; ++j) db[j] += dz[j];
      const double* xt = input_.data() + at * in_;
      double* dxt = dx.data() + at * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        const double xi = xt[i];
        const double* wr = w + i * g4;
        double* dwr = dw + i * g4;
        double acc = 0.0;
        for (std::size_t j = 0; j < g4; ++j) {
          dwr[j] += xi * dz[j];
          acc += wr[j] * dz[j];
        }
        dxt[i] = acc;
      }
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      if (step > 0) {
        const double* hp = hidden_.data() + (at - 1) * u;
        for (std::size_t i = 0; i < u; ++i) {
          const double hi = hp[i];
          const double* wr = rw + i * g4;
          double* dwr = drw + i * g4;
          double acc = 0.0;
          for (std::size_t j = 0; j < g4; ++j) {
            dwr[j] += hi * dz[j];
            acc += wr[j] * dz[j];
          }
          dh_next[i] = acc;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Embedding, lambda

Embedding::Embedding(Tensor table, bool trainable, std::size_t pad_index)
    : table_("embeddings", std::move(table), trainable), pad_index_(pad_index) {
  if (table_.value.rank() != 2) throw std::invalid_argument("embedding: table must be (rows, dim)");
  if (pad_index_ >= rows()) throw std::invalid_argument("embedding: pad index outside the table");
}

Tensor Embedding::forward(const Tensor& ids, Mode) {
  const std::size_t d = dim();
  ids_.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double raw = ids[i];
    if (!(raw >= 0.0) || raw != std::floor(raw) || raw >= static_cast<double>(rows())) {
      throw std::out_of_range("embedding: id " + std::to_string(raw) + " outside table of " +
                              std::to_string(rows()) + " rows");
    }
    ids_[i] = static_cast<std::size_t>(raw);
  }
  Shape shape = ids.shape();
  shape.push_back(d);
  Tensor y(shape);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const double* row = table_.value.data() + ids_[i] * d;
    std::copy(row, row + d, y.data() + i * d);
  }
  mark_forward();
  return y;
}

Tensor Embedding::backward(const Tensor& g) {
  consume_forward();
  const std::size_t d = dim();
  if (g.size() != ids_.size() * d) throw std::invalid_argument("embedding backward: gradient size mismatch");
  if (table_.trainable) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] == pad_index_) continue;
      double* row = table_.grad.data() + ids_[i] * d;
      const double* gr = g.data() + i * d;
      for (std::size_t k = 0; k < d; ++k) row[k] += gr[k];
    }
  }
  return {};
}

Tensor Lambda::forward(const Tensor& x, Mode) {
  mark_forward();
  Tensor y = x;
  for (double& v : y.values()) v = lo_ + (hi_ - lo_) * v;
  return y;
}

Tensor Lambda::backward(const Tensor& g) {
  consume_forward();
  Tensor dx = g;
  for (double& v : dx.values()) v *= (hi_ - lo_);
  return dx;
}

// ---------------------------------------------------------------------------
// Merge ops

Tensor Dot::forward(const Tensor& vec, const Tensor& seq) {
  require_rank(vec, 2, "dot (vector)");
  require_rank(seq, 3, "dot (sequence)");
  if (vec.dim(0) != seq.dim(0) || vec.dim(1) != seq.dim(2)) {
    throw std::invalid_argument("dot: shapes " + shape_string(vec.shape()) + " and " + shape_string(seq.shape()) +
                                " do not align");
  }
  const std::size_t batch = seq.dim(0), steps = seq.dim(1), f = seq.dim(2);
  Tensor y({batch, steps});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* v = vec.data() + n * f;
    for (std::size_t t = 0; t < steps; ++t) {
      const double* s = seq.data() + (n * steps + t) * f;
      double acc = 0.0;
      for (std::size_t k = 0; k < f; ++k) acc += v[k] * s[k];
      y[n * steps + t] = acc;
    }
  }
  vec_ = vec;
  seq_ = seq;
  pending_ = true;
  return y;
}

std::pair<Tensor, Tensor> Dot::backward(const Tensor& g) {
  if (!pending_) throw std::logic_error("dot: backward called without a matching forward");
  pending_ = false;
  const std::size_t batch = seq_.dim(0), steps = seq_.dim(1), f = seq_.dim(2);
  if (g.shape() != Shape{batch, steps}) throw std::invalid_argument("dot backward: gradient shape mismatch");
  Tensor dv(vec_.shape()), ds(seq_.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const double* v = vec_.data() + n * f;
    double* dvr = dv.data() + n * f;
    for (std::size_t t = 0; t < steps; ++t) {
      const double gt = g[n * steps + t];
      const double* s = seq_.data() + (n * steps + t) * f;
      double* dsr = ds.data() + (n * steps + t) * f;
      for (std::size_t k = 0; k < f; ++k) {
        dvr[k] += gt * s[k];
        dsr[k] = gt * v[k];
      }
    }
  }
  return {std::move(dv), std::move(ds)};
}

Tensor Concatenate::forward(std::span<const Tensor* const> inputs) {
  if (inputs.empty()) throw std::invalid_argument("concatenate: no inputs");
  const Shape& first = inputs.front()->shape();
  if (first.empty()) throw std::invalid_argument("concatenate: scalar input");
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  shapes_.clear();
  for (const Tensor* t : inputs) {
    const Shape& s = t->shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw std::invalid_argument("concatenate: shape " + shape_string(s) + " incompatible with " +
                                  shape_string(first));
    }
    total += s.back();
    shapes_.push_back(s);
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor y(out_shape);
  const std::size_t rows = shape_size(lead);
  std::size_t offset = 0;
  for (const Tensor* t : inputs) {
    const std::size_t w = t->shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(t->data() + r * w, t->data() + (r + 1) * w, y.data() + r * total + offset);
    }
    offset += w;
  }
  pending_ = true;
  return y;
}

std::vector<Tensor> Concatenate::backward(const Tensor& g) {
  if (!pending_) throw std::logic_error("concatenate: backward called without a matching forward");
  pending_ = false;
  const std::size_t total = g.shape().back();
  const std::size_t rows = g.size() / total;
  std::vector<Tensor> grads;
  std::size_t offset = 0;
  for (const Shape& s : shapes_) {
    Tensor part(s);
    const std::size_t w = s.back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(g.data() + r * total + offset, g.data() + r * total + offset + w, part.data() + r * w);
    }
    offset += w;
    grads.push_back(std::move(part));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Tape and containers

Tensor GradientTape::backward(Tensor grad) {
  if (entries_.empty()) throw std::logic_error("gradient tape is empty: backward requires a recorded forward");
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) grad = (*it)->backward(grad);
  entries_.clear();
  return grad;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  tape_.clear();
  Tensor y = x;
  for (auto& layer : layers_) {
    y = layer->forward(y, mode);
    tape_.record(*layer);
  }
  return y;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Layer*> Sequential::layers() {
  std::vector<Layer*> out;
  for (auto& layer : layers_) out.push_back(layer.get());
  return out;
}

void Adam::step(std::span<Parameter* const> params) {
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    require_same_shape(p.value, p.grad, "adam");
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Snapshot

namespace {

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

}  // namespace

void save_snapshot(std::ostream& out, std::span<Layer* const> layers) {
  std::size_t count = 0;
  for (Layer* layer : layers) count += layer->parameters().size();
  out << "tensorcore v1 params=" << count << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (Parameter* p : layers[i]->parameters()) {
      out << "layer " << i << ' ' << kind_name(layers[i]->kind()) << ' ' << shape_token(p->value.shape()) << '\n';
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        if (k) out << ' ';
        out << p->value[k];
      }
      out << '\n';
    }
  }
}

void load_snapshot(std::istream& in, std::span<Layer* const> layers) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("tensorcore v1 params=", 0) != 0) {
    throw std::runtime_error("snapshot: missing 'tensorcore v1' header");
  }
  std::size_t line_no = 1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (Parameter* p : layers[i]->parameters()) {
      ++line_no;
      if (!std::getline(in, line)) throw std::runtime_error("snapshot: truncated at line " + std::to_string(line_no));
      std::istringstream head(line);
      std::string tag, kind, shape;
      std::size_t index = 0;
      head >> tag >> index >> kind >> shape;
      if (tag != "layer" || index != i || kind != kind_name(layers[i]->kind()) ||
          shape != shape_token(p->value.shape())) {
        throw std::runtime_error("snapshot line " + std::to_string(line_no) + ": expected layer " +
                                 std::to_string(i) + " " + std::string(kind_name(layers[i]->kind())) + " " +
                                 shape_token(p->value.shape()) + ", got '" + line + "'");
      }
      ++line_no;
      if (!std::getline(in, line)) throw std::runtime_error("snapshot: truncated at line " + std::to_string(line_no));
      std::istringstream values(line);
      for (std::size_t k = 0; k < p->value.size(); ++k) {
        std::string token;
        if (!(values >> token)) {
          throw std::runtime_error("snapshot line " + std::to_string(line_no) + ": too few values");
        }
        p->value[k] = std::stod(token);
      }
      std::string extra;
      if (values >> extra) throw std::runtime_error("snapshot line " + std::to_string(line_no) + ": too many values");
    }
  }
}

}  // namespace hybridrec
