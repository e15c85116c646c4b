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

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hybridrec/layers.hpp"

using namespace hybridrec;
using gradcheck::check_layer;
using gradcheck::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

Tensor ramp(Shape shape) {
  Tensor t(std::move(shape));
  std::iota(t.values().begin(), t.values().end(), 0.0);
  return t;
}

}  // namespace

TEST_CASE("relu example") {
  Relu relu;
  const Tensor y = relu.forward(Tensor::from({-1, 0, 2}), Mode::infer);
  CHECK(y == Tensor::from({0, 0, 2}));
}

TEST_CASE("leaky relu uses slope 0.01") {
  LeakyRelu leaky;
  const Tensor y = leaky.forward(Tensor::from({-2, 3}), Mode::infer);
  CHECK(y[0] == doctest::Approx(-0.02));
  CHECK(y[1] == 3);
}

TEST_CASE("softmax of equal logits is uniform") {
  Softmax sm;
  const Tensor y = sm.forward(Tensor::from({0, 0}), Mode::infer);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and ignore constant shifts") {
  Softmax sm;
  const Tensor x = random_tensor({6, 5}, 11, -20, 20);
  Tensor shifted = x;
  for (auto& v : shifted.values()) v += 123.25;
  const Tensor a = sm.forward(x, Mode::infer);
  const Tensor b = sm.forward(shifted, Mode::infer);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += a.at(r, c);
      CHECK(std::abs(a.at(r, c) - b.at(r, c)) < 1e-9);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("conv2d of ones with a ones kernel sums the window") {
  Rng rng(1);
  Conv2D conv(1, 1, 3, rng);
  conv.weight().value.fill(1.0);
  conv.bias().value.fill(0.0);
  const Tensor y = conv.forward(Tensor({1, 3, 3, 1}, 1.0), Mode::infer);
  CHECK(y.shape() == Shape{1, 3, 3, 1});
  CHECK(y[4] == 9.0);  // center
  CHECK(y[0] == 4.0);  // corner sees a 2x2 patch under same padding
  CHECK(y[1] == 6.0);  // edge
}

TEST_CASE("conv2d matches a hand-written cross-correlation") {
  Rng rng(5);
  Conv2D conv(2, 3, 3, rng);
  const Tensor x = random_tensor({2, 4, 5, 2}, 3);
  const Tensor y = conv.forward(x, Mode::infer);
  const Tensor& w = conv.weight().value;
  const Tensor& b = conv.bias().value;
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t f = 0; f < 3; ++f) {
          double s = b[f];
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = static_cast<int>(r) + dr, cc = static_cast<int>(c) + dc;
              if (rr < 0 || rr >= 4 || cc < 0 || cc >= 5) continue;
              for (std::size_t k = 0; k < 2; ++k) {
                s += x[((n * 4 + rr) * 5 + cc) * 2 + k] * w[(((dr + 1) * 3 + (dc + 1)) * 2 + k) * 3 + f];
              }
            }
          worst = std::max(worst, std::abs(s - y[((n * 4 + r) * 5 + c) * 3 + f]));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("dense of sum loss gives outer product gradient") {
  Rng rng(2);
  Dense dense(3, 2, rng);
  const Tensor x = Tensor::from({1, 2, 3});
  dense.forward(x, Mode::train);
  dense.weight().zero_grad();
  dense.backward(Tensor({1, 2}, 1.0));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) CHECK(dense.weight().grad.at(i, j) == x[i]);
  }
}

TEST_CASE("backward without forward is rejected") {
  Relu relu;
  CHECK_THROWS_AS(relu.backward(Tensor::from({1})), std::logic_error);
  relu.forward(Tensor::from({1}), Mode::train);
  relu.backward(Tensor::from({1}));
  CHECK_THROWS_AS(relu.backward(Tensor::from({1})), std::logic_error);
  GradientTape tape;
  CHECK_THROWS_AS(tape.backward(Tensor::from({1})), std::logic_error);
}

TEST_CASE("shape mismatch names both shapes") {
  Rng rng(3);
  Dense dense(3, 2, rng);
  try {
    dense.forward(Tensor({2, 4}), Mode::infer);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,4)") != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
}

TEST_CASE("maxpool picks window maxima with first-index ties") {
  MaxPool2D pool;
  Tensor x({1, 2, 2, 1}, std::vector<double>{5, 5, 1, 5});
  const Tensor y = pool.forward(x, Mode::train);
  CHECK(y[0] == 5);
  const Tensor dx = pool.backward(Tensor({1, 1, 1, 1}, 1.0));
  CHECK(dx == Tensor({1, 2, 2, 1}, std::vector<double>{1, 0, 0, 0}));
}

TEST_CASE("maxpool clips odd edges") {
  MaxPool2D pool;
  const Tensor y = pool.forward(ramp({1, 3, 1, 1}), Mode::infer);
  CHECK(y.shape() == Shape{1, 2, 1, 1});
  CHECK(y[0] == 1);
  CHECK(y[1] == 2);
}

TEST_CASE("global max pool routes gradient to the first maximum") {
  GlobalMaxPool1D pool;
  Tensor x({1, 3, 2}, std::vector<double>{1, 4, 3, 4, 3, 0});
  const Tensor y = pool.forward(x, Mode::train);
  CHECK(y == Tensor({1, 2}, std::vector<double>{3, 4}));
  const Tensor dx = pool.backward(Tensor({1, 2}, std::vector<double>{10, 20}));
  CHECK(dx == Tensor({1, 3, 2}, std::vector<double>{0, 20, 10, 0, 0, 0}));
}

TEST_CASE("batchnorm train output is standardized per channel") {
  BatchNorm bn(3);
  const Tensor x = random_tensor({8, 2, 2, 3}, 4, -3, 7);
  const Tensor y = bn.forward(x, Mode::train);
  for (std::size_t k = 0; k < 3; ++k) {
    double mean = 0.0, var = 0.0;
    const std::size_t n = y.size() / 3;
    for (std::size_t i = k; i < y.size(); i += 3) mean += y[i];
    mean /= static_cast<double>(n);
    for (std::size_t i = k; i < y.size(); i += 3) var += (y[i] - mean) * (y[i] - mean);
    var /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm infer mode uses running statistics") {
  BatchNorm bn(1);
  const Tensor x({4, 1}, std::vector<double>{1, 2, 3, 4});
  CHECK(bn.forward(x, Mode::infer)[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)));
  bn.forward(x, Mode::train);
  CHECK(bn.running_mean().value[0] == doctest::Approx(0.01 * 2.5));
}

TEST_CASE("inverted dropout preserves expectation") {
  Dropout drop(0.3, 99);
  const Tensor x({1, 1000}, 2.0);
  double total = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor y = drop.forward(x, Mode::train);
    for (double v : y.values()) total += v;
    drop.backward(Tensor({1, 1000}, 0.0));
  }
  const double mean = total / 1e5;
  CHECK(std::abs(mean - 2.0) / 2.0 < 0.01);
}

TEST_CASE("dropout is the identity in infer mode") {
  Dropout drop(0.5, 1);
  const Tensor x = random_tensor({3, 4}, 1);
  CHECK(drop.forward(x, Mode::infer) == x);
  const Tensor g = random_tensor({3, 4}, 2);
  CHECK(drop.backward(g) == g);
}

TEST_CASE("embedding lookups") {
  Tensor table({4, 2}, std::vector<double>{1, 2, 3, 4, 0, 0, 0, 0});  // rows 0,1 then UNK, PAD
  Embedding frozen(table, false, 3);
  SUBCASE("unk row is zero") {
    CHECK(frozen.forward(Tensor({1}, 2.0), Mode::infer) == Tensor({1, 2}));
  }
  SUBCASE("repeated ids copy the row") {
    CHECK(frozen.forward(Tensor({2}, 0.0), Mode::infer) == Tensor({2, 2}, std::vector<double>{1, 2, 1, 2}));
  }
  SUBCASE("ids beyond the table are rejected") {
    CHECK_THROWS_AS(frozen.forward(Tensor({1}, 4.0), Mode::infer), std::out_of_range);
  }
  SUBCASE("frozen table gets no gradient") {
    frozen.forward(Tensor({2}, std::vector<double>{0, 1}), Mode::train);
    frozen.table().zero_grad();
    frozen.backward(Tensor({2, 2}, 1.0));
    for (double g : frozen.table().grad.values()) CHECK(g == 0.0);
  }
  SUBCASE("trainable table skips the pad row") {
    Embedding live(table, true, 3);
    live.forward(Tensor({3}, std::vector<double>{0, 3, 0}), Mode::train);
    live.backward(Tensor({3, 2}, 1.0));
    CHECK(live.table().grad.at(0, 0) == 2.0);
    CHECK(live.table().grad.at(3, 0) == 0.0);
  }
}

TEST_CASE("lambda maps into its range") {
  Lambda lam(0.5, 2.5);
  const Tensor y = lam.forward(Tensor::from({0, 0.5, 1}), Mode::infer);
  CHECK(y == Tensor::from({0.5, 1.5, 2.5}));
}

TEST_CASE("dot broadcasts over sequence positions") {
  Dot dot;
  const Tensor v({1, 2}, std::vector<double>{1, 2});
  const Tensor s({1, 3, 2}, std::vector<double>{1, 0, 0, 1, 3, 4});
  CHECK(dot.forward(v, s) == Tensor({1, 3}, std::vector<double>{1, 2, 11}));
}

TEST_CASE("concatenate joins the last axis") {
  Concatenate cat;
  const Tensor a({2, 1}, std::vector<double>{1, 2}), b({2, 2}, std::vector<double>{3, 4, 5, 6});
  const Tensor* parts[] = {&a, &b};
  CHECK(cat.forward(parts) == Tensor({2, 3}, std::vector<double>{1, 3, 4, 2, 5, 6}));
  const auto grads = cat.backward(Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  CHECK(grads[0] == Tensor({2, 1}, std::vector<double>{1, 4}));
  CHECK(grads[1] == Tensor({2, 2}, std::vector<double>{2, 3, 5, 6}));
}

TEST_CASE("gradient check for every layer kind") {
  Rng rng(17);
  SUBCASE("dense") {
    Dense layer(4, 3, rng);
    CHECK(check_layer(layer, random_tensor({3, 4}, 1), Mode::train, 2).max_error < kGradTol);
  }
  SUBCASE("dropout") {
    Dropout layer(0.4, 5);
    const auto r = check_layer(layer, random_tensor({3, 6}, 1), Mode::train, 2, true, [&] { layer.reseed(5); });
    CHECK(r.max_error < kGradTol);
  }
  SUBCASE("relu") {
    Relu layer;
    CHECK(check_layer(layer, random_tensor({3, 5}, 3), Mode::train, 4).max_error < kGradTol);
  }
  SUBCASE("leaky relu") {
    LeakyRelu layer;
    CHECK(check_layer(layer, random_tensor({3, 5}, 3), Mode::train, 4).max_error < kGradTol);
  }
  SUBCASE("sigmoid") {
    Sigmoid layer;
    CHECK(check_layer(layer, random_tensor({3, 5}, 3, -4, 4), Mode::train, 4).max_error < kGradTol);
  }
  SUBCASE("softmax") {
    Softmax layer;
    CHECK(check_layer(layer, random_tensor({3, 5}, 3, -3, 3), Mode::train, 4).max_error < kGradTol);
  }
  SUBCASE("conv2d") {
    Conv2D layer(2, 3, 3, rng);
    CHECK(check_layer(layer, random_tensor({2, 4, 3, 2}, 5), Mode::train, 6).max_error < kGradTol);
  }
  SUBCASE("batchnorm train") {
    BatchNorm layer(3);
    layer.gamma().value = random_tensor({3}, 8, 0.5, 1.5);
    layer.beta().value = random_tensor({3}, 9);
    CHECK(check_layer(layer, random_tensor({4, 2, 2, 3}, 7), Mode::train, 8).max_error < kGradTol);
  }
  SUBCASE("batchnorm infer") {
    BatchNorm layer(2);
    CHECK(check_layer(layer, random_tensor({3, 2}, 7), Mode::infer, 8).max_error < kGradTol);
  }
  SUBCASE("maxpool2d") {
    MaxPool2D layer;
    CHECK(check_layer(layer, random_tensor({2, 4, 5, 2}, 9), Mode::train, 10).max_error < kGradTol);
  }
  SUBCASE("flatten") {
    Flatten layer;
    CHECK(check_layer(layer, random_tensor({2, 3, 2}, 9), Mode::train, 10).max_error < kGradTol);
  }
  SUBCASE("reshape") {
    Reshape layer({3, 2, 1});
    CHECK(check_layer(layer, random_tensor({2, 6}, 9), Mode::train, 10).max_error < kGradTol);
  }
  SUBCASE("lstm") {
    Lstm layer(3, 4, rng);
    const auto r = check_layer(layer, random_tensor({2, 5, 3}, 11), Mode::train, 12);
    INFO(r.worst);
    CHECK(r.max_error < kGradTol);
  }
  SUBCASE("global max pool") {
    GlobalMaxPool1D layer;
    CHECK(check_layer(layer, random_tensor({2, 4, 3}, 13), Mode::train, 14).max_error < kGradTol);
  }
  SUBCASE("embedding") {
    Embedding layer(random_tensor({5, 3}, 15), true, 4);
    const Tensor ids({2, 3}, std::vector<double>{0, 1, 2, 3, 3, 2});  // pad row 4 excluded
    CHECK(check_layer(layer, ids, Mode::train, 16, false).max_error < kGradTol);
  }
  SUBCASE("lambda") {
    Lambda layer(-0.5, 2.0);
    CHECK(check_layer(layer, random_tensor({2, 3}, 17), Mode::train, 18).max_error < kGradTol);
  }
}

TEST_CASE("gradient check for dot and concatenate") {
  Tensor v = random_tensor({2, 3}, 21), s = random_tensor({2, 4, 3}, 22);
  Dot dot;
  const Tensor w = random_tensor({2, 4}, 23);
  dot.forward(v, s);
  auto [gv, gs] = dot.backward(w);
  std::vector<gradcheck::Target> targets{{"vec", &v, gv}, {"seq", &s, gs}};
  CHECK(gradcheck::compare([&] { return dot.forward(v, s); }, w, targets).max_error < kGradTol);

  Tensor a = random_tensor({2, 2, 1}, 24), b = random_tensor({2, 2, 3}, 25);
  Concatenate cat;
  const Tensor* parts[] = {&a, &b};
  const Tensor wc = random_tensor({2, 2, 4}, 26);
  cat.forward(parts);
  auto g = cat.backward(wc);
  std::vector<gradcheck::Target> ct{{"a", &a, g[0]}, {"b", &b, g[1]}};
  CHECK(gradcheck::compare([&] { return cat.forward(parts); }, wc, ct).max_error < kGradTol);
}

TEST_CASE("sequential backward walks the tape once") {
  Rng rng(4);
  Sequential seq;
  seq.add<Dense>(3, 4, rng);
  seq.add<Relu>();
  seq.add<Dense>(4, 2, rng);
  Tensor x = random_tensor({2, 3}, 5);
  const Tensor y = seq.forward(x, Mode::train);
  const Tensor w = random_tensor(y.shape(), 6);
  for (Parameter* p : seq.parameters()) p->zero_grad();
  const Tensor dx = seq.backward(w);
  std::vector<gradcheck::Target> targets{{"input", &x, dx}};
  for (Parameter* p : seq.parameters()) targets.push_back({p->name, &p->value, p->grad});
  CHECK(gradcheck::compare([&] { return seq.forward(x, Mode::train); }, w, targets).max_error < kGradTol);
  seq.forward(x, Mode::train);
  seq.backward(w);
  CHECK_THROWS_AS(seq.backward(w), std::logic_error);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("w", Tensor::from({1, -2}));
    Adam adam;
    Parameter* ps[] = {&p};
    for (int i = 0; i < 5; ++i) adam.step(ps);
    CHECK(p.value == Tensor::from({1, -2}));
  }
  SUBCASE("constant gradient steps approach lr") {
    Parameter p("w", Tensor::from({0}));
    Adam adam(AdamConfig{0.01});
    Parameter* ps[] = {&p};
    double prev = 0.0, step = 0.0;
    for (int i = 0; i < 200; ++i) {
      p.grad.fill(3.0);
      adam.step(ps);
      step = prev - p.value[0];
      prev = p.value[0];
    }
    CHECK(step == doctest::Approx(0.01).epsilon(1e-3));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Parameter p("w", Tensor::from({1, 1}));
    p.grad = Tensor::from({0.5, -7});
    Adam adam(AdamConfig{0.1});
    Parameter* ps[] = {&p};
    adam.step(ps);
    CHECK(p.value[0] == doctest::Approx(0.9));
    CHECK(p.value[1] == doctest::Approx(1.1));
  }
  SUBCASE("non-trainable parameters are skipped") {
    Parameter p("w", Tensor::from({1}), false);
    p.grad.fill(1.0);
    Adam adam;
    Parameter* ps[] = {&p};
    adam.step(ps);
    CHECK(p.value[0] == 1.0);
  }
  SUBCASE("same seed gives identical parameters") {
    auto run = [] {
      Rng rng(8);
      Dense d(3, 2, rng);
      Adam adam;
      const auto ps = d.parameters();
      for (int i = 0; i < 10; ++i) {
        d.forward(random_tensor({4, 3}, i), Mode::train);
        d.backward(random_tensor({4, 2}, 100 + i));
        adam.step(ps);
        for (auto* p : ps) p->zero_grad();
      }
      return d.weight().value;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("snapshot round trip is exact") {
  Rng rng(9);
  Sequential a;
  a.add<Dense>(3, 2, rng);
  a.add<BatchNorm>(2);
  a.add<Lstm>(2, 2, rng);
  a.layers()[1]->forward(random_tensor({4, 2}, 1), Mode::train);  // move running stats
  std::stringstream buf;
  save_snapshot(buf, a.layers());

  Rng other(10);
  Sequential b;
  b.add<Dense>(3, 2, other);
  b.add<BatchNorm>(2);
  b.add<Lstm>(2, 2, other);
  load_snapshot(buf, b.layers());
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("snapshot header names layer, kind and shape") {
  Rng rng(9);
  Sequential a;
  a.add<Dense>(3, 2, rng);
  std::stringstream buf;
  save_snapshot(buf, a.layers());
  std::string line;
  std::getline(buf, line);
  CHECK(line == "tensorcore v1 params=2");
  std::getline(buf, line);
  CHECK(line == "layer 0 dense 3x2");
}

TEST_CASE("snapshot rejects a mismatched topology") {
  Rng rng(9);
  Sequential a;
  a.add<Dense>(3, 2, rng);
  std::stringstream buf;
  save_snapshot(buf, a.layers());
  Sequential b;
  b.add<Dense>(2, 2, rng);
  CHECK_THROWS_AS(load_snapshot(buf, b.layers()), std::runtime_error);
}
