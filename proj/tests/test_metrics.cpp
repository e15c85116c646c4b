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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hybridrec/metrics.hpp"
#include "oracles.hpp"

using namespace hybridrec;

namespace {

Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) { return Tensor({rows, cols}, std::move(v)); }

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) t.at(r, labels[r]) = 1.0;
  return t;
}

std::vector<std::size_t> random_labels(std::size_t rows, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> out(rows);
  for (auto& l : out) l = pick(rng);
  return out;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& order) {
  Tensor out(t.shape());
  const std::size_t w = t.dim(1);
  for (std::size_t r = 0; r < order.size(); ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = t.at(order[r], c);
  return out;
}

}  // namespace

TEST_CASE("rmse and mae") {
  const Tensor p = matrix(1, 2, {2, 0}), t = matrix(1, 2, {0, 0});
  CHECK(rmse(p, t) == doctest::Approx(std::sqrt(2.0)));
  CHECK(mae(p, t) == doctest::Approx(1.0));
  CHECK(rmse(t, t) == 0.0);
  CHECK(mae(t, t) == 0.0);
  CHECK_THROWS_AS(rmse(p, matrix(2, 1, {0, 0})), std::invalid_argument);
  CHECK_THROWS_AS(mae(Tensor(), Tensor()), std::invalid_argument);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor a = gradcheck::random_tensor({6, 4}, s), b = gradcheck::random_tensor({6, 4}, s + 1000);
    CHECK(rmse(a, b) >= mae(a, b) - 1e-12);
  }
}

TEST_CASE("precision and recall") {
  const Tensor p = matrix(2, 2, {0.9, 0.1, 0.6, 0.4}), t = matrix(2, 2, {1, 0, 0, 1});
  const auto pr = precision_recall(p, t);
  CHECK(pr.precision == doctest::Approx(0.5));
  CHECK(pr.recall == doctest::Approx(0.5));

  const auto exact = precision_recall(t, t);
  CHECK(exact.precision == 1.0);
  CHECK(exact.recall == 1.0);

  const auto none = precision_recall(matrix(2, 2, {0.1, 0.1, 0.2, 0.2}), t);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);

  // Macro: class 0 has P=1/2, R=1; class 1 has no predicted positives.
  const auto macro = precision_recall(p, t, 0.5, Averaging::macro);
  CHECK(macro.precision == doctest::Approx(0.25));
  CHECK(macro.recall == doctest::Approx(0.5));

  CHECK_THROWS_AS(precision_recall(p, matrix(2, 2, {1, 1, 0, 1})), std::invalid_argument);
  CHECK_THROWS_AS(precision_recall(p, matrix(2, 2, {0, 0, 0, 1})), std::invalid_argument);
}

TEST_CASE("auc") {
  SUBCASE("perfect separation") {
    CHECK(auc(matrix(2, 2, {0.9, 0.1, 0.2, 0.8}), matrix(2, 2, {1, 0, 0, 1})) == 1.0);
  }
  SUBCASE("constant scores") {
    CHECK(auc(matrix(2, 3, {0.3, 0.3, 0.3, 0.3, 0.3, 0.3}), one_hot({0, 2}, 3)) == doctest::Approx(0.5));
  }
  SUBCASE("undefined when targets are one sided") {
    CHECK_THROWS_AS(auc(matrix(1, 2, {0.1, 0.2}), matrix(1, 2, {0, 0})), std::domain_error);
    CHECK_THROWS_AS(auc(matrix(1, 2, {0.1, 0.2}), matrix(1, 2, {1, 1})), std::domain_error);
  }
  SUBCASE("agrees with pairwise counting") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      Tensor p = gradcheck::random_tensor({10, 5}, s, 0.0, 1.0);
      // Coarse rounding forces ties.
      if (s % 2 == 0)
        for (double& v : p.values()) v = std::round(v * 4) / 4;
      const Tensor t = one_hot(random_labels(10, 5, s + 7), 5);
      CHECK(std::abs(auc(p, t) - oracle::mann_whitney_auc(p, t)) < 1e-9);
    }
  }
  SUBCASE("strictly monotone transform leaves auc unchanged") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Tensor p = gradcheck::random_tensor({8, 4}, s);
      const Tensor t = one_hot(random_labels(8, 4, s), 4);
      Tensor q = p;
      for (double& v : q.values()) v = std::exp(3 * v) - 7;
      CHECK(std::abs(auc(p, t) - auc(q, t)) < 1e-9);
    }
  }
}

TEST_CASE("accuracy and top-k") {
  // True classes 0,1,2. Row 1 has the true class at rank 2, row 2 at rank 3.
  const Tensor p = matrix(3, 3, {0.7, 0.2, 0.1, 0.5, 0.4, 0.1, 0.6, 0.3, 0.1});
  const Tensor t = one_hot({0, 1, 2}, 3);
  CHECK(accuracy(p, t) == doctest::Approx(1.0 / 3));
  CHECK(topk_accuracy(p, t, 1) == doctest::Approx(1.0 / 3));
  CHECK(topk_accuracy(p, t, 2) == doctest::Approx(2.0 / 3));
  CHECK(topk_accuracy(p, t, 3) == 1.0);
  CHECK(accuracy(t, t) == 1.0);
  CHECK_THROWS_AS(topk_accuracy(p, t, 0), std::invalid_argument);
  CHECK_THROWS_AS(topk_accuracy(p, t, 4), std::invalid_argument);

  SUBCASE("ties go to the lower index") {
    const Tensor flat = matrix(1, 3, {0.5, 0.5, 0.5});
    CHECK(accuracy(flat, one_hot({0}, 3)) == 1.0);
    CHECK(accuracy(flat, one_hot({1}, 3)) == 0.0);
    CHECK(topk_accuracy(flat, one_hot({1}, 3), 2) == 1.0);
    CHECK(topk_accuracy(flat, one_hot({2}, 3), 2) == 0.0);
  }
  SUBCASE("monotone in k and accuracy equals top-1") {
    for (std::uint64_t s = 0; s < 30; ++s) {
      const Tensor q = gradcheck::random_tensor({20, 7}, s);
      const Tensor y = one_hot(random_labels(20, 7, s), 7);
      CHECK(accuracy(q, y) == topk_accuracy(q, y, 1));
      double prev = 0.0;
      for (std::size_t k = 1; k <= 7; ++k) {
        const double v = topk_accuracy(q, y, k);
        CHECK(v >= prev);
        prev = v;
      }
      CHECK(prev == 1.0);
    }
  }
}

TEST_CASE("mrr") {
  const Tensor t = one_hot({0, 1}, 3);
  CHECK(mrr(t, t) == 1.0);
  CHECK(mrr(matrix(2, 3, {0.2, 0.5, 0.1, 0.6, 0.3, 0.1}), t) == doctest::Approx(0.5));
  CHECK(rank_of(std::vector<double>{0.1, 0.9, 0.1}.data(), 3, 2) == 3);
  CHECK(argmax(std::vector<double>{0.1, 0.9, 0.9}.data(), 3) == 1);

  SUBCASE("random scores match the closed form") {
    const std::size_t d = 8, rows = 10000;
    double expected = 0.0;
    for (std::size_t r = 1; r <= d; ++r) expected += 1.0 / static_cast<double>(r);
    expected /= static_cast<double>(d);
    const Tensor p = gradcheck::random_tensor({rows, d}, 77, 0.0, 1.0);
    const Tensor y = one_hot(random_labels(rows, d, 78), d);
    CHECK(std::abs(mrr(p, y) - expected) < 0.05 * expected);
  }
}

TEST_CASE("row permutation invariance") {
  const Tensor p = gradcheck::random_tensor({12, 4}, 5, 0.0, 1.0);
  const Tensor t = one_hot(random_labels(12, 4, 6), 4);
  std::vector<std::size_t> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(3));
  const Tensor pp = permute_rows(p, order), tp = permute_rows(t, order);
  const auto a = evaluate_classification(p, t, 0.5, 2), b = evaluate_classification(pp, tp, 0.5, 2);
  for (const auto& [name, value] : a.metrics) CHECK(std::abs(value - b.get(name)) < 1e-12);
  CHECK(std::abs(rmse(p, t) - rmse(pp, tp)) < 1e-12);
  CHECK(std::abs(mae(p, t) - mae(pp, tp)) < 1e-12);
}

TEST_CASE("eval report output") {
  const Tensor p = matrix(2, 2, {0.9, 0.1, 0.6, 0.4}), t = matrix(2, 2, {1, 0, 0, 1});
  const auto report = evaluate_classification(p, t, 0.5, 2);
  CHECK(report.rows == 2);
  CHECK(report.classes == 2);
  CHECK(report.get("precision") == doctest::Approx(0.5));
  CHECK(report.get("top2_accuracy") == 1.0);
  CHECK_THROWS_AS(report.get("nope"), std::out_of_range);
  for (const auto& [name, value] : report.metrics) CHECK(std::isfinite(value));

  std::ostringstream csv, text;
  report.write_csv(csv);
  report.write_text(text);
  CHECK(csv.str().rfind("metric,value\nprecision,0.5\n", 0) == 0);
  CHECK(text.str().find("accuracy") != std::string::npos);

  const auto reg = evaluate_regression(matrix(1, 2, {2, 0}), matrix(1, 2, {0, 0}));
  CHECK(reg.get("mae") == 1.0);
}
