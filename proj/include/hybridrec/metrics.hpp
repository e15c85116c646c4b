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

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "hybridrec/tensor.hpp"

namespace hybridrec {

// All metrics take (rows, classes) matrices. Ranking ties always resolve to
// the lower class index.

double rmse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);

enum class Averaging { micro, macro };

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// A cell is predicted positive when pred >= threshold. Empty denominators
/// give 0. Macro averages the per-class values.
PrecisionRecall precision_recall(const Tensor& pred, const Tensor& target, double threshold = 0.5,
                                 Averaging averaging = Averaging::micro);

/// Micro one-vs-rest ROC AUC by exact trapezoidal integration. Throws when
/// the flattened targets are all positive or all negative.
double auc(const Tensor& pred, const Tensor& target);

double accuracy(const Tensor& pred, const Tensor& target);
double topk_accuracy(const Tensor& pred, const Tensor& target, std::size_t k = 5);
double mrr(const Tensor& pred, const Tensor& target);

/// 1-based position of `cls` when the row is sorted by descending score.
std::size_t rank_of(const double* row, std::size_t width, std::size_t cls);
std::size_t argmax(const double* row, std::size_t width);

struct EvalReport {
  std::vector<std::pair<std::string, double>> metrics;
  std::size_t rows = 0;
  std::size_t classes = 0;
  double threshold = 0.5;

  double get(const std::string& name) const;
  void write_text(std::ostream& out) const;
  /// `metric,value` lines.
  void write_csv(std::ostream& out) const;
};

EvalReport evaluate_regression(const Tensor& pred, const Tensor& target);
EvalReport evaluate_classification(const Tensor& pred, const Tensor& target, double threshold = 0.5,
                                   std::size_t k = 5, Averaging averaging = Averaging::micro);

}  // namespace hybridrec
