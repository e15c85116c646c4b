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

#include "hybridrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "hybridrec/csv.hpp"

namespace hybridrec {

namespace {

void check_pair(const Tensor& pred, const Tensor& target, const char* who) {
  require_same_shape(pred, target, who);
  if (pred.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
}

void check_matrix(const Tensor& pred, const Tensor& target, const char* who) {
  check_pair(pred, target, who);
  if (pred.rank() != 2) throw std::invalid_argument(std::string(who) + ": expected (rows, classes) matrices");
}

// Index of the single 1 in a one-hot row; throws otherwise.
std::size_t hot_index(const double* row, std::size_t width, std::size_t r) {
  std::size_t hot = width, ones = 0;
  for (std::size_t c = 0; c < width; ++c) {
    if (row[c] == 1.0) {
      hot = c;
      ++ones;
    } else if (row[c] != 0.0) {
      ones = 2;
      break;
    }
  }
  if (ones != 1) throw std::invalid_argument("target row " + std::to_string(r) + " is not one-hot");
  return hot;
}

}  // namespace

double rmse(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mae(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

PrecisionRecall precision_recall(const Tensor& pred, const Tensor& target, double threshold, Averaging averaging) {
  check_matrix(pred, target, "precision_recall");
  const std::size_t rows = pred.dim(0), width = pred.dim(1);
  for (std::size_t r = 0; r < rows; ++r) hot_index(target.data() + r * width, width, r);
  std::vector<double> tp(width, 0.0), fp(width, 0.0), fn(width, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const bool predicted = pred.at(r, c) >= threshold;
      const bool actual = target.at(r, c) == 1.0;
      if (predicted && actual) tp[c] += 1;
      else if (predicted) fp[c] += 1;
      else if (actual) fn[c] += 1;
    }
  }
  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
  PrecisionRecall out;
  if (averaging == Averaging::micro) {
    const double t = std::accumulate(tp.begin(), tp.end(), 0.0);
    out.precision = ratio(t, t + std::accumulate(fp.begin(), fp.end(), 0.0));
    out.recall = ratio(t, t + std::accumulate(fn.begin(), fn.end(), 0.0));
  } else {
    for (std::size_t c = 0; c < width; ++c) {
      out.precision += ratio(tp[c], tp[c] + fp[c]);
      out.recall += ratio(tp[c], tp[c] + fn[c]);
    }
    out.precision /= static_cast<double>(width);
    out.recall /= static_cast<double>(width);
  }
  return out;
}

double auc(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target, "auc");
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] > pred[b]; });
  double positives = 0.0, negatives = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] > 0.5) positives += 1;
    else negatives += 1;
  }
  if (positives == 0 || negatives == 0) {
    throw std::domain_error("auc: undefined when every target is " + std::string(positives == 0 ? "0" : "1"));
  }
  // Walk groups of equal scores; each group is one ROC vertex.
  double area = 0.0, tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double score = pred[order[i]];
    double group_tp = 0.0, group_fp = 0.0;
    while (i < order.size() && pred[order[i]] == score) {
      if (target[order[i]] > 0.5) group_tp += 1;
      else group_fp += 1;
      ++i;
    }
    area += group_fp * (tp + 0.5 * group_tp);
    tp += group_tp;
    fp += group_fp;
  }
  return area / (positives * negatives);
}

std::size_t argmax(const double* row, std::size_t width) {
  return static_cast<std::size_t>(std::max_element(row, row + width) - row);
}

std::size_t rank_of(const double* row, std::size_t width, std::size_t cls) {
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < width; ++c) {
    if (row[c] > row[cls] || (row[c] == row[cls] && c < cls)) ++ahead;
  }
  return ahead + 1;
}

double accuracy(const Tensor& pred, const Tensor& target) {
  check_matrix(pred, target, "accuracy");
  const std::size_t rows = pred.dim(0), width = pred.dim(1);
  double hits = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t truth = hot_index(target.data() + r * width, width, r);
    if (argmax(pred.data() + r * width, width) == truth) hits += 1;
  }
  return hits / static_cast<double>(rows);
}

double topk_accuracy(const Tensor& pred, const Tensor& target, std::size_t k) {
  check_matrix(pred, target, "topk_accuracy");
  const std::size_t rows = pred.dim(0), width = pred.dim(1);
  if (k < 1 || k > width) {
    throw std::invalid_argument("topk_accuracy: k=" + std::to_string(k) + " outside [1, " + std::to_string(width) +
                                "]");
  }
  double hits = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t truth = hot_index(target.data() + r * width, width, r);
    if (rank_of(pred.data() + r * width, width, truth) <= k) hits += 1;
  }
  return hits / static_cast<double>(rows);
}

double mrr(const Tensor& pred, const Tensor& target) {
  check_matrix(pred, target, "mrr");
  const std::size_t rows = pred.dim(0), width = pred.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t truth = hot_index(target.data() + r * width, width, r);
    total += 1.0 / static_cast<double>(rank_of(pred.data() + r * width, width, truth));
  }
  return total / static_cast<double>(rows);
}

double EvalReport::get(const std::string& name) const {
  for (const auto& [key, value] : metrics) {
    if (key == name) return value;
  }
  throw std::out_of_range("no metric named " + name);
}

void EvalReport::write_text(std::ostream& out) const {
  std::size_t width = 0;
  for (const auto& [key, value] : metrics) width = std::max(width, key.size());
  out << "rows: " << rows << "  classes: " << classes << '\n';
  for (const auto& [key, value] : metrics) {
    out << std::left << std::setw(static_cast<int>(width)) << key << "  " << std::fixed << std::setprecision(6)
        << value << '\n';
  }
  out << std::defaultfloat;
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "metric,value\n";
  for (const auto& [key, value] : metrics) out << key << ',' << csv::format_double(value) << '\n';
}

EvalReport evaluate_regression(const Tensor& pred, const Tensor& target) {
  EvalReport report;
  report.rows = pred.rank() ? pred.dim(0) : 0;
  report.classes = pred.rank() == 2 ? pred.dim(1) : 0;
  report.metrics = {{"rmse", rmse(pred, target)}, {"mae", mae(pred, target)}};
  return report;
}

EvalReport evaluate_classification(const Tensor& pred, const Tensor& target, double threshold, std::size_t k,
                                   Averaging averaging) {
  check_matrix(pred, target, "evaluate_classification");
  EvalReport report;
  report.rows = pred.dim(0);
  report.classes = pred.dim(1);
  report.threshold = threshold;
  const auto pr = precision_recall(pred, target, threshold, averaging);
  k = std::min(k, pred.dim(1));
  report.metrics = {{"precision", pr.precision},
                    {"recall", pr.recall},
                    {"auc", auc(pred, target)},
                    {"accuracy", accuracy(pred, target)},
                    {"top" + std::to_string(k) + "_accuracy", topk_accuracy(pred, target, k)},
                    {"mrr", mrr(pred, target)}};
  return report;
}

}  // namespace hybridrec
