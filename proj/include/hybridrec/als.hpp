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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridrec/dataset.hpp"
#include "hybridrec/embeddings.hpp"
#include "hybridrec/tensor.hpp"

namespace hybridrec {

enum class AlsSolver { direct, cg };

struct AlsConfig {
  std::size_t factors = 16;
  double alpha = 40.0;
  double lambda_reg = 0.01;
  std::size_t iterations = 15;
  std::size_t cg_steps = 3;
  AlsSolver solver = AlsSolver::cg;
  std::uint64_t seed = 7;
};

/// Visitor factors (|V| x f) and device factors (|D| x f), rows in the order
/// of the source matrix indices.
struct FactorModel {
  std::vector<std::string> visitors;
  std::vector<std::string> devices;
  Tensor user_factors;
  Tensor item_factors;
  AlsConfig config;

  std::size_t factors() const { return user_factors.dim(1); }
};

/// One observed cell of a row: which column and its extra confidence c - 1.
struct ConfidenceEntry {
  std::size_t index;
  double extra;
};

/// Solves (gram + lambda I) x = rhs by Cholesky factorization.
std::vector<double> solve_row_direct(const Tensor& gram, std::span<const double> rhs, double lambda_reg);

/// Conjugate-gradient family (conjugate-residual variant) solve of
/// (gram_base + sum_j extra_j y_j y_j^T + lambda I) x = rhs without
/// materializing the confidence-weighted gram. The residual 2-norm is
/// non-increasing per step. Starts from `x0`
/// (zero when empty). When `residuals` is given it receives the residual
/// norm before the first step and after every step.
std::vector<double> solve_row_cg(const Tensor& gram_base, const Tensor& factors,
                                 std::span<const ConfidenceEntry> entries, std::span<const double> rhs,
                                 double lambda_reg, std::size_t cg_steps, std::span<const double> x0 = {},
                                 std::vector<double>* residuals = nullptr);

/// Implicit-feedback ALS. Preference is 1 where the matrix is positive;
/// confidence is 1 + alpha * value. When `objective_trace` is given it gets
/// the objective after every full sweep.
FactorModel als_fit(const InteractionMatrix& matrix, const AlsConfig& config,
                    std::vector<double>* objective_trace = nullptr);

/// sum c (p - x.y)^2 + lambda (|X|^2 + |Y|^2) over every cell.
double als_objective(const InteractionMatrix& matrix, const FactorModel& model);

double predict(const FactorModel& model, std::size_t visitor_row, std::size_t device_col);

/// Dense predictions clamped to [0, 1].
InteractionMatrix reconstruct(const FactorModel& model);

/// Visitor and device tables keyed by id, with zero UNK/PAD rows appended.
std::pair<EmbeddingTable, EmbeddingTable> export_embeddings(const FactorModel& model);

/// Two-file snapshot (users, items), each `alsmodel v1 f=.. alpha=.. lambda=..`
/// followed by `<id> <f values>` rows.
void save_factors(std::ostream& out, const FactorModel& model, bool users);
void save_model(const std::string& users_path, const std::string& items_path, const FactorModel& model);
FactorModel load_model(const std::string& users_path, const std::string& items_path);

}  // namespace hybridrec
