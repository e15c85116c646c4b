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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridrec/als.hpp"
#include "hybridrec/dataset.hpp"
#include "hybridrec/tensor.hpp"

namespace hybridrec {

/// Device-device cosine similarity with neighborhoods N_d = {d' : sim(d,d') >= lambda_n}.
/// Comparisons allow 1e-9 of slack so that lambda_n = 1 still admits
/// numerically identical rows.
struct NeighborhoodIndex {
  std::vector<std::string> devices;
  Tensor similarity;  // (D, D)
  double lambda_n = 0.5;
  std::vector<std::vector<std::size_t>> neighborhoods;

  std::size_t size() const { return devices.size(); }
};

inline constexpr double kDefaultLambdaN = 0.5;
inline constexpr double kSimilaritySlack = 1e-9;

/// Cosine over rows of `vectors` (zero rows are similar to nothing).
Tensor cosine_similarity(const Tensor& vectors);

NeighborhoodIndex index_from_similarity(std::vector<std::string> devices, Tensor similarity, double lambda_n);
/// Cosine over ALS device factors.
NeighborhoodIndex build_index(const FactorModel& model, double lambda_n);
/// Cosine over interaction-matrix columns.
NeighborhoodIndex build_index_from_matrix(const InteractionMatrix& matrix, double lambda_n);
/// Index with explicit neighborhoods and no similarity matrix (for
/// combinatorial instances).
NeighborhoodIndex index_from_neighborhoods(std::vector<std::vector<std::size_t>> neighborhoods);

/// |union of N_d over the selection|.
std::size_t coverage(const NeighborhoodIndex& index, std::span<const std::size_t> selected);

struct CoverageStep {
  std::size_t device;
  std::size_t marginal_gain;
  std::size_t cumulative;
};

struct CoverageResult {
  std::vector<std::size_t> selection;
  std::size_t coverage = 0;
  std::vector<CoverageStep> steps;
  std::vector<std::string> warnings;
};

/// Greedy max-coverage: add the device with the largest marginal gain (ties
/// to the lower index) until k picks or no gain remains. A seed device's
/// neighborhood counts as covered up front and does not use the budget.
CoverageResult greedy_pdrc(const NeighborhoodIndex& index, std::size_t k,
                           std::optional<std::size_t> seed_device = std::nullopt);

inline constexpr std::size_t kExactMaxDevices = 20;

/// Exhaustive search over subsets of size <= k; returns the lexicographically
/// smallest optimal selection. Limited to kExactMaxDevices devices.
CoverageResult exact_pdrc(const NeighborhoodIndex& index, std::size_t k);

/// CSV `rank,device_id,marginal_gain,cumulative_coverage`.
void write_coverage_report(std::ostream& out, const NeighborhoodIndex& index, const CoverageResult& result);

}  // namespace hybridrec
