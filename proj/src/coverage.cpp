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

#include "hybridrec/coverage.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>

#include "hybridrec/csv.hpp"

namespace hybridrec {

Tensor cosine_similarity(const Tensor& vectors) {
  if (vectors.rank() != 2) throw std::invalid_argument("cosine_similarity: expected a matrix");
  const std::size_t n = vectors.dim(0), f = vectors.dim(1);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < f; ++k) s += vectors[i * f + k] * vectors[i * f + k];
    norms[i] = std::sqrt(s);
  }
  Tensor sim({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        for (std::size_t k = 0; k < f; ++k) s += vectors[i * f + k] * vectors[j * f + k];
        s /= norms[i] * norms[j];
      }
      sim[i * n + j] = s;
      sim[j * n + i] = s;
    }
  }
  return sim;
}

NeighborhoodIndex index_from_similarity(std::vector<std::string> devices, Tensor similarity, double lambda_n) {
  if (!(lambda_n >= -1.0 && lambda_n <= 1.0)) {
    throw std::invalid_argument("lambda_n must lie in [-1, 1], got " + std::to_string(lambda_n));
  }
  const std::size_t n = devices.size();
  if (similarity.shape() != Shape{n, n}) throw std::invalid_argument("similarity matrix does not match devices");
  NeighborhoodIndex index;
  index.devices = std::move(devices);
  index.similarity = std::move(similarity);
  index.lambda_n = lambda_n;
  index.neighborhoods.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (index.similarity[i * n + j] >= lambda_n - kSimilaritySlack) index.neighborhoods[i].push_back(j);
    }
  }
  return index;
}

NeighborhoodIndex build_index(const FactorModel& model, double lambda_n) {
  return index_from_similarity(model.devices, cosine_similarity(model.item_factors), lambda_n);
}

NeighborhoodIndex build_index_from_matrix(const InteractionMatrix& matrix, double lambda_n) {
  Tensor columns({matrix.cols(), matrix.rows()});
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    for (std::size_t c = 0; c < matrix.cols(); ++c) columns[c * matrix.rows() + r] = matrix.at(r, c);
  }
  return index_from_similarity(matrix.devices, cosine_similarity(columns), lambda_n);
}

NeighborhoodIndex index_from_neighborhoods(std::vector<std::vector<std::size_t>> neighborhoods) {
  NeighborhoodIndex index;
  const std::size_t n = neighborhoods.size();
  for (std::size_t i = 0; i < n; ++i) {
    index.devices.push_back("d" + std::to_string(i));
    for (std::size_t j : neighborhoods[i]) {
      if (j >= n) throw std::out_of_range("neighborhood member " + std::to_string(j) + " outside device set");
    }
  }
  index.neighborhoods = std::move(neighborhoods);
  return index;
}

std::size_t coverage(const NeighborhoodIndex& index, std::span<const std::size_t> selected) {
  std::vector<bool> covered(index.size(), false);
  std::size_t count = 0;
  for (std::size_t d : selected) {
    if (d >= index.size()) throw std::out_of_range("unknown device index " + std::to_string(d));
    for (std::size_t m : index.neighborhoods[d]) {
      if (!covered[m]) {
        covered[m] = true;
        ++count;
      }
    }
  }
  return count;
}

CoverageResult greedy_pdrc(const NeighborhoodIndex& index, std::size_t k, std::optional<std::size_t> seed_device) {
  if (k == 0) throw std::invalid_argument("greedy_pdrc: k must be at least 1");
  const std::size_t n = index.size();
  CoverageResult result;
  if (k > n) {
    result.warnings.push_back("k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " devices; truncated");
    k = n;
  }
  std::vector<bool> covered(n, false), chosen(n, false);
  if (seed_device) {
    if (*seed_device >= n) throw std::out_of_range("unknown seed device index " + std::to_string(*seed_device));
    for (std::size_t m : index.neighborhoods[*seed_device]) {
      if (!covered[m]) {
        covered[m] = true;
        ++result.coverage;
      }
    }
    chosen[*seed_device] = true;
  }
  while (result.selection.size() < k) {
    std::size_t best = n, best_gain = 0;
    for (std::size_t d = 0; d < n; ++d) {
      if (chosen[d]) continue;
      std::size_t gain = 0;
      for (std::size_t m : index.neighborhoods[d]) gain += covered[m] ? 0 : 1;
      if (gain > best_gain) {
        best_gain = gain;
        best = d;
      }
    }
    if (best == n) break;
    chosen[best] = true;
    for (std::size_t m : index.neighborhoods[best]) covered[m] = true;
    result.coverage += best_gain;
    result.selection.push_back(best);
    result.steps.push_back({best, best_gain, result.coverage});
  }
  return result;
}

CoverageResult exact_pdrc(const NeighborhoodIndex& index, std::size_t k) {
  const std::size_t n = index.size();
  if (n > kExactMaxDevices) {
    throw std::invalid_argument("exact_pdrc: " + std::to_string(n) + " devices exceeds the limit of " +
                                std::to_string(kExactMaxDevices) + "; use greedy_pdrc");
  }
  if (k == 0) throw std::invalid_argument("exact_pdrc: k must be at least 1");
  k = std::min(k, n);
  std::vector<std::uint32_t> masks(n, 0);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t m : index.neighborhoods[d]) masks[d] |= std::uint32_t{1} << m;
  }

  // Pre-order DFS visits subsets in lexicographic order, so the first subset
  // reaching the maximum is the lexicographically smallest optimum.
  std::vector<std::size_t> current, best;
  int best_cov = -1;
  auto visit = [&](auto&& self, std::size_t next, std::uint32_t covered) -> void {
    const int cov = std::popcount(covered);
    if (cov > best_cov) {
      best_cov = cov;
      best = current;
    }
    if (current.size() == k) return;
    for (std::size_t d = next; d < n; ++d) {
      current.push_back(d);
      self(self, d + 1, covered | masks[d]);
      current.pop_back();
    }
  };
  visit(visit, 0, 0);

  CoverageResult result;
  result.selection = best;
  result.coverage = static_cast<std::size_t>(best_cov);
  std::uint32_t covered = 0;
  for (std::size_t d : best) {
    const std::uint32_t next = covered | masks[d];
    result.steps.push_back({d, static_cast<std::size_t>(std::popcount(next) - std::popcount(covered)),
                            static_cast<std::size_t>(std::popcount(next))});
    covered = next;
  }
  return result;
}

void write_coverage_report(std::ostream& out, const NeighborhoodIndex& index, const CoverageResult& result) {
  out << "rank,device_id,marginal_gain,cumulative_coverage\n";
  for (std::size_t i = 0; i < result.steps.size(); ++i) {
    const auto& s = result.steps[i];
    out << i + 1 << ',' << csv::escape(index.devices[s.device]) << ',' << s.marginal_gain << ',' << s.cumulative
        << '\n';
  }
}

}  // namespace hybridrec
