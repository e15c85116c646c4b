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

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hybridrec/als.hpp"
#include "hybridrec/config.hpp"
#include "hybridrec/dataset.hpp"
#include "hybridrec/hybridnet.hpp"

namespace hybridrec {

/// Every tunable of a run. One `seed` drives synthesis, ALS, the split and the
/// network; `net.*` keys are those of HybridConfig minus `net.seed`.
struct RunConfig {
  std::uint64_t seed = 7;
  SynthConfig synth;
  double percentile = 90.0;
  std::size_t embedding_dim = 32;
  AlsConfig als;
  HybridConfig net;
  double train_fraction = 0.8;
  double coverage_lambda = 0.5;
  std::size_t coverage_k = 5;

  KeyValues to_key_values() const;
  /// Throws ConfigError for unknown keys and out-of-range values.
  static RunConfig from_key_values(const KeyValues& kv);
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; the last bin is closed.
Histogram histogram(std::span<const double> values, std::size_t bins);

/// Pearson correlation; 0 when either side is constant.
double correlation(std::span<const double> a, std::span<const double> b);

struct PrepStats {
  std::size_t events = 0;
  std::size_t pairs = 0;
  Reduction reduction;  // `kept` left empty
  Histogram hits;
  Histogram avg_score;
  // Over the kept pairs, in the order hits, avg, weighted, normalized.
  std::array<std::array<double, 4>, 4> correlation{};
};

struct Prepared {
  InteractionMatrix matrix;
  std::vector<DenormalizedRow> rows;  // raw (unstandardized) features
  std::vector<std::string> warnings;
  PrepStats stats;
};

/// aggregate -> percentile reduction -> weighting -> normalization -> matrix
/// -> one denormalized row per visitor. Throws EmptyDataError when nothing
/// survives the reduction.
Prepared prepare(std::span<const InteractionEvent> events, const FeatureSet& features, double percentile,
                 std::size_t m);

void write_stats(std::ostream& out, const PrepStats& stats);

// Matrix CSV: `visitor_id,<device ids...>` header then one row per visitor.
void write_matrix(std::ostream& out, const InteractionMatrix& matrix);
InteractionMatrix read_matrix(std::istream& in, const std::string& source = "matrix");

// Rows CSV: `visitor_id,sequence,features`, the sequence and features
// space-separated. Targets are not stored; attach_targets restores them.
void write_rows(std::ostream& out, std::span<const DenormalizedRow> rows);
std::vector<DenormalizedRow> read_rows(std::istream& in, const std::string& source = "rows");
void attach_targets(std::vector<DenormalizedRow>& rows, const InteractionMatrix& matrix);

void write_standardizer(std::ostream& out, const Standardizer& scaler);
Standardizer read_standardizer(std::istream& in, const std::string& source = "scaler");

struct TrainingSplit {
  std::vector<DenormalizedRow> train;
  std::vector<DenormalizedRow> validation;  // standardized with the train-fitted scaler
  Standardizer scaler;
};

TrainingSplit make_split(std::span<const DenormalizedRow> rows, double train_fraction, std::uint64_t seed);

/// The clamped ALS reconstruction rows of the given visitors, (rows, D).
Tensor als_predictions(const FactorModel& model, std::span<const DenormalizedRow> rows);

/// Keeps the `kept` rows of `pred`.
Tensor select_rows(const Tensor& pred, std::span<const std::size_t> kept);

}  // namespace hybridrec
