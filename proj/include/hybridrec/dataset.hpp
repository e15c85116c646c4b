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
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hybridrec {

enum class EventType { view, cart, order };

/// Confidence contributed by one interaction: view 0.02, cart 0.04, order 1.0.
double event_score(EventType type);
std::string_view event_type_name(EventType type);
std::optional<EventType> parse_event_type(std::string_view name);

struct InteractionEvent {
  std::string visitor_id;
  std::string device_id;
  EventType type = EventType::view;
  std::int64_t timestamp = 0;
};

/// Per (visitor, device) pair. weighted/normalized stay at 0 until
/// weight_scores / normalize_scores fill them.
struct InteractionAggregate {
  std::string visitor_id;
  std::string device_id;
  std::size_t hits = 0;
  double cum_score = 0.0;
  double avg_score = 0.0;
  double weighted_score = 0.0;
  double normalized_score = 0.0;
};

/// One aggregate per distinct pair, ordered by (visitor_id, device_id).
std::vector<InteractionAggregate> aggregate(std::span<const InteractionEvent> events);

/// Shrinks each pair's average score toward the global mean event score:
///   w = h_d/(h_d+H) * avg + H/(h_d+H) * g
/// where h_d is the device's total hits, H the median of the device totals and
/// g the mean score over all events.
void weight_scores(std::vector<InteractionAggregate>& aggs);

/// normalized = weighted * hits(u,d) / (total events of visitor u).
void normalize_scores(std::vector<InteractionAggregate>& aggs);

/// Nearest-rank percentile of `values` (need not be sorted). p in (0,100).
double nearest_rank_percentile(std::vector<double> values, double percentile);

struct Reduction {
  std::vector<InteractionAggregate> kept;
  double threshold = 0.0;
  std::size_t devices_before = 0;
  std::size_t devices_after = 0;
};

/// Keeps devices whose total hits reach the percentile threshold (ties kept).
Reduction reduce_by_percentile(std::span<const InteractionAggregate> aggs, double percentile);

/// Dense visitors x devices matrix of normalized scores, rows and columns in
/// lexicographic id order.
struct InteractionMatrix {
  std::vector<std::string> visitors;
  std::vector<std::string> devices;
  std::vector<double> values;  // row-major

  std::size_t rows() const { return visitors.size(); }
  std::size_t cols() const { return devices.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
  std::optional<std::size_t> visitor_index(std::string_view id) const;
  std::optional<std::size_t> device_index(std::string_view id) const;
};

InteractionMatrix build_matrix(std::span<const InteractionAggregate> aggs);

/// Numeric feature table keyed by the first CSV column. Missing cells are NaN.
struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<std::string> ids;
  std::map<std::string, std::vector<double>, std::less<>> rows;

  std::size_t width() const { return columns.size(); }
  const std::vector<double>* find(std::string_view id) const;
  /// Column means over non-missing cells (0 for an all-missing column).
  std::vector<double> column_means() const;
};

struct FeatureSet {
  FeatureTable visitor;
  FeatureTable context;
  FeatureTable device;

  std::size_t width() const { return visitor.width() + context.width() + device.width(); }
};

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

struct DenormalizedRow {
  std::string visitor_id;
  std::vector<std::string> device_sequence;  // exactly m entries, left-padded
  std::vector<double> features;
  std::vector<double> target;
};

/// Devices of one visitor ordered by first-event time, the most recent `m`
/// kept, left-padded with kPadToken.
std::vector<std::string> device_sequence(std::span<const InteractionEvent> visitor_events, std::size_t m);

/// One row per matrix visitor. Features are visitor ++ context ++ mean of the
/// interacted devices' features, with missing cells imputed to column means;
/// they are not standardized here (see Standardizer). Visitors absent from a
/// feature table are imputed entirely and reported in `warnings`.
std::vector<DenormalizedRow> denormalize(const InteractionMatrix& matrix, std::span<const InteractionEvent> events,
                                         std::size_t m, const FeatureSet& features,
                                         std::vector<std::string>* warnings = nullptr);

/// z-score with statistics from the rows it was fitted on. Non-finite inputs
/// map to 0, i.e. the fitted mean.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> scale) : mean_(std::move(mean)), scale_(std::move(scale)) {}
  static Standardizer fit(std::span<const DenormalizedRow> rows);
  std::vector<double> apply(std::span<const double> raw) const;
  void apply_in_place(std::vector<DenormalizedRow>& rows) const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }
  std::size_t width() const { return mean_.size(); }

 private:
  std::vector<double> mean_, scale_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle, then the first round(n * fraction) indices (clamped to
/// [1, n-1]) train and the rest validate.
SplitIndices split_indices(std::size_t n, double train_fraction, std::mt19937_64& rng);

std::pair<std::vector<DenormalizedRow>, std::vector<DenormalizedRow>> split(std::span<const DenormalizedRow> rows,
                                                                            double train_fraction,
                                                                            std::mt19937_64& rng);

struct DeviceDescription {
  std::string device_id;
  std::string name;
  std::string description;
};

struct SynthConfig {
  std::size_t visitors = 2000;
  std::size_t devices = 60;
  std::size_t events = 40000;
  std::uint64_t seed = 7;
  double popularity_skew = 1.2;
  std::size_t visitor_features = 6;
  std::size_t context_features = 4;
  std::size_t device_features = 5;
  double missing_rate = 0.02;
};

struct SynthData {
  std::vector<InteractionEvent> events;
  FeatureSet features;
  std::vector<DeviceDescription> descriptions;
};

/// Deterministic synthetic clickstream with power-law device popularity and
/// latent visitor tastes that leak into features and device descriptions.
SynthData synth_generate(const SynthConfig& config);

// CSV I/O. Readers throw DataError naming the offending line.
void write_events(std::ostream& out, std::span<const InteractionEvent> events);
std::vector<InteractionEvent> read_events(std::istream& in, const std::string& source = "events");
void write_features(std::ostream& out, const FeatureTable& table, std::string_view id_column);
/// Non-numeric columns are one-hot encoded, with empty cells mapped to a
/// dedicated "unknown" category. Empty numeric cells become NaN.
FeatureTable read_features(std::istream& in, const std::string& source = "features");
void write_descriptions(std::ostream& out, std::span<const DeviceDescription> descriptions);
std::vector<DeviceDescription> read_descriptions(std::istream& in, const std::string& source = "devices");

}  // namespace hybridrec
