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

#include "hybridrec/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

double event_score(EventType type) {
  switch (type) {
    case EventType::view: return 0.02;
    case EventType::cart: return 0.04;
    case EventType::order: return 1.0;
  }
  return 0.0;
}

std::string_view event_type_name(EventType type) {
  switch (type) {
    case EventType::view: return "view";
    case EventType::cart: return "cart";
    case EventType::order: return "order";
  }
  return "view";
}

std::optional<EventType> parse_event_type(std::string_view name) {
  if (name == "view") return EventType::view;
  if (name == "cart") return EventType::cart;
  if (name == "order") return EventType::order;
  return std::nullopt;
}

std::vector<InteractionAggregate> aggregate(std::span<const InteractionEvent> events) {
  // Per-type counts make the sums independent of event order.
  std::map<std::pair<std::string_view, std::string_view>, std::array<std::size_t, 3>> pairs;
  for (const auto& e : events) ++pairs[{e.visitor_id, e.device_id}][static_cast<std::size_t>(e.type)];
  std::vector<InteractionAggregate> out;
  out.reserve(pairs.size());
  for (const auto& [key, counts] : pairs) {
    InteractionAggregate agg;
    agg.visitor_id = key.first;
    agg.device_id = key.second;
    agg.hits = counts[0] + counts[1] + counts[2];
    agg.cum_score = static_cast<double>(counts[0]) * event_score(EventType::view) +
                    static_cast<double>(counts[1]) * event_score(EventType::cart) +
                    static_cast<double>(counts[2]) * event_score(EventType::order);
    agg.avg_score = agg.cum_score / static_cast<double>(agg.hits);
    out.push_back(std::move(agg));
  }
  return out;
}

namespace {

std::map<std::string, std::size_t, std::less<>> device_hits(std::span<const InteractionAggregate> aggs) {
  std::map<std::string, std::size_t, std::less<>> totals;
  for (const auto& a : aggs) totals[a.device_id] += a.hits;
  return totals;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

void weight_scores(std::vector<InteractionAggregate>& aggs) {
  if (aggs.empty()) return;
  const auto totals = device_hits(aggs);
  std::vector<double> counts;
  counts.reserve(totals.size());
  for (const auto& [id, h] : totals) counts.push_back(static_cast<double>(h));
  const double pivot = median(counts);

  double score_sum = 0.0, hit_sum = 0.0;
  for (const auto& a : aggs) {
    score_sum += a.cum_score;
    hit_sum += static_cast<double>(a.hits);
  }
  const double global_mean = score_sum / hit_sum;

  for (auto& a : aggs) {
    const double h = static_cast<double>(totals.find(a.device_id)->second);
    const double trust = h / (h + pivot);
    a.weighted_score = trust * a.avg_score + (1.0 - trust) * global_mean;
  }
}

void normalize_scores(std::vector<InteractionAggregate>& aggs) {
  std::unordered_map<std::string_view, std::size_t> visitor_totals;
  for (const auto& a : aggs) visitor_totals[a.visitor_id] += a.hits;
  for (auto& a : aggs) {
    const double share = static_cast<double>(a.hits) / static_cast<double>(visitor_totals[a.visitor_id]);
    a.normalized_score = a.weighted_score * share;
  }
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw std::invalid_argument("percentile must lie in (0,100), got " + std::to_string(percentile));
  }
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

Reduction reduce_by_percentile(std::span<const InteractionAggregate> aggs, double percentile) {
  if (!(percentile > 0.0 && percentile < 100.0)) {
    throw std::invalid_argument("percentile must lie in (0,100), got " + std::to_string(percentile));
  }
  if (aggs.empty()) throw std::invalid_argument("percentile reduction needs at least one aggregate");
  const auto totals = device_hits(aggs);
  std::vector<double> counts;
  for (const auto& [id, h] : totals) counts.push_back(static_cast<double>(h));

  Reduction out;
  out.threshold = nearest_rank_percentile(counts, percentile);
  out.devices_before = totals.size();
  for (const auto& [id, h] : totals) {
    if (static_cast<double>(h) >= out.threshold) ++out.devices_after;
  }
  for (const auto& a : aggs) {
    if (static_cast<double>(totals.find(a.device_id)->second) >= out.threshold) out.kept.push_back(a);
  }
  return out;
}

std::optional<std::size_t> InteractionMatrix::visitor_index(std::string_view id) const {
  auto it = std::lower_bound(visitors.begin(), visitors.end(), id);
  if (it == visitors.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - visitors.begin());
}

std::optional<std::size_t> InteractionMatrix::device_index(std::string_view id) const {
  auto it = std::lower_bound(devices.begin(), devices.end(), id);
  if (it == devices.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - devices.begin());
}

InteractionMatrix build_matrix(std::span<const InteractionAggregate> aggs) {
  InteractionMatrix m;
  std::set<std::string_view> visitors, devices;
  for (const auto& a : aggs) {
    visitors.insert(a.visitor_id);
    devices.insert(a.device_id);
  }
  m.visitors.assign(visitors.begin(), visitors.end());
  m.devices.assign(devices.begin(), devices.end());
  m.values.assign(m.rows() * m.cols(), 0.0);
  std::vector<bool> seen(m.values.size(), false);
  for (const auto& a : aggs) {
    const std::size_t r = *m.visitor_index(a.visitor_id);
    const std::size_t c = *m.device_index(a.device_id);
    const std::size_t cell = r * m.cols() + c;
    if (seen[cell]) {
      throw std::invalid_argument("duplicate aggregate for (" + a.visitor_id + ", " + a.device_id + ")");
    }
    seen[cell] = true;
    m.values[cell] = a.normalized_score;
  }
  return m;
}

const std::vector<double>* FeatureTable::find(std::string_view id) const {
  auto it = rows.find(id);
  return it == rows.end() ? nullptr : &it->second;
}

std::vector<double> FeatureTable::column_means() const {
  std::vector<double> sum(width(), 0.0), count(width(), 0.0);
  for (const auto& [id, values] : rows) {
    for (std::size_t c = 0; c < width(); ++c) {
      if (std::isfinite(values[c])) {
        sum[c] += values[c];
        count[c] += 1.0;
      }
    }
  }
  for (std::size_t c = 0; c < width(); ++c) sum[c] = count[c] > 0 ? sum[c] / count[c] : 0.0;
  return sum;
}

std::vector<std::string> device_sequence(std::span<const InteractionEvent> visitor_events, std::size_t m) {
  if (m == 0) throw std::invalid_argument("sequence length must be at least 1");
  std::map<std::string_view, std::int64_t> first_seen;
  for (const auto& e : visitor_events) {
    auto [it, inserted] = first_seen.emplace(e.device_id, e.timestamp);
    if (!inserted) it->second = std::min(it->second, e.timestamp);
  }
  std::vector<std::pair<std::int64_t, std::string_view>> order;
  for (const auto& [id, ts] : first_seen) order.emplace_back(ts, id);
  std::sort(order.begin(), order.end());
  std::vector<std::string> seq(m, std::string(kPadToken));
  const std::size_t keep = std::min(m, order.size());
  for (std::size_t i = 0; i < keep; ++i) seq[m - keep + i] = std::string(order[order.size() - keep + i].second);
  return seq;
}

std::vector<DenormalizedRow> denormalize(const InteractionMatrix& matrix, std::span<const InteractionEvent> events,
                                         std::size_t m, const FeatureSet& features,
                                         std::vector<std::string>* warnings) {
  if (m == 0) throw std::invalid_argument("sequence length must be at least 1");
  std::vector<std::vector<InteractionEvent>> by_visitor(matrix.rows());
  for (const auto& e : events) {
    const auto r = matrix.visitor_index(e.visitor_id);
    if (!r || !matrix.device_index(e.device_id)) continue;
    by_visitor[*r].push_back(e);
  }

  const auto visitor_means = features.visitor.column_means();
  const auto context_means = features.context.column_means();
  const auto device_means = features.device.column_means();
  auto impute = [](const std::vector<double>* values, const std::vector<double>& means, std::vector<double>& out) {
    for (std::size_t c = 0; c < means.size(); ++c) {
      const double v = values ? (*values)[c] : std::numeric_limits<double>::quiet_NaN();
      out.push_back(std::isfinite(v) ? v : means[c]);
    }
  };

  std::vector<DenormalizedRow> rows;
  rows.reserve(matrix.rows());
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    DenormalizedRow row;
    row.visitor_id = matrix.visitors[r];
    row.device_sequence = device_sequence(by_visitor[r], m);
    row.target.assign(matrix.row(r).begin(), matrix.row(r).end());

    const auto* vf = features.visitor.find(row.visitor_id);
    const auto* cf = features.context.find(row.visitor_id);
    if (warnings && (!vf || !cf)) {
      warnings->push_back("visitor " + row.visitor_id + " missing from " +
                          (!vf ? std::string("visitor") : std::string("context")) +
                          " features; imputed with column means");
    }
    row.features.reserve(features.width());
    impute(vf, visitor_means, row.features);
    impute(cf, context_means, row.features);

    std::vector<double> device_sum(features.device.width(), 0.0);
    std::size_t interacted = 0;
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      if (matrix.at(r, c) <= 0.0) continue;
      std::vector<double> dev;
      impute(features.device.find(matrix.devices[c]), device_means, dev);
      for (std::size_t k = 0; k < dev.size(); ++k) device_sum[k] += dev[k];
      ++interacted;
    }
    for (std::size_t k = 0; k < device_sum.size(); ++k) {
      row.features.push_back(interacted ? device_sum[k] / static_cast<double>(interacted) : device_means[k]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Standardizer Standardizer::fit(std::span<const DenormalizedRow> rows) {
  if (rows.empty()) throw std::invalid_argument("standardizer needs at least one row");
  const std::size_t width = rows.front().features.size();
  std::vector<double> sum(width, 0.0), sq(width, 0.0), count(width, 0.0);
  for (const auto& row : rows) {
    if (row.features.size() != width) throw std::invalid_argument("ragged feature vectors");
    for (std::size_t c = 0; c < width; ++c) {
      const double v = row.features[c];
      if (!std::isfinite(v)) continue;
      sum[c] += v;
      count[c] += 1.0;
    }
  }
  std::vector<double> mean(width), scale(width, 1.0);
  for (std::size_t c = 0; c < width; ++c) mean[c] = count[c] > 0 ? sum[c] / count[c] : 0.0;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < width; ++c) {
      const double v = row.features[c];
      if (std::isfinite(v)) sq[c] += (v - mean[c]) * (v - mean[c]);
    }
  }
  for (std::size_t c = 0; c < width; ++c) {
    const double sd = count[c] > 0 ? std::sqrt(sq[c] / count[c]) : 0.0;
    scale[c] = sd > 1e-12 ? sd : 1.0;
  }
  return {std::move(mean), std::move(scale)};
}

std::vector<double> Standardizer::apply(std::span<const double> raw) const {
  if (raw.size() != mean_.size()) {
    throw std::invalid_argument("feature count " + std::to_string(raw.size()) + " does not match the fitted " +
                                std::to_string(mean_.size()));
  }
  std::vector<double> out(raw.size());
  for (std::size_t c = 0; c < raw.size(); ++c) {
    out[c] = std::isfinite(raw[c]) ? (raw[c] - mean_[c]) / scale_[c] : 0.0;
  }
  return out;
}

void Standardizer::apply_in_place(std::vector<DenormalizedRow>& rows) const {
  for (auto& row : rows) row.features = apply(row.features);
}

SplitIndices split_indices(std::size_t n, double train_fraction, std::mt19937_64& rng) {
  if (n < 2) throw std::invalid_argument("split needs at least 2 rows, got " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0,1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return out;
}

std::pair<std::vector<DenormalizedRow>, std::vector<DenormalizedRow>> split(std::span<const DenormalizedRow> rows,
                                                                            double train_fraction,
                                                                            std::mt19937_64& rng) {
  const auto idx = split_indices(rows.size(), train_fraction, rng);
  std::vector<DenormalizedRow> train, validation;
  for (std::size_t i : idx.train) train.push_back(rows[i]);
  for (std::size_t i : idx.validation) validation.push_back(rows[i]);
  return {std::move(train), std::move(validation)};
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

std::string padded_id(char prefix, std::size_t index, std::size_t count) {
  const std::size_t width = std::to_string(count).size();
  std::string digits = std::to_string(index + 1);
  return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

constexpr std::size_t kLatent = 3;

const std::vector<std::string>& brand_words() {
  static const std::vector<std::string> words{"nova", "apex", "orion", "lumen", "zenith", "vertex", "pulse", "aero"};
  return words;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{"phone", "smart", "device", "new", "edition", "unlocked",
                                              "dual", "sim", "fast", "charging", "display", "premium"};
  return words;
}

}  // namespace

SynthData synth_generate(const SynthConfig& config) {
  if (config.visitors == 0 || config.devices == 0 || config.events == 0) {
    throw ConfigError("synthetic config needs at least one visitor, device and event");
  }
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t V = config.visitors, D = config.devices;
  std::vector<std::string> visitor_ids(V), device_ids(D);
  for (std::size_t v = 0; v < V; ++v) visitor_ids[v] = padded_id('v', v, V);
  for (std::size_t d = 0; d < D; ++d) device_ids[d] = padded_id('d', d, D);

  // Popularity rank is a random permutation so ids carry no signal.
  std::vector<std::size_t> rank(D);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> popularity(D);
  for (std::size_t d = 0; d < D; ++d) popularity[d] = std::pow(static_cast<double>(rank[d] + 1), -config.popularity_skew);

  std::vector<std::array<double, kLatent>> device_taste(D), visitor_taste(V);
  for (auto& z : device_taste) for (double& x : z) x = normal(rng);
  for (auto& t : visitor_taste) for (double& x : t) x = normal(rng);
  std::lognormal_distribution<double> activity_dist(0.0, 0.8);
  std::vector<double> activity(V);
  for (double& a : activity) a = activity_dist(rng);

  // Per-visitor device preference: popularity tilted by taste affinity.
  std::vector<std::vector<double>> preference(V, std::vector<double>(D));
  std::vector<std::discrete_distribution<std::size_t>> device_pick;
  device_pick.reserve(V);
  for (std::size_t v = 0; v < V; ++v) {
    double total = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      double affinity = 0.0;
      for (std::size_t k = 0; k < kLatent; ++k) affinity += visitor_taste[v][k] * device_taste[d][k];
      preference[v][d] = popularity[d] * std::exp(1.5 * affinity / std::sqrt(static_cast<double>(kLatent)));
      total += preference[v][d];
    }
    for (double& p : preference[v]) p /= total;
    device_pick.emplace_back(preference[v].begin(), preference[v].end());
  }

  std::discrete_distribution<std::size_t> visitor_pick(activity.begin(), activity.end());
  std::uniform_int_distribution<std::int64_t> start_offset(0, 30 * 86400);
  std::uniform_int_distribution<std::int64_t> gap(1, 3600);
  std::vector<std::int64_t> clock(V);
  for (auto& c : clock) c = 1'600'000'000 + start_offset(rng);

  SynthData data;
  data.events.reserve(config.events);
  for (std::size_t i = 0; i < config.events; ++i) {
    const std::size_t v = V == 1 ? 0 : visitor_pick(rng);
    const std::size_t d = D == 1 ? 0 : device_pick[v](rng);
    const double pref = preference[v][d];
    const double p_order = std::min(0.3, 0.01 + 0.25 * pref);
    const double p_cart = 0.05 + 0.1 * pref;
    const double u = unit(rng);
    const EventType type = u < p_order ? EventType::order : (u < p_order + p_cart ? EventType::cart : EventType::view);
    clock[v] += gap(rng);
    data.events.push_back({visitor_ids[v], device_ids[d], type, clock[v]});
  }

  auto maybe_missing = [&](double value) {
    return unit(rng) < config.missing_rate ? std::numeric_limits<double>::quiet_NaN() : value;
  };

  auto& vt = data.features.visitor;
  for (std::size_t c = 0; c < config.visitor_features; ++c) vt.columns.push_back("visitor_f" + std::to_string(c));
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<double> row(config.visitor_features);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double signal = c < kLatent ? visitor_taste[v][c] : 0.0;
      row[c] = maybe_missing(signal + 0.5 * normal(rng));
    }
    vt.ids.push_back(visitor_ids[v]);
    vt.rows.emplace(visitor_ids[v], std::move(row));
  }

  auto& ct = data.features.context;
  for (std::size_t c = 0; c < config.context_features; ++c) ct.columns.push_back("context_f" + std::to_string(c));
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<double> row(config.context_features);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double signal = c == 0 ? std::log(activity[v]) : 0.0;
      row[c] = maybe_missing(signal + 0.5 * normal(rng));
    }
    ct.ids.push_back(visitor_ids[v]);
    ct.rows.emplace(visitor_ids[v], std::move(row));
  }

  auto& dt = data.features.device;
  for (std::size_t c = 0; c < config.device_features; ++c) dt.columns.push_back("device_f" + std::to_string(c));
  for (std::size_t d = 0; d < D; ++d) {
    std::vector<double> row(config.device_features);
    for (std::size_t c = 0; c < row.size(); ++c) {
      double signal = 0.0;
      if (c < kLatent) signal = device_taste[d][c];
      else if (c == kLatent) signal = std::log(popularity[d]);
      row[c] = maybe_missing(signal + 0.3 * normal(rng));
    }
    dt.ids.push_back(device_ids[d]);
    dt.rows.emplace(device_ids[d], std::move(row));
  }

  // Names and descriptions carry the latent taste through their tokens.
  const auto& brands = brand_words();
  const auto& fillers = filler_words();
  std::uniform_int_distribution<std::size_t> filler_pick(0, fillers.size() - 1);
  for (std::size_t d = 0; d < D; ++d) {
    const auto& z = device_taste[d];
    const std::size_t brand = (z[0] > 0 ? 1 : 0) + (z[1] > 0 ? 2 : 0) + (z[2] > 0 ? 4 : 0);
    DeviceDescription desc;
    desc.device_id = device_ids[d];
    desc.name = brands[brand % brands.size()] + " model" + std::to_string(d + 1);
    std::string text;
    for (std::size_t k = 0; k < kLatent; ++k) {
      const char* level = z[k] > 0.5 ? "high" : (z[k] < -0.5 ? "low" : "mid");
      text += "trait" + std::to_string(k) + level + " ";
    }
    for (int i = 0; i < 4; ++i) text += fillers[filler_pick(rng)] + " ";
    text += rank[d] < D / 10 + 1 ? "bestseller" : "classic";
    desc.description = std::move(text);
    data.descriptions.push_back(std::move(desc));
  }
  return data;
}

// ---------------------------------------------------------------------------
// CSV I/O

void write_events(std::ostream& out, std::span<const InteractionEvent> events) {
  out << "visitor_id,device_id,event_type,timestamp\n";
  for (const auto& e : events) {
    out << csv::escape(e.visitor_id) << ',' << csv::escape(e.device_id) << ',' << event_type_name(e.type) << ','
        << e.timestamp << '\n';
  }
}

std::vector<InteractionEvent> read_events(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 1, "missing header");
  const auto header = csv::split(line);
  if (header != std::vector<std::string>{"visitor_id", "device_id", "event_type", "timestamp"}) {
    throw DataError(source, 1, "expected header visitor_id,device_id,event_type,timestamp");
  }
  std::vector<InteractionEvent> events;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    if (f.size() != 4) throw DataError(source, line_no, "expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty() || f[1].empty()) throw DataError(source, line_no, "empty visitor or device id");
    const auto type = parse_event_type(f[2]);
    if (!type) throw DataError(source, line_no, "unknown event_type '" + f[2] + "'");
    std::int64_t ts = 0;
    try {
      std::size_t used = 0;
      ts = std::stoll(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(source, line_no, "timestamp '" + f[3] + "' is not an integer");
    }
    if (ts < 0) throw DataError(source, line_no, "negative timestamp");
    events.push_back({f[0], f[1], *type, ts});
  }
  return events;
}

void write_features(std::ostream& out, const FeatureTable& table, std::string_view id_column) {
  std::vector<std::string> header{std::string(id_column)};
  header.insert(header.end(), table.columns.begin(), table.columns.end());
  out << csv::join(header) << '\n';
  for (const auto& id : table.ids) {
    out << csv::escape(id);
    for (double v : table.rows.at(id)) out << ',' << (std::isfinite(v) ? csv::format_double(v) : std::string());
    out << '\n';
  }
}

FeatureTable read_features(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 1, "missing header row");
  const auto header = csv::split(line);
  if (header.size() < 1 || header[0].empty()) throw DataError(source, 1, "header needs an id column");
  const std::size_t width = header.size() - 1;

  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> record_lines;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split(line);
    if (f.size() != header.size()) {
      throw DataError(source, line_no,
                      "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    records.push_back(std::move(f));
    record_lines.push_back(line_no);
  }

  // A column is categorical when any non-empty cell is not a number.
  std::vector<bool> categorical(width, false);
  std::vector<std::set<std::string>> levels(width);
  for (const auto& rec : records) {
    for (std::size_t c = 0; c < width; ++c) {
      const auto& cell = rec[c + 1];
      double tmp = 0.0;
      if (!cell.empty() && !csv::parse_double(cell, tmp)) categorical[c] = true;
      if (!cell.empty()) levels[c].insert(cell);
    }
  }

  FeatureTable table;
  for (std::size_t c = 0; c < width; ++c) {
    if (!categorical[c]) {
      table.columns.push_back(header[c + 1]);
      continue;
    }
    for (const auto& level : levels[c]) table.columns.push_back(header[c + 1] + "=" + level);
    table.columns.push_back(header[c + 1] + "=unknown");
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    std::vector<double> values;
    values.reserve(table.columns.size());
    for (std::size_t c = 0; c < width; ++c) {
      const auto& cell = rec[c + 1];
      if (!categorical[c]) {
        double v = nan;
        if (!cell.empty()) csv::parse_double(cell, v);
        values.push_back(v);
        continue;
      }
      for (const auto& level : levels[c]) values.push_back(cell == level ? 1.0 : 0.0);
      values.push_back(cell.empty() ? 1.0 : 0.0);
    }
    if (!table.rows.emplace(rec[0], std::move(values)).second) {
      throw DataError(source, record_lines[r], "duplicate id '" + rec[0] + "'");
    }
    table.ids.push_back(rec[0]);
  }
  return table;
}

void write_descriptions(std::ostream& out, std::span<const DeviceDescription> descriptions) {
  out << "device_id,name,description\n";
  for (const auto& d : descriptions) {
    out << csv::join({d.device_id, d.name, d.description}) << '\n';
  }
}

std::vector<DeviceDescription> read_descriptions(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 1, "missing header");
  if (csv::split(line) != std::vector<std::string>{"device_id", "name", "description"}) {
    throw DataError(source, 1, "expected header device_id,name,description");
  }
  std::vector<DeviceDescription> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split(line);
    if (f.size() != 3) throw DataError(source, line_no, "expected 3 fields, got " + std::to_string(f.size()));
    out.push_back({f[0], f[1], f[2]});
  }
  return out;
}

}  // namespace hybridrec
