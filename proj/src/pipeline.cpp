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

#include "hybridrec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

namespace {

const std::vector<std::string>& run_keys() {
  static const std::vector<std::string> keys{
      "seed",          "synth.visitors",          "synth.devices",         "synth.events",
      "synth.skew",    "synth.visitor_features",  "synth.context_features", "synth.device_features",
      "synth.missing_rate", "prep.percentile",    "emb.dim",               "als.factors",
      "als.alpha",     "als.lambda",              "als.iterations",        "als.cg_steps",
      "als.solver",    "train.fraction",          "coverage.lambda",       "coverage.k"};
  return keys;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::string join_doubles(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += csv::format_double(values[i]);
  }
  return out;
}

std::vector<std::string> split_spaces(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

KeyValues RunConfig::to_key_values() const {
  KeyValues out;
  const KeyValues net_kv = net.to_key_values();
  for (const auto& [k, v] : net_kv.values()) {
    if (k != "net.seed") out.set(k, v);
  }
  out.set("seed", std::to_string(seed));
  out.set("synth.visitors", std::to_string(synth.visitors));
  out.set("synth.devices", std::to_string(synth.devices));
  out.set("synth.events", std::to_string(synth.events));
  out.set("synth.skew", csv::format_double(synth.popularity_skew));
  out.set("synth.visitor_features", std::to_string(synth.visitor_features));
  out.set("synth.context_features", std::to_string(synth.context_features));
  out.set("synth.device_features", std::to_string(synth.device_features));
  out.set("synth.missing_rate", csv::format_double(synth.missing_rate));
  out.set("prep.percentile", csv::format_double(percentile));
  out.set("emb.dim", std::to_string(embedding_dim));
  out.set("als.factors", std::to_string(als.factors));
  out.set("als.alpha", csv::format_double(als.alpha));
  out.set("als.lambda", csv::format_double(als.lambda_reg));
  out.set("als.iterations", std::to_string(als.iterations));
  out.set("als.cg_steps", std::to_string(als.cg_steps));
  out.set("als.solver", als.solver == AlsSolver::direct ? "direct" : "cg");
  out.set("train.fraction", csv::format_double(train_fraction));
  out.set("coverage.lambda", csv::format_double(coverage_lambda));
  out.set("coverage.k", std::to_string(coverage_k));
  return out;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  std::set<std::string> allowed(run_keys().begin(), run_keys().end());
  const KeyValues net_defaults = HybridConfig().to_key_values();
  for (const auto& [k, v] : net_defaults.values()) {
    if (k != "net.seed") allowed.insert(k);
  }
  kv.reject_unknown(allowed);

  RunConfig c;
  c.seed = kv.get_u64("seed", c.seed);
  c.synth.seed = c.seed;
  c.synth.visitors = kv.get_size("synth.visitors", c.synth.visitors);
  c.synth.devices = kv.get_size("synth.devices", c.synth.devices);
  c.synth.events = kv.get_size("synth.events", c.synth.events);
  c.synth.popularity_skew = kv.get_double("synth.skew", c.synth.popularity_skew);
  c.synth.visitor_features = kv.get_size("synth.visitor_features", c.synth.visitor_features);
  c.synth.context_features = kv.get_size("synth.context_features", c.synth.context_features);
  c.synth.device_features = kv.get_size("synth.device_features", c.synth.device_features);
  c.synth.missing_rate = kv.get_double("synth.missing_rate", c.synth.missing_rate);
  c.percentile = kv.get_double("prep.percentile", c.percentile);
  c.embedding_dim = kv.get_size("emb.dim", c.embedding_dim);
  c.als.seed = c.seed;
  c.als.factors = kv.get_size("als.factors", c.als.factors);
  c.als.alpha = kv.get_double("als.alpha", c.als.alpha);
  c.als.lambda_reg = kv.get_double("als.lambda", c.als.lambda_reg);
  c.als.iterations = kv.get_size("als.iterations", c.als.iterations);
  c.als.cg_steps = kv.get_size("als.cg_steps", c.als.cg_steps);
  const auto solver = kv.get_string("als.solver", "cg");
  require(solver == "cg" || solver == "direct", "als.solver must be cg or direct, got '" + solver + "'");
  c.als.solver = solver == "cg" ? AlsSolver::cg : AlsSolver::direct;
  c.train_fraction = kv.get_double("train.fraction", c.train_fraction);
  c.coverage_lambda = kv.get_double("coverage.lambda", c.coverage_lambda);
  c.coverage_k = kv.get_size("coverage.k", c.coverage_k);

  KeyValues net_kv = kv;
  net_kv.set("net.seed", std::to_string(c.seed));
  c.net = HybridConfig::from_key_values(net_kv);

  require(c.percentile > 0.0 && c.percentile < 100.0, "prep.percentile must lie in (0, 100)");
  require(c.embedding_dim >= 1, "emb.dim must be at least 1");
  require(c.als.factors >= 1, "als.factors must be at least 1");
  require(c.als.alpha >= 0.0 && c.als.lambda_reg >= 0.0, "als.alpha and als.lambda must be non-negative");
  require(c.train_fraction > 0.0 && c.train_fraction < 1.0, "train.fraction must lie in (0, 1)");
  require(c.coverage_lambda >= -1.0 && c.coverage_lambda <= 1.0, "coverage.lambda must lie in [-1, 1]");
  require(c.coverage_k >= 1, "coverage.k must be at least 1");
  require(c.net.m >= 1, "net.m must be at least 1");
  require(c.net.conv_blocks >= 1 && c.net.conv_blocks <= 16, "net.conv_blocks must lie in [1, 16]");
  require(c.net.conv_filters.size() == c.net.conv_blocks, "net.conv_filters needs one entry per conv block");
  require(c.net.dropout_rate >= 0.0 && c.net.dropout_rate < 1.0, "net.dropout must lie in [0, 1)");
  require(c.net.k_top >= 1, "net.k_top must be at least 1");
  require(c.net.batch >= 1, "net.batch must be at least 1");
  require(!c.net.n1_dense.empty() && !c.net.n3_dense.empty(), "net.n1_dense and net.n3_dense cannot be empty");
  return c;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it, width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(i == bins ? hi : lo + width * static_cast<double>(i));
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation: length mismatch");
  const double n = static_cast<double>(a.size());
  if (a.empty()) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Prepared prepare(std::span<const InteractionEvent> events, const FeatureSet& features, double percentile,
                 std::size_t m) {
  if (events.empty()) throw EmptyDataError("no interaction events");
  Prepared out;
  const auto aggs = aggregate(events);
  out.stats.events = events.size();
  out.stats.pairs = aggs.size();
  Reduction red = reduce_by_percentile(aggs, percentile);
  if (red.kept.empty()) throw EmptyDataError("no devices survive the percentile reduction");
  weight_scores(red.kept);
  normalize_scores(red.kept);

  std::array<std::vector<double>, 4> cols;
  for (const auto& a : red.kept) {
    cols[0].push_back(static_cast<double>(a.hits));
    cols[1].push_back(a.avg_score);
    cols[2].push_back(a.weighted_score);
    cols[3].push_back(a.normalized_score);
  }
  out.stats.hits = histogram(cols[0], 10);
  out.stats.avg_score = histogram(cols[1], 10);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) out.stats.correlation[i][j] = i == j ? 1.0 : correlation(cols[i], cols[j]);
  }

  out.matrix = build_matrix(red.kept);
  if (out.matrix.rows() == 0 || out.matrix.cols() == 0) throw EmptyDataError("interaction matrix is empty");
  out.rows = denormalize(out.matrix, events, m, features, &out.warnings);
  red.kept.clear();
  out.stats.reduction = std::move(red);
  return out;
}

void write_stats(std::ostream& out, const PrepStats& s) {
  out << "events: " << s.events << '\n'
      << "pairs: " << s.pairs << '\n'
      << "percentile threshold: " << csv::format_double(s.reduction.threshold) << '\n'
      << "devices: " << s.reduction.devices_before << " -> " << s.reduction.devices_after << '\n';
  auto hist = [&](const char* name, const Histogram& h) {
    out << '\n' << name << " histogram\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      out << "  [" << csv::format_double(h.edges[i]) << ", " << csv::format_double(h.edges[i + 1])
          << (i + 1 == h.counts.size() ? "] " : ") ") << h.counts[i] << '\n';
    }
  };
  hist("hits", s.hits);
  hist("avg score", s.avg_score);
  static const char* names[] = {"hits", "avg", "weighted", "normalized"};
  out << "\ncorrelation\n           ";
  for (const char* n : names) out << ' ' << n;
  out << '\n';
  for (std::size_t i = 0; i < 4; ++i) {
    out << "  " << names[i];
    for (std::size_t j = 0; j < 4; ++j) out << ' ' << csv::format_double(s.correlation[i][j]);
    out << '\n';
  }
}

void write_matrix(std::ostream& out, const InteractionMatrix& matrix) {
  std::vector<std::string> header{"visitor_id"};
  header.insert(header.end(), matrix.devices.begin(), matrix.devices.end());
  out << csv::join(header) << '\n';
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    out << csv::escape(matrix.visitors[r]);
    for (double v : matrix.row(r)) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

InteractionMatrix read_matrix(std::istream& in, const std::string& source) {
  InteractionMatrix m;
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 0, "empty matrix file");
  auto header = csv::split(line);
  if (header.empty() || header[0] != "visitor_id") throw DataError(source, 1, "expected a visitor_id header");
  m.devices.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = csv::split(line);
    if (rec.size() != header.size()) throw DataError(source, line_no, "expected " + std::to_string(header.size()) + " fields");
    m.visitors.push_back(rec[0]);
    for (std::size_t c = 1; c < rec.size(); ++c) {
      double v = 0.0;
      if (!csv::parse_double(rec[c], v)) throw DataError(source, line_no, "bad number '" + rec[c] + "'");
      m.values.push_back(v);
    }
  }
  return m;
}

void write_rows(std::ostream& out, std::span<const DenormalizedRow> rows) {
  out << "visitor_id,sequence,features\n";
  for (const auto& r : rows) {
    std::string seq;
    for (std::size_t i = 0; i < r.device_sequence.size(); ++i) seq += (i ? " " : "") + r.device_sequence[i];
    out << csv::join({r.visitor_id, seq, join_doubles(r.features)}) << '\n';
  }
}

std::vector<DenormalizedRow> read_rows(std::istream& in, const std::string& source) {
  std::vector<DenormalizedRow> rows;
  std::string line;
  if (!std::getline(in, line) || line != "visitor_id,sequence,features") {
    throw DataError(source, 1, "expected header visitor_id,sequence,features");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = csv::split(line);
    if (rec.size() != 3) throw DataError(source, line_no, "expected 3 fields");
    DenormalizedRow r;
    r.visitor_id = rec[0];
    r.device_sequence = split_spaces(rec[1]);
    for (const auto& tok : split_spaces(rec[2])) {
      double v = 0.0;
      if (!csv::parse_double(tok, v)) throw DataError(source, line_no, "bad feature '" + tok + "'");
      r.features.push_back(v);
    }
    if (!rows.empty() && r.features.size() != rows.front().features.size()) {
      throw DataError(source, line_no, "feature count differs from the first row");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void attach_targets(std::vector<DenormalizedRow>& rows, const InteractionMatrix& matrix) {
  for (auto& r : rows) {
    const auto idx = matrix.visitor_index(r.visitor_id);
    if (!idx) throw DataError("rows", 0, "visitor " + r.visitor_id + " is not in the interaction matrix");
    r.target.assign(matrix.row(*idx).begin(), matrix.row(*idx).end());
  }
}

void write_standardizer(std::ostream& out, const Standardizer& scaler) {
  out << "mean,scale\n";
  for (std::size_t i = 0; i < scaler.width(); ++i) {
    out << csv::format_double(scaler.mean()[i]) << ',' << csv::format_double(scaler.scale()[i]) << '\n';
  }
}

Standardizer read_standardizer(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || line != "mean,scale") throw DataError(source, 1, "expected header mean,scale");
  std::vector<double> mean, scale;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = csv::split(line);
    double a = 0.0, b = 0.0;
    if (rec.size() != 2 || !csv::parse_double(rec[0], a) || !csv::parse_double(rec[1], b) || !(b > 0.0)) {
      throw DataError(source, line_no, "expected mean,scale with a positive scale");
    }
    mean.push_back(a);
    scale.push_back(b);
  }
  return Standardizer(std::move(mean), std::move(scale));
}

TrainingSplit make_split(std::span<const DenormalizedRow> rows, double train_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto [train, validation] = split(rows, train_fraction, rng);
  TrainingSplit out{std::move(train), std::move(validation), {}};
  out.scaler = Standardizer::fit(out.train);
  out.scaler.apply_in_place(out.train);
  out.scaler.apply_in_place(out.validation);
  return out;
}

Tensor als_predictions(const FactorModel& model, std::span<const DenormalizedRow> rows) {
  const InteractionMatrix recon = reconstruct(model);
  Tensor out({rows.size(), recon.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = recon.visitor_index(rows[i].visitor_id);
    if (!r) throw std::invalid_argument("visitor " + rows[i].visitor_id + " has no ALS factors");
    std::copy(recon.row(*r).begin(), recon.row(*r).end(), out.data() + i * recon.cols());
  }
  return out;
}

Tensor select_rows(const Tensor& pred, std::span<const std::size_t> kept) {
  const std::size_t w = pred.dim(1);
  Tensor out({kept.size(), w});
  for (std::size_t i = 0; i < kept.size(); ++i) std::copy(pred.data() + kept[i] * w, pred.data() + (kept[i] + 1) * w, out.data() + i * w);
  return out;
}

}  // namespace hybridrec
