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

#include "hybridrec/hybridnet.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

std::string_view head_name(Head head) { return head == Head::regression ? "regression" : "classification"; }
std::string_view fusion_name(N3Fusion fusion) { return fusion == N3Fusion::dot ? "dot" : "concatenate"; }
std::string_view target_source_name(TargetSource source) {
  return source == TargetSource::input_matrix ? "input_matrix" : "als_reconstruction";
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : csv::split(text)) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("config key '" + key + "' expects a comma-separated list of integers, got '" + text + "'");
    }
    out.push_back(std::stoul(part));
  }
  return out;
}

}  // namespace

KeyValues HybridConfig::to_key_values() const {
  KeyValues kv;
  kv.set("net.m", std::to_string(m));
  kv.set("net.head", std::string(head_name(head)));
  kv.set("net.n3_fusion", std::string(fusion_name(n3_fusion)));
  kv.set("net.target_source", std::string(target_source_name(target_source)));
  kv.set("net.conv_blocks", std::to_string(conv_blocks));
  kv.set("net.conv_filters", join_sizes(conv_filters));
  kv.set("net.kernel", std::to_string(kernel));
  kv.set("net.n1_dense", join_sizes(n1_dense));
  kv.set("net.lstm_units", std::to_string(lstm_units));
  kv.set("net.n2_dense", std::to_string(n2_dense));
  kv.set("net.n3_dense", join_sizes(n3_dense));
  kv.set("net.n4_dense", std::to_string(n4_dense));
  kv.set("net.shared_dense", std::to_string(shared_dense));
  kv.set("net.dropout", csv::format_double(dropout_rate));
  kv.set("net.k_top", std::to_string(k_top));
  kv.set("net.epochs", std::to_string(epochs));
  kv.set("net.batch", std::to_string(batch));
  kv.set("net.learning_rate", csv::format_double(learning_rate));
  kv.set("net.train_text_embeddings", train_text_embeddings ? "true" : "false");
  kv.set("net.exclude_seen", exclude_seen ? "true" : "false");
  kv.set("net.seed", std::to_string(seed));
  return kv;
}

HybridConfig HybridConfig::from_key_values(const KeyValues& kv) {
  HybridConfig c;
  c.m = kv.get_size("net.m", c.m);
  const auto head = kv.get_string("net.head", "regression");
  if (head == "regression") c.head = Head::regression;
  else if (head == "classification") c.head = Head::classification;
  else throw ConfigError("net.head must be regression or classification, got '" + head + "'");
  const auto fusion = kv.get_string("net.n3_fusion", "dot");
  if (fusion == "dot") c.n3_fusion = N3Fusion::dot;
  else if (fusion == "concatenate") c.n3_fusion = N3Fusion::concatenate;
  else throw ConfigError("net.n3_fusion must be dot or concatenate, got '" + fusion + "'");
  const auto source = kv.get_string("net.target_source", "input_matrix");
  if (source == "input_matrix") c.target_source = TargetSource::input_matrix;
  else if (source == "als_reconstruction") c.target_source = TargetSource::als_reconstruction;
  else throw ConfigError("net.target_source must be input_matrix or als_reconstruction, got '" + source + "'");
  c.conv_blocks = kv.get_size("net.conv_blocks", c.conv_blocks);
  if (kv.has("net.conv_filters")) {
    c.conv_filters = parse_sizes("net.conv_filters", kv.get_string("net.conv_filters", ""));
  } else {
    c.conv_filters.clear();
    for (std::size_t i = 0; i < c.conv_blocks; ++i) c.conv_filters.push_back(std::size_t{16} << i);
  }
  c.kernel = kv.get_size("net.kernel", c.kernel);
  if (kv.has("net.n1_dense")) c.n1_dense = parse_sizes("net.n1_dense", kv.get_string("net.n1_dense", ""));
  c.lstm_units = kv.get_size("net.lstm_units", c.lstm_units);
  c.n2_dense = kv.get_size("net.n2_dense", c.n2_dense);
  if (kv.has("net.n3_dense")) c.n3_dense = parse_sizes("net.n3_dense", kv.get_string("net.n3_dense", ""));
  c.n4_dense = kv.get_size("net.n4_dense", c.n4_dense);
  c.shared_dense = kv.get_size("net.shared_dense", c.shared_dense);
  c.dropout_rate = kv.get_double("net.dropout", c.dropout_rate);
  c.k_top = kv.get_size("net.k_top", c.k_top);
  c.epochs = kv.get_size("net.epochs", c.epochs);
  c.batch = kv.get_size("net.batch", c.batch);
  c.learning_rate = kv.get_double("net.learning_rate", c.learning_rate);
  c.train_text_embeddings = kv.get_bool("net.train_text_embeddings", c.train_text_embeddings);
  c.exclude_seen = kv.get_bool("net.exclude_seen", c.exclude_seen);
  c.seed = kv.get_u64("net.seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------

struct HybridNet::Branches {
  Sequential n1;
  Sequential n2;
  std::unique_ptr<Embedding> visitor_emb;
  std::unique_ptr<Embedding> device_emb;
  Dot dot;
  Concatenate n3_concat;
  Sequential n3;
  Sequential n4;
  Concatenate shared_concat;
  Sequential shared;
  Lambda* lambda = nullptr;
  std::vector<Dropout*> dropouts;
  EmbeddingTable visitor_index;
  std::size_t seq_len = 0;
};

HybridNet::~HybridNet() = default;
HybridNet::HybridNet(HybridNet&&) noexcept = default;
HybridNet& HybridNet::operator=(HybridNet&&) noexcept = default;

HybridNet::HybridNet(HybridConfig config, std::vector<std::string> devices, std::size_t features,
                     const HybridTables& tables)
    : config_(std::move(config)), devices_(std::move(devices)), features_(features), b_(std::make_unique<Branches>()) {
  const auto& c = config_;
  const std::size_t D = devices_.size();
  if (D == 0) throw std::invalid_argument("hybridnet: no devices");
  if (c.m == 0) throw std::invalid_argument("hybridnet: sequence length m must be at least 1");
  if (c.conv_blocks < 1 || c.conv_blocks > 16) throw std::invalid_argument("hybridnet: conv_blocks must be in [1, 16]");
  if (c.conv_filters.size() != c.conv_blocks) {
    throw std::invalid_argument("hybridnet: conv_filters lists " + std::to_string(c.conv_filters.size()) +
                                " sizes for " + std::to_string(c.conv_blocks) + " blocks");
  }
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw std::invalid_argument("hybridnet: dropout in [0,1)");
  if (c.k_top > D) throw std::invalid_argument("hybridnet: k_top exceeds the device count");
  if (c.n1_dense.empty() || c.n3_dense.empty()) throw std::invalid_argument("hybridnet: dense stacks cannot be empty");
  if (tables.visitors.dim() != tables.devices.dim()) {
    throw std::invalid_argument("hybridnet: visitor and device factor tables differ in width");
  }

  Rng rng(c.seed);
  std::uint64_t dropout_counter = 0;
  auto add_dropout = [&](Sequential& seq) {
    std::seed_seq s{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32),
                    static_cast<std::uint32_t>(++dropout_counter)};
    std::uint32_t v[2];
    s.generate(v, v + 2);
    b_->dropouts.push_back(&seq.add<Dropout>(c.dropout_rate, (std::uint64_t{v[0]} << 32) | v[1]));
  };

  // Per-device lookup tables in output-column order, then UNK and PAD rows.
  const std::size_t dw = tables.words.dim(), ds = tables.sentences.dim(), f = tables.devices.dim();
  const std::size_t width = dw + ds;
  Tensor text({D + 2, width}), sentence({D + 2, ds}), factors({D + 2, f});
  for (std::size_t d = 0; d < D; ++d) {
    const auto wv = word_vector(devices_[d], tables.catalog, tables.words);
    const auto sv = tables.sentences.lookup(devices_[d]);
    const auto fv = tables.devices.lookup(devices_[d]);
    std::copy(wv.begin(), wv.end(), text.data() + d * width);
    std::copy(sv.begin(), sv.end(), text.data() + d * width + dw);
    std::copy(sv.begin(), sv.end(), sentence.data() + d * ds);
    std::copy(fv.begin(), fv.end(), factors.data() + d * f);
  }
  {
    const auto wu = tables.words.row(tables.words.unk_index());
    const auto su = tables.sentences.row(tables.sentences.unk_index());
    const auto fu = tables.devices.row(tables.devices.unk_index());
    std::copy(wu.begin(), wu.end(), text.data() + D * width);
    std::copy(su.begin(), su.end(), text.data() + D * width + dw);
    std::copy(su.begin(), su.end(), sentence.data() + D * ds);
    std::copy(fu.begin(), fu.end(), factors.data() + D * f);
  }

  // N1: conv blocks over the (m, d_w + d_s, 1) text image.
  {
    auto& n1 = b_->n1;
    n1.add<Embedding>(std::move(text), c.train_text_embeddings, D + 1);
    n1.add<Reshape>(Shape{c.m, width, 1});
    std::size_t h = c.m, w = width, ch = 1;
    // Every pooling but the last must see at least two rows and columns.
    const std::size_t need = std::size_t{1} << (c.conv_blocks - 1);
    if (c.m < need || width < need) {
      throw std::invalid_argument("hybridnet: m=" + std::to_string(c.m) + " and text width " + std::to_string(width) +
                                  " are too small for " + std::to_string(c.conv_blocks) + " pooling blocks (need " +
                                  std::to_string(need) + ")");
    }
    for (std::size_t blk = 0; blk < c.conv_blocks; ++blk) {
      n1.add<Conv2D>(ch, c.conv_filters[blk], c.kernel, rng);
      n1.add<Relu>();
      n1.add<BatchNorm>(c.conv_filters[blk]);
      n1.add<MaxPool2D>();
      ch = c.conv_filters[blk];
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    n1.add<Flatten>();
    std::size_t in = h * w * ch;
    for (std::size_t units : c.n1_dense) {
      n1.add<Dense>(in, units, rng);
      n1.add<Relu>();
      add_dropout(n1);
      in = units;
    }
  }

  // N2: sentence vectors through an LSTM.
  {
    auto& n2 = b_->n2;
    n2.add<Embedding>(std::move(sentence), c.train_text_embeddings, D + 1);
    n2.add<Lstm>(ds, c.lstm_units, rng);
    n2.add<LeakyRelu>(0.01);
    add_dropout(n2);
    n2.add<GlobalMaxPool1D>();
    n2.add<Dense>(c.lstm_units, c.n2_dense, rng);
    n2.add<LeakyRelu>(0.01);
    add_dropout(n2);
  }

  // N3: ALS visitor x device factors.
  {
    b_->visitor_index = tables.visitors;
    b_->visitor_emb = std::make_unique<Embedding>(tables.visitors.matrix(), false, tables.visitors.pad_index());
    b_->device_emb = std::make_unique<Embedding>(std::move(factors), false, D + 1);
    auto& n3 = b_->n3;
    n3.add<Flatten>();
    std::size_t in = c.n3_fusion == N3Fusion::dot ? c.m : c.m * 2 * f;
    for (std::size_t units : c.n3_dense) {
      n3.add<Dense>(in, units, rng);
      n3.add<Relu>();
      add_dropout(n3);
      in = units;
    }
  }

  // N4: feature processor.
  {
    auto& n4 = b_->n4;
    n4.add<Dense>(features_, c.n4_dense, rng);
    n4.add<Relu>();
    add_dropout(n4);
  }

  // Shared layer and head.
  {
    auto& sh = b_->shared;
    const std::size_t joined = c.n1_dense.back() + c.n2_dense + c.n3_dense.back() + c.n4_dense;
    add_dropout(sh);
    sh.add<Dense>(joined, c.shared_dense, rng);
    sh.add<Relu>();
    add_dropout(sh);
    sh.add<Dense>(c.shared_dense, D, rng);
    if (c.head == Head::regression) {
      sh.add<Sigmoid>();
      b_->lambda = &sh.add<Lambda>(0.0, 1.0);
    } else {
      sh.add<Softmax>();
    }
  }
  b_->seq_len = c.m;
}

std::size_t HybridNet::device_code(std::string_view device_id) const {
  if (device_id == kPadToken) return devices_.size() + 1;
  auto it = std::lower_bound(devices_.begin(), devices_.end(), device_id);
  if (it != devices_.end() && *it == device_id) return static_cast<std::size_t>(it - devices_.begin());
  // Not sorted in general; fall back to a scan.
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    if (devices_[d] == device_id) return d;
  }
  return devices_.size();
}

namespace {

EncodedBatch encode_rows(const HybridNet& net, const EmbeddingTable& visitor_index,
                         std::span<const DenormalizedRow* const> rows) {
  const std::size_t B = rows.size(), m = net.config().m, n = net.feature_count();
  EncodedBatch batch{Tensor({B}), Tensor({B, m}), Tensor({B, n})};
  for (std::size_t i = 0; i < B; ++i) {
    const auto& row = *rows[i];
    batch.visitors[i] = static_cast<double>(row.visitor_id.empty() ? visitor_index.unk_index()
                                                                   : visitor_index.index_of(row.visitor_id));
    const auto& seq = row.device_sequence;
    // Right-align the most recent m devices.
    const std::size_t keep = std::min(m, seq.size());
    for (std::size_t t = 0; t < m; ++t) batch.devices[i * m + t] = static_cast<double>(net.device_count() + 1);
    for (std::size_t t = 0; t < keep; ++t) {
      batch.devices[i * m + (m - keep + t)] = static_cast<double>(net.device_code(seq[seq.size() - keep + t]));
    }
    if (!row.features.empty() && row.features.size() != n) {
      throw std::invalid_argument("hybridnet: row has " + std::to_string(row.features.size()) +
                                  " features, model expects " + std::to_string(n));
    }
    for (std::size_t k = 0; k < row.features.size(); ++k) batch.features[i * n + k] = row.features[k];
  }
  return batch;
}

}  // namespace

EncodedBatch HybridNet::encode(std::span<const DenormalizedRow> rows) const {
  std::vector<const DenormalizedRow*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  return encode_rows(*this, b_->visitor_index, ptrs);
}

Tensor HybridNet::forward_n1(const Tensor& devices, Mode mode) { return b_->n1.forward(devices, mode); }
Tensor HybridNet::forward_n2(const Tensor& devices, Mode mode) { return b_->n2.forward(devices, mode); }

Tensor HybridNet::forward_n3(const Tensor& visitors, const Tensor& devices, Mode mode) {
  const Tensor user = b_->visitor_emb->forward(visitors, mode);  // (B, f)
  const Tensor items = b_->device_emb->forward(devices, mode);   // (B, m, f)
  if (config_.n3_fusion == N3Fusion::dot) return b_->n3.forward(b_->dot.forward(user, items), mode);
  const std::size_t B = items.dim(0), m = items.dim(1), f = items.dim(2);
  Tensor tiled({B, m, f});
  for (std::size_t n = 0; n < B; ++n) {
    for (std::size_t t = 0; t < m; ++t) std::copy(user.data() + n * f, user.data() + (n + 1) * f, tiled.data() + (n * m + t) * f);
  }
  const Tensor* parts[] = {&tiled, &items};
  return b_->n3.forward(b_->n3_concat.forward(parts), mode);
}

Tensor HybridNet::forward_n4(const Tensor& features, Mode mode) {
  if (features.rank() != 2 || features.dim(1) != features_) {
    throw std::invalid_argument("hybridnet: feature input " + shape_string(features.shape()) + " but the model was built for " +
                                std::to_string(features_) + " features");
  }
  return b_->n4.forward(features, mode);
}

void HybridNet::backward_n1(const Tensor& grad) { b_->n1.backward(grad); }
void HybridNet::backward_n2(const Tensor& grad) { b_->n2.backward(grad); }

void HybridNet::backward_n3(const Tensor& grad) {
  const Tensor g = b_->n3.backward(grad);
  Tensor g_user, g_items;
  if (config_.n3_fusion == N3Fusion::dot) {
    auto [gu, gi] = b_->dot.backward(g);
    g_user = std::move(gu);
    g_items = std::move(gi);
  } else {
    auto parts = b_->n3_concat.backward(g);
    const std::size_t B = parts[0].dim(0), m = parts[0].dim(1), f = parts[0].dim(2);
    g_user = Tensor({B, f});
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t t = 0; t < m; ++t) {
        for (std::size_t k = 0; k < f; ++k) g_user[n * f + k] += parts[0][(n * m + t) * f + k];
      }
    }
    g_items = std::move(parts[1]);
  }
  b_->visitor_emb->backward(g_user);
  b_->device_emb->backward(g_items);
}

Tensor HybridNet::backward_n4(const Tensor& grad) { return b_->n4.backward(grad); }

Tensor HybridNet::forward(const EncodedBatch& batch, Mode mode) {
  const Tensor y1 = forward_n1(batch.devices, mode);
  const Tensor y2 = forward_n2(batch.devices, mode);
  const Tensor y3 = forward_n3(batch.visitors, batch.devices, mode);
  const Tensor y4 = forward_n4(batch.features, mode);
  const Tensor* parts[] = {&y1, &y2, &y3, &y4};
  return b_->shared.forward(b_->shared_concat.forward(parts), mode);
}

Tensor HybridNet::backward(const Tensor& grad) {
  const auto parts = b_->shared_concat.backward(b_->shared.backward(grad));
  backward_n1(parts[0]);
  backward_n2(parts[1]);
  backward_n3(parts[2]);
  return backward_n4(parts[3]);
}

std::vector<Layer*> HybridNet::layers() {
  std::vector<Layer*> out;
  for (Layer* l : b_->n1.layers()) out.push_back(l);
  for (Layer* l : b_->n2.layers()) out.push_back(l);
  out.push_back(b_->visitor_emb.get());
  out.push_back(b_->device_emb.get());
  for (Layer* l : b_->n3.layers()) out.push_back(l);
  for (Layer* l : b_->n4.layers()) out.push_back(l);
  for (Layer* l : b_->shared.layers()) out.push_back(l);
  return out;
}

std::vector<Parameter*> HybridNet::parameters() {
  std::vector<Parameter*> out;
  for (Layer* l : layers()) {
    for (Parameter* p : l->parameters()) out.push_back(p);
  }
  return out;
}

void HybridNet::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void HybridNet::reseed_dropout(std::uint64_t seed) {
  for (std::size_t i = 0; i < b_->dropouts.size(); ++i) b_->dropouts[i]->reseed(seed + 7919 * (i + 1));
}

double HybridNet::range_lo() const { return b_->lambda ? b_->lambda->lo() : 0.0; }
double HybridNet::range_hi() const { return b_->lambda ? b_->lambda->hi() : 1.0; }
void HybridNet::set_range(double lo, double hi) {
  if (b_->lambda) b_->lambda->set_range(lo, hi);
}

// ---------------------------------------------------------------------------

TargetSet make_targets(std::span<const DenormalizedRow> rows, Head head, TargetSource source,
                       const InteractionMatrix* reconstruction) {
  if (rows.empty()) throw std::invalid_argument("make_targets: no rows");
  if (source == TargetSource::als_reconstruction && !reconstruction) {
    throw std::invalid_argument("make_targets: ALS reconstruction requested but not supplied");
  }
  const std::size_t D = source == TargetSource::als_reconstruction ? reconstruction->cols() : rows.front().target.size();
  std::vector<std::vector<double>> kept_rows;
  TargetSet out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> t;
    if (source == TargetSource::als_reconstruction) {
      const auto r = reconstruction->visitor_index(rows[i].visitor_id);
      if (!r) throw std::invalid_argument("make_targets: visitor " + rows[i].visitor_id + " missing from reconstruction");
      t.assign(reconstruction->row(*r).begin(), reconstruction->row(*r).end());
    } else {
      t = rows[i].target;
    }
    if (t.size() != D) throw std::invalid_argument("make_targets: ragged target rows");
    if (head == Head::classification) {
      const auto best = std::max_element(t.begin(), t.end());
      if (*best <= 0.0) {
        ++out.skipped;
        continue;
      }
      const auto hot = static_cast<std::size_t>(best - t.begin());
      std::fill(t.begin(), t.end(), 0.0);
      t[hot] = 1.0;
    }
    kept_rows.push_back(std::move(t));
    out.kept.push_back(i);
  }
  out.targets = Tensor({kept_rows.size(), D});
  for (std::size_t i = 0; i < kept_rows.size(); ++i) {
    std::copy(kept_rows[i].begin(), kept_rows[i].end(), out.targets.data() + i * D);
  }
  return out;
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  require_same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.size());
  double loss = 0.0;
  if (grad) *grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    loss += d * d;
    if (grad) (*grad)[i] = 2.0 * d / n;
  }
  return loss / n;
}

double cross_entropy_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  require_same_shape(pred, target, "cross_entropy");
  constexpr double kFloor = 1e-12;
  const double rows = static_cast<double>(pred.dim(0));
  double loss = 0.0;
  if (grad) *grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] == 0.0) continue;
    const double p = std::max(pred[i], kFloor);
    loss -= target[i] * std::log(p);
    if (grad) (*grad)[i] = -target[i] / p / rows;
  }
  return loss / rows;
}

namespace {

double batch_loss(Head head, const Tensor& pred, const Tensor& target, Tensor* grad) {
  return head == Head::regression ? mse_loss(pred, target, grad) : cross_entropy_loss(pred, target, grad);
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t w = t.dim(1);
  Tensor out({idx.size(), w});
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(t.data() + idx[i] * w, t.data() + (idx[i] + 1) * w, out.data() + i * w);
  return out;
}

double evaluate_loss(HybridNet& net, const std::vector<const DenormalizedRow*>& rows, const Tensor& targets) {
  if (rows.empty()) return 0.0;
  const std::size_t bs = std::max<std::size_t>(1, net.config().batch);
  double total = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += bs) {
    const std::size_t end = std::min(rows.size(), start + bs);
    std::vector<DenormalizedRow> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(*rows[i]);
    const Tensor pred = net.forward(net.encode(chunk), Mode::infer);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    total += batch_loss(net.config().head, pred, gather_rows(targets, idx), nullptr) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

TrainReport train(HybridNet& net, std::span<const DenormalizedRow> train_rows,
                  std::span<const DenormalizedRow> validation_rows, const InteractionMatrix* reconstruction) {
  const HybridConfig& c = net.config();
  if (c.batch == 0) throw std::invalid_argument("train: batch size must be at least 1");
  TrainReport report;
  const TargetSet train_t = make_targets(train_rows, c.head, c.target_source, reconstruction);
  report.skipped_rows = train_t.skipped;
  if (train_t.skipped) {
    report.warnings.push_back(std::to_string(train_t.skipped) + " all-zero training rows excluded from classification");
  }
  if (train_t.kept.empty()) throw EmptyDataError("train: no usable training rows");
  std::vector<const DenormalizedRow*> train_ptrs;
  for (std::size_t i : train_t.kept) train_ptrs.push_back(&train_rows[i]);

  std::vector<const DenormalizedRow*> val_ptrs;
  Tensor val_targets;
  if (!validation_rows.empty()) {
    const TargetSet val_t = make_targets(validation_rows, c.head, c.target_source, reconstruction);
    for (std::size_t i : val_t.kept) val_ptrs.push_back(&validation_rows[i]);
    val_targets = val_t.targets;
  }

  if (c.head == Head::regression) {
    const auto [lo, hi] = std::minmax_element(train_t.targets.values().begin(), train_t.targets.values().end());
    net.set_range(*lo, *hi);
  }

  Adam adam(AdamConfig{c.learning_rate, 0.9, 0.999, 1e-8});
  const auto params = net.parameters();
  net.zero_grad();
  std::mt19937_64 shuffle_rng(c.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train_ptrs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t batch_index = 0;
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += c.batch) {
      const std::size_t end = std::min(order.size(), start + c.batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<const DenormalizedRow*> rows;
      for (std::size_t i : idx) rows.push_back(train_ptrs[i]);
      std::vector<DenormalizedRow> chunk;
      for (const auto* r : rows) chunk.push_back(*r);
      const Tensor pred = net.forward(net.encode(chunk), Mode::train);
      Tensor grad;
      const double loss = batch_loss(c.head, pred, gather_rows(train_t.targets, idx), &grad);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_index));
      }
      net.backward(grad);
      adam.step(params);
      net.zero_grad();
      total += loss * static_cast<double>(idx.size());
      ++batch_index;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = total / static_cast<double>(order.size());
    stats.validation_loss = evaluate_loss(net, val_ptrs, val_targets);
    report.epochs.push_back(stats);
  }
  return report;
}

Tensor predict_rows(HybridNet& net, std::span<const DenormalizedRow> rows) {
  const std::size_t D = net.device_count();
  Tensor out({rows.size(), D});
  const std::size_t bs = std::max<std::size_t>(1, net.config().batch);
  for (std::size_t start = 0; start < rows.size(); start += bs) {
    const std::size_t end = std::min(rows.size(), start + bs);
    const Tensor pred = net.forward(net.encode(rows.subspan(start, end - start)), Mode::infer);
    std::copy(pred.data(), pred.data() + pred.size(), out.data() + start * D);
  }
  return out;
}

std::vector<Recommendation> recommend(HybridNet& net, const VisitorContext& context, std::size_t k) {
  const std::size_t D = net.device_count();
  if (k == 0 || k > D) {
    throw std::invalid_argument("recommend: k=" + std::to_string(k) + " outside [1, " + std::to_string(D) + "]");
  }
  DenormalizedRow row;
  row.visitor_id = context.visitor_id;
  row.device_sequence = context.device_sequence;
  row.features = context.features.empty() ? std::vector<double>(net.feature_count(), 0.0) : context.features;
  const Tensor scores = net.forward(net.encode(std::span<const DenormalizedRow>(&row, 1)), Mode::infer);

  std::vector<bool> seen(D, false);
  if (net.config().exclude_seen) {
    for (const auto& id : context.device_sequence) {
      const std::size_t code = net.device_code(id);
      if (code < D) seen[code] = true;
    }
  }
  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Recommendation> out;
  for (std::size_t d : order) {
    if (seen[d]) continue;
    out.push_back({net.devices()[d], scores[d]});
    if (out.size() == k) break;
  }
  return out;
}

}  // namespace hybridrec

namespace hybridrec {

namespace {

std::string require_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact(path);
  return path;
}

}  // namespace

HybridTables load_tables(const ModelRefs& refs) {
  HybridTables t;
  t.visitors = load_table_file(require_file(refs.visitors));
  t.devices = load_table_file(require_file(refs.devices));
  t.words = load_table_file(require_file(refs.words));
  t.sentences = load_table_file(require_file(refs.sentences));
  std::ifstream in(require_file(refs.descriptions));
  const auto descriptions = read_descriptions(in, refs.descriptions);
  t.catalog = DeviceCatalog(descriptions);
  return t;
}

void save_model_dir(const std::string& dir, HybridNet& net, const ModelRefs& refs) {
  const std::filesystem::path root(dir);
  KeyValues kv = net.config().to_key_values();
  kv.set("model.features", std::to_string(net.feature_count()));
  kv.set("model.lo", csv::format_double(net.range_lo()));
  kv.set("model.hi", csv::format_double(net.range_hi()));
  kv.set("model.table.visitors", refs.visitors);
  kv.set("model.table.devices", refs.devices);
  kv.set("model.table.words", refs.words);
  kv.set("model.table.sentences", refs.sentences);
  kv.set("model.descriptions", refs.descriptions);
  {
    std::ofstream out(root / "model.cfg");
    kv.write(out);
  }
  {
    std::ofstream out(root / "devices.txt");
    for (const auto& d : net.devices()) out << d << '\n';
  }
  std::ofstream out(root / "params.txt");
  const auto layers = net.layers();
  save_snapshot(out, layers);
  if (!out) throw std::runtime_error("cannot write " + (root / "params.txt").string());
}

LoadedModel load_model_dir(const std::string& dir) {
  const std::filesystem::path root(dir);
  const KeyValues kv = KeyValues::load(require_file((root / "model.cfg").string()));
  ModelRefs refs{kv.get_string("model.table.visitors", ""), kv.get_string("model.table.devices", ""),
                 kv.get_string("model.table.words", ""), kv.get_string("model.table.sentences", ""),
                 kv.get_string("model.descriptions", "")};
  std::vector<std::string> devices;
  {
    std::ifstream in(require_file((root / "devices.txt").string()));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) devices.push_back(line);
    }
  }
  const HybridTables tables = load_tables(refs);
  HybridNet net(HybridConfig::from_key_values(kv), std::move(devices), kv.get_size("model.features", 0), tables);
  std::ifstream in(require_file((root / "params.txt").string()));
  const auto layers = net.layers();
  load_snapshot(in, layers);
  net.set_range(kv.get_double("model.lo", 0.0), kv.get_double("model.hi", 1.0));
  return {std::move(net), std::move(refs)};
}

}  // namespace hybridrec
