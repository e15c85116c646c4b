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
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybridrec/config.hpp"
#include "hybridrec/dataset.hpp"
#include "hybridrec/embeddings.hpp"
#include "hybridrec/layers.hpp"
#include "hybridrec/tensor.hpp"

namespace hybridrec {

enum class Head { regression, classification };
enum class N3Fusion { dot, concatenate };
enum class TargetSource { input_matrix, als_reconstruction };

struct HybridConfig {
  std::size_t m = 8;  // device sequence length
  Head head = Head::regression;
  N3Fusion n3_fusion = N3Fusion::dot;
  TargetSource target_source = TargetSource::input_matrix;

  std::size_t conv_blocks = 3;
  std::vector<std::size_t> conv_filters{16, 32, 64};
  std::size_t kernel = 3;
  std::vector<std::size_t> n1_dense{64, 32, 16};
  std::size_t lstm_units = 64;
  std::size_t n2_dense = 32;
  std::vector<std::size_t> n3_dense{32, 16};
  std::size_t n4_dense = 64;
  std::size_t shared_dense = 64;
  double dropout_rate = 0.3;

  std::size_t k_top = 5;
  std::size_t epochs = 20;
  std::size_t batch = 64;
  double learning_rate = 1e-3;
  bool train_text_embeddings = false;
  bool exclude_seen = true;
  std::uint64_t seed = 7;

  /// Round-trips through `key = value` text (see docs/formats.md).
  KeyValues to_key_values() const;
  static HybridConfig from_key_values(const KeyValues& kv);
};

std::string_view head_name(Head head);
std::string_view fusion_name(N3Fusion fusion);
std::string_view target_source_name(TargetSource source);

/// The four lookup tables plus the device names behind the word-level table.
struct HybridTables {
  EmbeddingTable visitors;   // ALS visitor factors
  EmbeddingTable devices;    // ALS device factors
  EmbeddingTable words;      // word-level text vectors
  EmbeddingTable sentences;  // sentence-level vectors keyed by device id
  DeviceCatalog catalog;
};

/// Integer-coded network input. Device codes are 0..D-1 for known devices,
/// D for UNK and D+1 for PAD.
struct EncodedBatch {
  Tensor visitors;  // (B)
  Tensor devices;   // (B, m)
  Tensor features;  // (B, n)
};

class HybridNet {
 public:
  /// `devices` fixes the output columns (interaction-matrix order); `features`
  /// is the feature-vector width n.
  HybridNet(HybridConfig config, std::vector<std::string> devices, std::size_t features, const HybridTables& tables);
  ~HybridNet();
  HybridNet(HybridNet&&) noexcept;
  HybridNet& operator=(HybridNet&&) noexcept;

  const HybridConfig& config() const { return config_; }
  const std::vector<std::string>& devices() const { return devices_; }
  std::size_t device_count() const { return devices_.size(); }
  std::size_t feature_count() const { return features_; }
  std::size_t device_code(std::string_view device_id) const;

  EncodedBatch encode(std::span<const DenormalizedRow> rows) const;

  // Branch outputs, each (B, width). Use with backward_* for branch-level
  // gradient checks.
  Tensor forward_n1(const Tensor& devices, Mode mode);
  Tensor forward_n2(const Tensor& devices, Mode mode);
  Tensor forward_n3(const Tensor& visitors, const Tensor& devices, Mode mode);
  Tensor forward_n4(const Tensor& features, Mode mode);
  void backward_n1(const Tensor& grad);
  void backward_n2(const Tensor& grad);
  void backward_n3(const Tensor& grad);
  Tensor backward_n4(const Tensor& grad);

  /// Full model, (B, D).
  Tensor forward(const EncodedBatch& batch, Mode mode);
  /// Backpropagates dLoss/dOutput; returns dLoss/dFeatures.
  Tensor backward(const Tensor& grad);

  std::vector<Parameter*> parameters();
  std::vector<Layer*> layers();
  void zero_grad();
  /// Resets every dropout stream so that repeated forwards draw identical masks.
  void reseed_dropout(std::uint64_t seed);

  double range_lo() const;
  double range_hi() const;
  void set_range(double lo, double hi);

 private:
  struct Branches;
  HybridConfig config_;
  std::vector<std::string> devices_;
  std::size_t features_;
  std::unique_ptr<Branches> b_;
};

/// Target tensor plus which rows survived (classification drops all-zero rows).
struct TargetSet {
  Tensor targets;
  std::vector<std::size_t> kept;
  std::size_t skipped = 0;
};

/// Regression: rows as-is. Classification: one-hot at the row argmax (first
/// index wins ties); all-zero rows are skipped and counted. With
/// `als_reconstruction`, rows come from `reconstruction` instead of the
/// rows' own targets.
TargetSet make_targets(std::span<const DenormalizedRow> rows, Head head, TargetSource source,
                       const InteractionMatrix* reconstruction = nullptr);

/// Mean squared error over all cells, and its gradient.
double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad);
/// Mean categorical cross-entropy over rows, and its gradient.
double cross_entropy_loss(const Tensor& pred, const Tensor& target, Tensor* grad);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t skipped_rows = 0;
  std::vector<std::string> warnings;
};

/// Adam over seeded shuffled mini-batches. For regression the output range
/// is first fixed to the min/max of the training targets.
TrainReport train(HybridNet& net, std::span<const DenormalizedRow> train_rows,
                  std::span<const DenormalizedRow> validation_rows, const InteractionMatrix* reconstruction = nullptr);

/// Infer-mode predictions for many rows, batched.
Tensor predict_rows(HybridNet& net, std::span<const DenormalizedRow> rows);

struct VisitorContext {
  std::string visitor_id;                    // empty or unknown = cold visitor
  std::vector<std::string> device_sequence;  // most recent last; padded/truncated to m
  std::vector<double> features;              // standardized; empty = defaults (all zero)
};

struct Recommendation {
  std::string device_id;
  double score;
};

/// Top-k devices by score, ties to the lower device index. Devices already in
/// the sequence are skipped when the config says so, so fewer than k may come
/// back when the sequence covers most devices.
std::vector<Recommendation> recommend(HybridNet& net, const VisitorContext& context, std::size_t k);

/// Paths of the files a saved model was built from.
struct ModelRefs {
  std::string visitors;      // ALS visitor table
  std::string devices;       // ALS device table
  std::string words;         // word-level table
  std::string sentences;     // sentence-level table
  std::string descriptions;  // device descriptions CSV (word-level lookups)
};

HybridTables load_tables(const ModelRefs& refs);

/// Writes model.cfg, devices.txt and params.txt into `dir` (which must exist).
void save_model_dir(const std::string& dir, HybridNet& net, const ModelRefs& refs);

struct LoadedModel {
  HybridNet net;
  ModelRefs refs;
};

/// Rebuilds the network from the referenced tables, then restores parameters
/// and the output range. Throws MissingArtifact for absent files.
LoadedModel load_model_dir(const std::string& dir);

}  // namespace hybridrec
