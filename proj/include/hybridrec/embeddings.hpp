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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridrec/dataset.hpp"
#include "hybridrec/tensor.hpp"

namespace hybridrec {

/// Token-indexed table of dense vectors. Rows are the vocabulary in insertion
/// order followed by two reserved rows: UNK (index vocab_size) and PAD
/// (index vocab_size + 1). PAD is always zero.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// `vectors` holds one row per token; UNK and PAD start at zero.
  EmbeddingTable(std::vector<std::string> tokens, const Tensor& vectors, bool trainable = false);

  std::size_t dim() const { return dim_; }
  std::size_t vocab_size() const { return tokens_.size(); }
  std::size_t rows() const { return tokens_.size() + 2; }
  std::size_t unk_index() const { return tokens_.size(); }
  std::size_t pad_index() const { return tokens_.size() + 1; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool trainable) { trainable_ = trainable; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  /// PAD token maps to the PAD row, unknown tokens to UNK.
  std::size_t index_of(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.count(token) > 0; }
  std::span<const double> row(std::size_t index) const;
  std::span<const double> lookup(std::string_view token) const { return row(index_of(token)); }
  /// All rows including UNK and PAD, shape (rows, dim).
  const Tensor& matrix() const { return vectors_; }
  void set_unk(std::span<const double> values);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Tensor vectors_;
  bool trainable_ = false;
};

/// File format: `emb v1 dim=<d> count=<n>` then `<token> <d decimals>` per line.
/// UNK and PAD are never stored.
void write_table(std::ostream& out, const EmbeddingTable& table);
EmbeddingTable load_table(std::istream& in, const std::string& source = "table");
EmbeddingTable load_table_file(const std::string& path);
void write_table_file(const std::string& path, const EmbeddingTable& table);

/// Unit-norm pseudo-random vector determined by (token, dim, seed) alone.
std::vector<double> synth_vector(std::string_view token, std::size_t dim, std::uint64_t seed);
EmbeddingTable synth_table(std::span<const std::string> tokens, std::size_t dim, std::uint64_t seed);

/// Lowercased alphanumeric tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Word-level table over every name and description token of the devices.
EmbeddingTable synth_word_table(std::span<const DeviceDescription> devices, std::size_t dim, std::uint64_t seed);
/// Sentence-level table keyed by device id: unit-normalized mean of seeded
/// token vectors over the full description.
EmbeddingTable synth_sentence_table(std::span<const DeviceDescription> devices, std::size_t dim, std::uint64_t seed);

/// Resolves devices to their name tokens for word-level lookups.
class DeviceCatalog {
 public:
  DeviceCatalog() = default;
  explicit DeviceCatalog(std::span<const DeviceDescription> devices);
  /// nullptr for unknown devices.
  const std::vector<std::string>* name_tokens(std::string_view device_id) const;

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> names_;
};

/// Mean of the name-token vectors (zero for PAD or unknown devices).
std::vector<double> word_vector(std::string_view device_id, const DeviceCatalog& catalog,
                                const EmbeddingTable& word_table);

/// (m, d_w + d_s, 1): per slot the word-level vector of the device name
/// followed by the sentence-level vector of its description.
Tensor device_word_matrix(std::span<const std::string> sequence, const DeviceCatalog& catalog,
                          const EmbeddingTable& word_table, const EmbeddingTable& sentence_table);

}  // namespace hybridrec
