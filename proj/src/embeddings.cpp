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

#include "hybridrec/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, const Tensor& vectors, bool trainable)
    : tokens_(std::move(tokens)), trainable_(trainable) {
  if (vectors.rank() != 2 || vectors.dim(0) != tokens_.size()) {
    throw std::invalid_argument("embedding table: expected (" + std::to_string(tokens_.size()) +
                                ", dim) vectors, got " + shape_string(vectors.shape()));
  }
  dim_ = vectors.dim(1);
  if (dim_ == 0) throw std::invalid_argument("embedding table: dim must be positive");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == kPadToken || tokens_[i] == kUnkToken) {
      throw std::invalid_argument("embedding table: reserved token '" + tokens_[i] + "' in vocabulary");
    }
    if (!index_.emplace(tokens_[i], i).second) {
      throw std::invalid_argument("embedding table: duplicate token '" + tokens_[i] + "'");
    }
  }
  vectors_ = Tensor({rows(), dim_});
  std::copy(vectors.data(), vectors.data() + vectors.size(), vectors_.data());
}

std::size_t EmbeddingTable::index_of(std::string_view token) const {
  if (token == kPadToken) return pad_index();
  auto it = index_.find(token);
  return it == index_.end() ? unk_index() : it->second;
}

std::span<const double> EmbeddingTable::row(std::size_t index) const {
  if (index >= rows()) throw std::out_of_range("embedding row " + std::to_string(index) + " beyond PAD index");
  return {vectors_.data() + index * dim_, dim_};
}

void EmbeddingTable::set_unk(std::span<const double> values) {
  if (values.size() != dim_) throw std::invalid_argument("embedding table: UNK row has the wrong width");
  std::copy(values.begin(), values.end(), vectors_.data() + unk_index() * dim_);
}

void write_table(std::ostream& out, const EmbeddingTable& table) {
  out << "emb v1 dim=" << table.dim() << " count=" << table.vocab_size() << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < table.vocab_size(); ++i) {
    out << table.tokens()[i];
    for (double v : table.row(i)) out << ' ' << v;
    out << '\n';
  }
}

EmbeddingTable load_table(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 1, "empty embedding file");
  std::size_t dim = 0, count = 0;
  {
    std::istringstream head(line);
    std::string magic, version, dim_field, count_field;
    head >> magic >> version >> dim_field >> count_field;
    if (magic != "emb" || version != "v1" || dim_field.rfind("dim=", 0) != 0 || count_field.rfind("count=", 0) != 0) {
      throw DataError(source, 1, "expected header 'emb v1 dim=<d> count=<n>'");
    }
    try {
      dim = std::stoul(dim_field.substr(4));
      count = std::stoul(count_field.substr(6));
    } catch (const std::exception&) {
      throw DataError(source, 1, "bad dim/count in header");
    }
    if (dim == 0) throw DataError(source, 1, "dim must be positive");
  }
  std::vector<std::string> tokens;
  std::vector<double> values;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    if (!seen.insert(token).second) throw DataError(source, line_no, "duplicate token '" + token + "'");
    std::size_t got = 0;
    std::string cell;
    while (fields >> cell) {
      double v = 0.0;
      if (!csv::parse_double(cell, v)) throw DataError(source, line_no, "non-numeric value '" + cell + "'");
      values.push_back(v);
      ++got;
    }
    if (got != dim) {
      throw DataError(source, line_no,
                      "row has " + std::to_string(got) + " values, header says dim=" + std::to_string(dim));
    }
    tokens.push_back(std::move(token));
  }
  if (tokens.size() != count) {
    throw DataError(source, 0, "header says count=" + std::to_string(count) + ", file has " +
                                   std::to_string(tokens.size()) + " rows");
  }
  const std::size_t n = tokens.size();
  return EmbeddingTable(std::move(tokens), Tensor({n, dim}, std::move(values)));
}

EmbeddingTable load_table_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path);
  return load_table(in, path);
}

void write_table_file(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_table(out, table);
}

std::vector<double> synth_vector(std::string_view token, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("synthetic embedding dim must be at least 1");
  // FNV-1a over the token, mixed with the seed and dimension.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(dim)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

EmbeddingTable synth_table(std::span<const std::string> tokens, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> vocab(tokens.begin(), tokens.end());
  Tensor vectors({vocab.size(), dim});
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto v = synth_vector(vocab[i], dim, seed);
    std::copy(v.begin(), v.end(), vectors.data() + i * dim);
  }
  return EmbeddingTable(std::move(vocab), vectors);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

EmbeddingTable synth_word_table(std::span<const DeviceDescription> devices, std::size_t dim, std::uint64_t seed) {
  std::set<std::string> vocab;
  for (const auto& d : devices) {
    for (auto& t : tokenize(d.name)) vocab.insert(std::move(t));
    for (auto& t : tokenize(d.description)) vocab.insert(std::move(t));
  }
  const std::vector<std::string> tokens(vocab.begin(), vocab.end());
  return synth_table(tokens, dim, seed);
}

EmbeddingTable synth_sentence_table(std::span<const DeviceDescription> devices, std::size_t dim,
                                    std::uint64_t seed) {
  std::vector<std::string> ids;
  Tensor vectors({devices.size(), dim});
  for (std::size_t i = 0; i < devices.size(); ++i) {
    ids.push_back(devices[i].device_id);
    const auto words = tokenize(devices[i].description);
    std::vector<double> acc(dim, 0.0);
    for (const auto& w : words) {
      const auto v = synth_vector(w, dim, seed);
      for (std::size_t k = 0; k < dim; ++k) acc[k] += v[k];
    }
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      acc = synth_vector(devices[i].device_id, dim, seed);
      norm = 1.0;
    }
    for (std::size_t k = 0; k < dim; ++k) vectors[i * dim + k] = acc[k] / norm;
  }
  return EmbeddingTable(std::move(ids), vectors);
}

DeviceCatalog::DeviceCatalog(std::span<const DeviceDescription> devices) {
  for (const auto& d : devices) names_[d.device_id] = tokenize(d.name);
}

const std::vector<std::string>* DeviceCatalog::name_tokens(std::string_view device_id) const {
  auto it = names_.find(device_id);
  return it == names_.end() ? nullptr : &it->second;
}

std::vector<double> word_vector(std::string_view device_id, const DeviceCatalog& catalog,
                                const EmbeddingTable& word_table) {
  std::vector<double> out(word_table.dim(), 0.0);
  if (device_id == kPadToken) return out;
  const auto* tokens = catalog.name_tokens(device_id);
  if (!tokens || tokens->empty()) {
    const auto unk = word_table.row(word_table.unk_index());
    return {unk.begin(), unk.end()};
  }
  for (const auto& t : *tokens) {
    const auto v = word_table.lookup(t);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += v[k];
  }
  for (double& x : out) x /= static_cast<double>(tokens->size());
  return out;
}

Tensor device_word_matrix(std::span<const std::string> sequence, const DeviceCatalog& catalog,
                          const EmbeddingTable& word_table, const EmbeddingTable& sentence_table) {
  const std::size_t dw = word_table.dim(), ds = sentence_table.dim(), width = dw + ds;
  Tensor out({sequence.size(), width, 1});
  for (std::size_t slot = 0; slot < sequence.size(); ++slot) {
    const auto& id = sequence[slot];
    if (id == kPadToken) continue;
    const auto wv = word_vector(id, catalog, word_table);
    const auto sv = sentence_table.lookup(id);
    double* row = out.data() + slot * width;
    std::copy(wv.begin(), wv.end(), row);
    std::copy(sv.begin(), sv.end(), row + dw);
  }
  return out;
}

}  // namespace hybridrec
