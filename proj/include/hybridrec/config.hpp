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
#include <set>
#include <string>
#include <string_view>

namespace hybridrec {

/// Ordered `key = value` settings. Files use one pair per line with `#`
/// comments; unknown keys are rejected against an allow-list.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source);
  static KeyValues load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// Parses `key=value`.
  void set_assignment(std::string_view assignment);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  void merge(const KeyValues& other);
  void reject_unknown(const std::set<std::string>& allowed) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace hybridrec
