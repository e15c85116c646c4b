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

#include "hybridrec/config.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "hybridrec/csv.hpp"
#include "hybridrec/errors.hpp"

namespace hybridrec {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    kv.values_[key] = trim(body.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse(in, path);
}

void KeyValues::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + std::string(assignment) + "' has an empty key");
  values_[key] = trim(assignment.substr(eq + 1));
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void KeyValues::reject_unknown(const std::set<std::string>& allowed) const {
  for (const auto& [k, v] : values_) {
    if (!allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  double v = 0.0;
  if (!csv::parse_double(it->second, v)) throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
  return v;
}

std::size_t KeyValues::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is out of range");
  }
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + it->second + "'");
}

void KeyValues::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

}  // namespace hybridrec
