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

#include <stdexcept>
#include <string>

namespace hybridrec {

/// Invalid configuration value or unknown key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data. `line` is 1-based, 0 when no line applies.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// The pipeline produced nothing to work with (e.g. every device was filtered).
class EmptyDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An upstream artifact is not where a command expects it.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::string& path)
      : std::runtime_error("missing artifact: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace hybridrec
