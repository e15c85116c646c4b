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

#include <string>
#include <string_view>
#include <vector>

namespace hybridrec::csv {

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split(std::string_view line);

/// Quotes a field only when it needs it.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Shortest decimal that round-trips a double ("%.17g").
std::string format_double(double value);

/// Strict numeric parse: the whole field must be consumed.
bool parse_double(std::string_view text, double& out);

}  // namespace hybridrec::csv
