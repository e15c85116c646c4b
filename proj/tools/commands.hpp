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
#include <optional>
#include <string>
#include <vector>

#include "hybridrec/pipeline.hpp"

namespace hybridrec::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kEmptyData = 3;
inline constexpr int kMissingArtifact = 4;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::vector<std::string> overrides;  // key=value
};

/// Defaults, then the config file, then --set overrides, then --seed.
RunConfig resolve_config(const CommonOptions& opts);

struct RecommendOptions {
  bool cold = false;
  std::string visitor;
  std::string sequence;  // comma or space separated device ids
  std::string features_path;
  std::optional<std::size_t> k;
};

struct CoverageOptions {
  std::string seed_device;
  bool exact = false;
};

void cmd_synth(const CommonOptions& opts);
void cmd_prep(const CommonOptions& opts);
void cmd_als(const CommonOptions& opts);
void cmd_train(const CommonOptions& opts);
void cmd_eval(const CommonOptions& opts);
void cmd_recommend(const CommonOptions& opts, const RecommendOptions& rec);
void cmd_coverage(const CommonOptions& opts, const CoverageOptions& cov);

}  // namespace hybridrec::cli
