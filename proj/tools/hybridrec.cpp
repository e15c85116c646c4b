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

#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "hybridrec/errors.hpp"

using namespace hybridrec;

namespace {

void add_common(CLI::App* app, cli::CommonOptions& opts) {
  app->add_option("--config", opts.config_path, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", opts.seed, "global seed (overrides the config file)");
  app->add_option("--out", opts.out, "run directory")->capture_default_str();
  app->add_option("--set", opts.overrides, "config override, key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid device recommender: synth -> prep -> als -> train -> eval, plus recommend and coverage"};
  app.require_subcommand(1);

  cli::CommonOptions opts;
  cli::RecommendOptions rec;
  cli::CoverageOptions cov;

  auto* synth = app.add_subcommand("synth", "generate a synthetic clickstream into <out>/data");
  auto* prep = app.add_subcommand("prep", "aggregate, reduce and normalize events into <out>/prep");
  auto* als = app.add_subcommand("als", "fit implicit ALS on the prepared matrix into <out>/als");
  auto* train = app.add_subcommand("train", "train the hybrid network into <out>/model");
  auto* eval = app.add_subcommand("eval", "evaluate the trained model on its validation rows");
  auto* recommend = app.add_subcommand("recommend", "print the top-k devices for one visitor");
  auto* coverage = app.add_subcommand("coverage", "greedy device-coverage selection over ALS device factors");
  for (auto* sub : {synth, prep, als, train, eval, recommend, coverage}) add_common(sub, opts);

  recommend->add_flag("--cold", rec.cold, "unknown visitor, empty sequence, default features");
  recommend->add_option("--visitor", rec.visitor, "visitor id (unknown ids are treated as cold)");
  recommend->add_option("--sequence", rec.sequence, "recent device ids, oldest first, comma separated");
  recommend->add_option("--features", rec.features_path, "file with raw feature values")->check(CLI::ExistingFile);
  recommend->add_option("-k", rec.k, "number of devices (default net.k_top)");

  coverage->add_option("--seed-device", cov.seed_device, "device whose neighborhood counts as covered");
  coverage->add_flag("--exact", cov.exact, "also run the exhaustive search (at most 20 devices)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kOk : cli::kConfigError;
  }

  try {
    if (*synth) cli::cmd_synth(opts);
    else if (*prep) cli::cmd_prep(opts);
    else if (*als) cli::cmd_als(opts);
    else if (*train) cli::cmd_train(opts);
    else if (*eval) cli::cmd_eval(opts);
    else if (*recommend) cli::cmd_recommend(opts, rec);
    else if (*coverage) cli::cmd_coverage(opts, cov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cli::kConfigError;
  } catch (const EmptyDataError& e) {
    std::cerr << "empty data: " << e.what() << '\n';
    return cli::kEmptyData;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.path() << '\n';
    return cli::kMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kFailure;
  }
  return cli::kOk;
}
