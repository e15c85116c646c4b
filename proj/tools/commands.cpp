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

#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "hybridrec/coverage.hpp"
#include "hybridrec/csv.hpp"
#include "hybridrec/embeddings.hpp"
#include "hybridrec/errors.hpp"
#include "hybridrec/metrics.hpp"

namespace fs = std::filesystem;

namespace hybridrec::cli {

namespace {

struct RunDir {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path prep() const { return root / "prep"; }
  fs::path als() const { return root / "als"; }
  fs::path model() const { return root / "model"; }
  fs::path eval() const { return root / "eval"; }
  fs::path coverage() const { return root / "coverage"; }
};

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  return in;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  body(out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Creates the stage directory and echoes the effective config into it.
fs::path stage_dir(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_file(dir / "config.txt", [&](std::ostream& out) { cfg.to_key_values().write(out); });
  return dir;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::string absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

struct PrepArtifacts {
  InteractionMatrix matrix;
  std::vector<DenormalizedRow> rows;  // raw features, targets attached
};

PrepArtifacts load_prep(const RunDir& run) {
  PrepArtifacts p;
  const auto matrix_path = run.prep() / "matrix.csv";
  auto min = open_input(matrix_path);
  p.matrix = read_matrix(min, matrix_path.string());
  const auto rows_path = run.prep() / "rows.csv";
  auto rin = open_input(rows_path);
  p.rows = read_rows(rin, rows_path.string());
  if (p.rows.empty()) throw EmptyDataError(rows_path.string() + " has no rows");
  attach_targets(p.rows, p.matrix);
  return p;
}

FactorModel load_als(const RunDir& run) {
  return load_model((run.als() / "users.txt").string(), (run.als() / "items.txt").string());
}

Standardizer load_scaler(const RunDir& run) {
  const auto path = run.model() / "scaler.csv";
  auto in = open_input(path);
  return read_standardizer(in, path.string());
}

std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_list(std::string text) {
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

RunConfig resolve_config(const CommonOptions& opts) {
  KeyValues kv;
  if (!opts.config_path.empty()) kv = KeyValues::load(opts.config_path);
  for (const auto& o : opts.overrides) kv.set_assignment(o);
  if (opts.seed) kv.set("seed", std::to_string(*opts.seed));
  return RunConfig::from_key_values(kv);
}

void cmd_synth(const CommonOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};
  const auto data = synth_generate(cfg.synth);
  const auto dir = stage_dir(run.data(), cfg);
  write_file(dir / "events.csv", [&](std::ostream& out) { write_events(out, data.events); });
  write_file(dir / "visitors.csv", [&](std::ostream& out) { write_features(out, data.features.visitor, "visitor_id"); });
  write_file(dir / "context.csv", [&](std::ostream& out) { write_features(out, data.features.context, "visitor_id"); });
  write_file(dir / "device_features.csv",
             [&](std::ostream& out) { write_features(out, data.features.device, "device_id"); });
  write_file(dir / "devices.csv", [&](std::ostream& out) { write_descriptions(out, data.descriptions); });
  std::cout << "synth: " << data.events.size() << " events, " << data.features.visitor.ids.size() << " visitors, "
            << data.descriptions.size() << " devices -> " << dir.string() << '\n';
}

void cmd_prep(const CommonOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};

  auto read_table = [&](const char* name) {
    const auto path = run.data() / name;
    auto in = open_input(path);
    return read_features(in, path.string());
  };
  const auto events_path = run.data() / "events.csv";
  auto ein = open_input(events_path);
  const auto events = read_events(ein, events_path.string());
  FeatureSet features{read_table("visitors.csv"), read_table("context.csv"), read_table("device_features.csv")};
  const auto desc_path = run.data() / "devices.csv";
  auto din = open_input(desc_path);
  const auto descriptions = read_descriptions(din, desc_path.string());

  const Prepared prep = prepare(events, features, cfg.percentile, cfg.net.m);
  print_warnings(prep.warnings);

  const auto dir = stage_dir(run.prep(), cfg);
  write_file(dir / "matrix.csv", [&](std::ostream& out) { write_matrix(out, prep.matrix); });
  write_file(dir / "rows.csv", [&](std::ostream& out) { write_rows(out, prep.rows); });
  write_file(dir / "stats.txt", [&](std::ostream& out) { write_stats(out, prep.stats); });
  write_table_file((dir / "words.emb").string(), synth_word_table(descriptions, cfg.embedding_dim, cfg.seed));
  write_table_file((dir / "sentences.emb").string(), synth_sentence_table(descriptions, cfg.embedding_dim, cfg.seed));

  write_stats(std::cout, prep.stats);
  std::cout << "\nprep: " << prep.matrix.rows() << " visitors x " << prep.matrix.cols() << " devices -> "
            << dir.string() << '\n';
}

void cmd_als(const CommonOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};
  const auto matrix_path = run.prep() / "matrix.csv";
  auto in = open_input(matrix_path);
  const auto matrix = read_matrix(in, matrix_path.string());
  if (matrix.rows() == 0 || matrix.cols() == 0) throw EmptyDataError(matrix_path.string() + " is empty");

  std::vector<double> trace;
  const FactorModel model = als_fit(matrix, cfg.als, &trace);
  const auto dir = stage_dir(run.als(), cfg);
  save_model((dir / "users.txt").string(), (dir / "items.txt").string(), model);
  const auto [users, items] = export_embeddings(model);
  write_table_file((dir / "visitors.emb").string(), users);
  write_table_file((dir / "devices.emb").string(), items);
  write_file(dir / "objective.csv", [&](std::ostream& out) {
    out << "sweep,objective\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out << i + 1 << ',' << csv::format_double(trace[i]) << '\n';
  });

  const InteractionMatrix recon = reconstruct(model);
  const Tensor pred({recon.rows(), recon.cols()}, recon.values), truth({matrix.rows(), matrix.cols()}, matrix.values);
  std::cout << "als: " << model.factors() << " factors, " << trace.size() << " objective values";
  if (!trace.empty()) std::cout << ", final objective " << csv::format_double(trace.back());
  std::cout << "\nals: reconstruction rmse " << csv::format_double(rmse(pred, truth)) << " -> " << dir.string()
            << '\n';
}

void cmd_train(const CommonOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};
  const PrepArtifacts prep = load_prep(run);
  TrainingSplit split = make_split(prep.rows, cfg.train_fraction, cfg.seed);
  if (split.train.empty()) throw EmptyDataError("training split is empty");

  const ModelRefs refs{absolute_path(run.als() / "visitors.emb"), absolute_path(run.als() / "devices.emb"),
                       absolute_path(run.prep() / "words.emb"), absolute_path(run.prep() / "sentences.emb"),
                       absolute_path(run.data() / "devices.csv")};
  const HybridTables tables = load_tables(refs);

  std::optional<InteractionMatrix> recon;
  if (cfg.net.target_source == TargetSource::als_reconstruction) recon = reconstruct(load_als(run));

  HybridNet net(cfg.net, prep.matrix.devices, prep.rows.front().features.size(), tables);
  const TrainReport report = train(net, split.train, split.validation, recon ? &*recon : nullptr);
  print_warnings(report.warnings);

  const auto dir = stage_dir(run.model(), cfg);
  save_model_dir(dir.string(), net, refs);
  write_file(dir / "scaler.csv", [&](std::ostream& out) { write_standardizer(out, split.scaler); });
  write_file(dir / "validation.txt", [&](std::ostream& out) {
    for (const auto& r : split.validation) out << r.visitor_id << '\n';
  });
  write_file(dir / "history.csv", [&](std::ostream& out) {
    out << "epoch,train_loss,validation_loss\n";
    for (const auto& e : report.epochs) {
      out << e.epoch << ',' << csv::format_double(e.train_loss) << ',' << csv::format_double(e.validation_loss)
          << '\n';
    }
  });

  for (const auto& e : report.epochs) {
    std::cout << "epoch " << e.epoch << " train " << csv::format_double(e.train_loss) << " validation "
              << csv::format_double(e.validation_loss) << '\n';
  }
  std::cout << "train: " << split.train.size() << " train rows, " << split.validation.size() << " validation rows";
  if (report.skipped_rows) std::cout << ", " << report.skipped_rows << " skipped";
  std::cout << " -> " << dir.string() << '\n';
}

void cmd_eval(const CommonOptions& opts) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};
  LoadedModel loaded = load_model_dir(run.model().string());
  HybridNet& net = loaded.net;
  const PrepArtifacts prep = load_prep(run);
  const Standardizer scaler = load_scaler(run);
  const FactorModel als = load_als(run);

  std::vector<DenormalizedRow> validation;
  for (const auto& id : read_lines(run.model() / "validation.txt")) {
    const auto it = std::find_if(prep.rows.begin(), prep.rows.end(), [&](const auto& r) { return r.visitor_id == id; });
    if (it == prep.rows.end()) throw DataError("validation.txt", 0, "visitor " + id + " is not in rows.csv");
    validation.push_back(*it);
  }
  if (validation.empty()) throw EmptyDataError("no validation rows");
  scaler.apply_in_place(validation);

  const Head head = net.config().head;
  const Tensor pred = predict_rows(net, validation);
  const Tensor als_pred = als_predictions(als, validation);
  // Scored against the observed interactions whatever the training targets were.
  const TargetSet tg = make_targets(validation, head, TargetSource::input_matrix);
  if (tg.kept.empty()) throw EmptyDataError("every validation row has an all-zero target");

  EvalReport report;
  if (head == Head::regression) {
    report = evaluate_regression(pred, tg.targets);
    report.metrics.emplace_back("als_rmse", rmse(als_pred, tg.targets));
    report.metrics.emplace_back("als_mae", mae(als_pred, tg.targets));
  } else {
    const std::size_t k = std::min(net.config().k_top, net.device_count());
    report = evaluate_classification(select_rows(pred, tg.kept), tg.targets, 0.5, k);
    const Tensor als_kept = select_rows(als_pred, tg.kept);
    report.metrics.emplace_back("als_accuracy", accuracy(als_kept, tg.targets));
    report.metrics.emplace_back("als_top" + std::to_string(k) + "_accuracy", topk_accuracy(als_kept, tg.targets, k));
  }

  std::ostringstream text;
  text << "head: " << head_name(head) << '\n' << "validation rows: " << validation.size() << '\n';
  if (tg.skipped) text << "skipped rows: " << tg.skipped << '\n';
  report.write_text(text);

  const auto dir = stage_dir(run.eval(), cfg);
  write_file(dir / "report.txt", [&](std::ostream& out) { out << text.str(); });
  write_file(dir / "metrics.csv", [&](std::ostream& out) { report.write_csv(out); });
  std::cout << text.str();
}

void cmd_recommend(const CommonOptions& opts, const RecommendOptions& rec) {
  resolve_config(opts);  // validates --config/--set even though the model carries its own
  if (rec.cold && (!rec.visitor.empty() || !rec.sequence.empty() || !rec.features_path.empty())) {
    throw ConfigError("--cold cannot be combined with --visitor, --sequence or --features");
  }
  const RunDir run{opts.out};
  LoadedModel loaded = load_model_dir(run.model().string());
  HybridNet& net = loaded.net;
  const std::size_t k = rec.k.value_or(net.config().k_top);
  if (k == 0 || k > net.device_count()) {
    throw ConfigError("-k must lie in [1, " + std::to_string(net.device_count()) + "]");
  }

  VisitorContext ctx;
  if (!rec.cold) {
    ctx.visitor_id = rec.visitor;
    ctx.device_sequence = split_list(rec.sequence);
    if (!rec.features_path.empty()) {
      auto in = open_input(rec.features_path);
      std::ostringstream buf;
      buf << in.rdbuf();
      std::vector<double> raw;
      for (const auto& tok : split_list(buf.str())) {
        double v = 0.0;
        if (!csv::parse_double(tok, v)) throw ConfigError(rec.features_path + ": bad feature value '" + tok + "'");
        raw.push_back(v);
      }
      if (raw.size() != net.feature_count()) {
        throw ConfigError(rec.features_path + ": expected " + std::to_string(net.feature_count()) +
                          " feature values, got " + std::to_string(raw.size()));
      }
      ctx.features = load_scaler(run).apply(raw);
    }
  }

  const auto recs = recommend(net, ctx, k);
  std::cout << "rank,device_id,score\n";
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::cout << i + 1 << ',' << recs[i].device_id << ',' << csv::format_double(recs[i].score) << '\n';
  }
  if (recs.size() < k) std::cerr << "warning: only " << recs.size() << " unseen devices to recommend\n";
}

void cmd_coverage(const CommonOptions& opts, const CoverageOptions& cov) {
  const RunConfig cfg = resolve_config(opts);
  const RunDir run{opts.out};
  const FactorModel model = load_als(run);
  const NeighborhoodIndex index = build_index(model, cfg.coverage_lambda);

  std::optional<std::size_t> seed_device;
  if (!cov.seed_device.empty()) {
    const auto it = std::find(index.devices.begin(), index.devices.end(), cov.seed_device);
    if (it == index.devices.end()) throw ConfigError("unknown seed device '" + cov.seed_device + "'");
    seed_device = static_cast<std::size_t>(it - index.devices.begin());
  }
  const CoverageResult result = greedy_pdrc(index, cfg.coverage_k, seed_device);
  print_warnings(result.warnings);

  const auto dir = stage_dir(run.coverage(), cfg);
  write_file(dir / "report.csv", [&](std::ostream& out) { write_coverage_report(out, index, result); });

  std::cout << "lambda_n = " << csv::format_double(index.lambda_n) << ", k = " << cfg.coverage_k << ", devices = "
            << index.size() << '\n';
  write_coverage_report(std::cout, index, result);
  std::cout << "coverage: " << result.coverage << " of " << index.size() << " devices\n";
  if (cov.exact) {
    if (index.size() > kExactMaxDevices) {
      std::cerr << "warning: exact search skipped, " << index.size() << " devices exceed the limit of "
                << kExactMaxDevices << '\n';
    } else {
      const CoverageResult best = exact_pdrc(index, cfg.coverage_k);
      std::cout << "exact coverage: " << best.coverage << '\n';
    }
  }
}

}  // namespace hybridrec::cli
