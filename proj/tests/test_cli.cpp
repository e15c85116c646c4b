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

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "hybridrec/errors.hpp"
#include "hybridrec/pipeline.hpp"

using namespace hybridrec;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t line_count(const fs::path& path) {
  const std::string text = slurp(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class Sandbox {
 public:
  Sandbox() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("hybridrec_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Sandbox() { fs::remove_all(dir_); }
  const fs::path& dir() const { return dir_; }

  Result run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd =
        std::string("\"") + HYBRIDREC_CLI + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  // Small data and a tiny network so the whole pipeline runs in seconds.
  fs::path tiny_config() const {
    const auto path = dir_ / "tiny.cfg";
    std::ofstream(path) << "# tiny run\n"
                           "synth.visitors = 150\nsynth.devices = 20\nsynth.events = 3000\n"
                           "prep.percentile = 50\nemb.dim = 8\nals.factors = 4\nals.iterations = 5\n"
                           "net.m = 4\nnet.conv_filters = 4,4,4\nnet.n1_dense = 8\nnet.lstm_units = 6\n"
                           "net.n2_dense = 6\nnet.n3_dense = 6\nnet.n4_dense = 8\nnet.shared_dense = 8\n"
                           "net.epochs = 2\nnet.batch = 16\n";
    return path;
  }

 private:
  fs::path dir_;
};

std::string common(const Sandbox& sb, const std::string& run = "run") {
  return "--config \"" + sb.tiny_config().string() + "\" --out \"" + (sb.dir() / run).string() + "\"";
}

}  // namespace

TEST_CASE("synth writes the configured row counts") {
  Sandbox sb;
  const auto r = sb.run("synth " + common(sb));
  REQUIRE(r.code == 0);
  const auto data = sb.dir() / "run" / "data";
  CHECK(line_count(data / "events.csv") == 3001);
  CHECK(line_count(data / "visitors.csv") == 151);
  CHECK(line_count(data / "devices.csv") == 21);
  CHECK(fs::exists(data / "config.txt"));
  CHECK(slurp(data / "config.txt").find("synth.visitors = 150") != std::string::npos);
}

TEST_CASE("synth is reproducible for a fixed seed") {
  Sandbox sb;
  REQUIRE(sb.run("synth " + common(sb, "a") + " --seed 3").code == 0);
  REQUIRE(sb.run("synth " + common(sb, "b") + " --seed 3").code == 0);
  REQUIRE(sb.run("synth " + common(sb, "c") + " --seed 4").code == 0);
  for (const char* f : {"events.csv", "visitors.csv", "context.csv", "device_features.csv", "devices.csv"}) {
    CHECK(slurp(sb.dir() / "a/data" / f) == slurp(sb.dir() / "b/data" / f));
  }
  CHECK(slurp(sb.dir() / "a/data/events.csv") != slurp(sb.dir() / "c/data/events.csv"));
}

TEST_CASE("config errors exit with 2") {
  Sandbox sb;
  SUBCASE("zero visitors") {
    const auto r = sb.run("synth " + common(sb) + " --set synth.visitors=0");
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
  }
  SUBCASE("unknown key") {
    const auto r = sb.run("synth " + common(sb) + " --set als.factorz=3");
    CHECK(r.code == 2);
    CHECK(r.err.find("als.factorz") != std::string::npos);
  }
  SUBCASE("net.seed is not a separate knob") { CHECK(sb.run("synth " + common(sb) + " --set net.seed=1").code == 2); }
  SUBCASE("bad value") { CHECK(sb.run("synth " + common(sb) + " --set prep.percentile=100").code == 2); }
  SUBCASE("missing config file") { CHECK(sb.run("synth --config /nonexistent.cfg").code == 2); }
  SUBCASE("unknown subcommand") { CHECK(sb.run("frobnicate").code == 2); }
}

TEST_CASE("missing upstream artifacts exit with 4 and name the path") {
  Sandbox sb;
  for (const char* cmd : {"prep", "als", "train", "eval", "recommend --cold", "coverage"}) {
    CAPTURE(cmd);
    const auto r = sb.run(std::string(cmd) + " " + common(sb));
    CHECK(r.code == 4);
    CHECK(r.err.find((sb.dir() / "run").string()) != std::string::npos);
  }
}

TEST_CASE("prep on an event file with no events exits with 3") {
  Sandbox sb;
  REQUIRE(sb.run("synth " + common(sb)).code == 0);
  std::ofstream(sb.dir() / "run/data/events.csv") << "visitor_id,device_id,event_type,timestamp\n";
  CHECK(sb.run("prep " + common(sb)).code == 3);
}

TEST_CASE("end to end on a tiny config") {
  Sandbox sb;
  const auto start = std::chrono::steady_clock::now();
  const std::string c = common(sb);
  for (const char* cmd : {"synth", "prep", "als", "train"}) {
    CAPTURE(cmd);
    const auto r = sb.run(std::string(cmd) + " " + c);
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  const auto first = sb.run("eval " + c);
  REQUIRE_MESSAGE(first.code == 0, first.err);
  CHECK(first.out.find("rmse") != std::string::npos);
  CHECK(first.out.find("als_rmse") != std::string::npos);
  const std::string metrics = slurp(sb.dir() / "run/eval/metrics.csv");

  SUBCASE("eval is deterministic") {
    const auto second = sb.run("eval " + c);
    CHECK(second.out == first.out);
    CHECK(slurp(sb.dir() / "run/eval/metrics.csv") == metrics);
  }
  SUBCASE("training is idempotent") {
    const std::string params = slurp(sb.dir() / "run/model/params.txt");
    REQUIRE(sb.run("train " + c).code == 0);
    CHECK(slurp(sb.dir() / "run/model/params.txt") == params);
  }
  SUBCASE("every stage echoes its config") {
    for (const char* stage : {"data", "prep", "als", "model", "eval"}) {
      CHECK(slurp(sb.dir() / "run" / stage / "config.txt") == slurp(sb.dir() / "run/data/config.txt"));
    }
  }
  SUBCASE("cold recommendation prints five devices") {
    const auto r = sb.run("recommend " + c + " --cold");
    REQUIRE(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 6);  // header + 5
    CHECK(r.out.rfind("rank,device_id,score\n1,", 0) == 0);
  }
  SUBCASE("warm recommendation honours -k and skips seen devices") {
    std::istringstream rows(slurp(sb.dir() / "run/prep/rows.csv"));
    std::string line;
    std::getline(rows, line);
    std::getline(rows, line);
    const std::string visitor = line.substr(0, line.find(','));
    const auto r = sb.run("recommend " + c + " --visitor " + visitor + " --sequence d01,d02 -k 3");
    REQUIRE(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') <= 4);
    CHECK(r.out.find(",d01,") == std::string::npos);
  }
  SUBCASE("bad recommend inputs exit with 2") {
    const auto bad = sb.dir() / "features.txt";
    std::ofstream(bad) << "1 2 3\n";
    CHECK(sb.run("recommend " + c + " --features \"" + bad.string() + "\"").code == 2);
    CHECK(sb.run("recommend " + c + " --cold --visitor v0001").code == 2);
    CHECK(sb.run("recommend " + c + " --cold -k 999").code == 2);
  }
  SUBCASE("coverage states lambda and writes a report") {
    const auto r = sb.run("coverage " + c + " --exact");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("lambda_n = 0.5") != std::string::npos);
    CHECK(slurp(sb.dir() / "run/coverage/report.csv").rfind("rank,device_id,marginal_gain,cumulative_coverage\n", 0) ==
          0);
  }
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::minutes(5));
}

TEST_CASE("run config round trips and rejects bad keys") {
  RunConfig c;
  c.seed = 11;
  c.percentile = 75;
  c.als.solver = AlsSolver::direct;
  c.net.head = Head::classification;
  const auto back = RunConfig::from_key_values(c.to_key_values());
  CHECK(back.to_key_values().values() == c.to_key_values().values());
  CHECK(back.net.seed == 11);
  CHECK(back.als.seed == 11);
  CHECK(back.synth.seed == 11);

  KeyValues kv;
  kv.set("coverage.lambda", "1.5");
  CHECK_THROWS_AS(RunConfig::from_key_values(kv), ConfigError);
  kv = KeyValues();
  kv.set("als.solver", "lu");
  CHECK_THROWS_AS(RunConfig::from_key_values(kv), ConfigError);
}

TEST_CASE("prep statistics on the default synthetic data") {
  const auto data = synth_generate(SynthConfig{});
  const Prepared prep = prepare(data.events, data.features, 90.0, 8);
  const auto& s = prep.stats;
  CHECK(s.events == data.events.size());
  CHECK(s.reduction.devices_after < s.reduction.devices_before);
  CHECK(prep.rows.size() == prep.matrix.rows());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(s.correlation[i][i] == 1.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(s.correlation[i][j] == s.correlation[j][i]);
  }
  CHECK(s.correlation[2][3] > 0.0);  // weighted vs normalized
  std::size_t total = 0;
  for (auto n : s.hits.counts) total += n;
  CHECK(total > 0);
  CHECK(total <= s.pairs);
  CHECK_THROWS_AS(prepare({}, data.features, 90.0, 8), EmptyDataError);
}

TEST_CASE("histogram and correlation helpers") {
  const std::vector<double> v{0, 1, 2, 3, 4};
  const auto h = histogram(v, 2);
  CHECK(h.edges == std::vector<double>{0, 2, 4});
  CHECK(h.counts == std::vector<std::size_t>{2, 3});
  CHECK(correlation(v, v) == doctest::Approx(1.0));
  const std::vector<double> neg{4, 3, 2, 1, 0}, flat{1, 1, 1, 1, 1};
  CHECK(correlation(v, neg) == doctest::Approx(-1.0));
  CHECK(correlation(v, flat) == 0.0);
}

TEST_CASE("matrix, rows and scaler files round trip") {
  const auto data = synth_generate(SynthConfig{.visitors = 80, .devices = 12, .events = 1500});
  Prepared prep = prepare(data.events, data.features, 50.0, 4);
  std::stringstream m, r;
  write_matrix(m, prep.matrix);
  const auto matrix = read_matrix(m);
  CHECK(matrix.devices == prep.matrix.devices);
  CHECK(matrix.visitors == prep.matrix.visitors);
  CHECK(matrix.values == prep.matrix.values);

  write_rows(r, prep.rows);
  auto rows = read_rows(r);
  attach_targets(rows, matrix);
  REQUIRE(rows.size() == prep.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].visitor_id == prep.rows[i].visitor_id);
    CHECK(rows[i].device_sequence == prep.rows[i].device_sequence);
    CHECK(rows[i].features == prep.rows[i].features);
    CHECK(rows[i].target == prep.rows[i].target);
  }

  const auto split = make_split(prep.rows, 0.8, 7);
  CHECK(split.train.size() + split.validation.size() == prep.rows.size());
  std::stringstream s;
  write_standardizer(s, split.scaler);
  const auto scaler = read_standardizer(s);
  CHECK(scaler.mean() == split.scaler.mean());
  CHECK(scaler.scale() == split.scaler.scale());

  std::istringstream bad("visitor_id,d1\nv1,abc\n");
  CHECK_THROWS_AS(read_matrix(bad), DataError);
}
