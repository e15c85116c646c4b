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

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "hybridrec/dataset.hpp"
#include "hybridrec/errors.hpp"

using namespace hybridrec;

namespace {

InteractionEvent ev(std::string u, std::string d, EventType t, std::int64_t ts = 0) {
  return {std::move(u), std::move(d), t, ts};
}

std::vector<InteractionEvent> random_events(std::uint64_t seed, std::size_t n, std::size_t visitors,
                                            std::size_t devices) {
  std::mt19937_64 rng(seed);
  std::vector<InteractionEvent> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<EventType>(rng() % 3);
    out.push_back(ev("u" + std::to_string(rng() % visitors), "d" + std::to_string(rng() % devices), t,
                     static_cast<std::int64_t>(i)));
  }
  return out;
}

std::vector<InteractionAggregate> scored(std::span<const InteractionEvent> events) {
  auto aggs = aggregate(events);
  weight_scores(aggs);
  normalize_scores(aggs);
  return aggs;
}

}  // namespace

TEST_CASE("event scores") {
  CHECK(event_score(EventType::view) == 0.02);
  CHECK(event_score(EventType::cart) == 0.04);
  CHECK(event_score(EventType::order) == 1.0);
  CHECK(event_score(EventType::view) < event_score(EventType::cart));
  CHECK(event_score(EventType::cart) < event_score(EventType::order));
  CHECK(parse_event_type("cart") == EventType::cart);
  CHECK_FALSE(parse_event_type("click").has_value());
}

TEST_CASE("aggregate examples") {
  CHECK(aggregate(std::vector<InteractionEvent>{}).empty());

  const std::vector<InteractionEvent> one{ev("u1", "d1", EventType::view), ev("u1", "d1", EventType::order)};
  const auto a = aggregate(one);
  REQUIRE(a.size() == 1);
  CHECK(a[0].hits == 2);
  CHECK(a[0].cum_score == doctest::Approx(1.02));
  CHECK(a[0].avg_score == doctest::Approx(0.51));

  const std::vector<InteractionEvent> two{ev("u1", "d1", EventType::view), ev("u2", "d1", EventType::view)};
  const auto b = aggregate(two);
  REQUIRE(b.size() == 2);
  for (const auto& x : b) {
    CHECK(x.hits == 1);
    CHECK(x.avg_score == doctest::Approx(0.02));
  }
}

TEST_CASE("weight_scores examples") {
  SUBCASE("single event") {
    const std::vector<InteractionEvent> events{ev("u", "d", EventType::order)};
    auto aggs = aggregate(events);
    weight_scores(aggs);
    CHECK(aggs[0].weighted_score == doctest::Approx(1.0));
  }
  SUBCASE("avg 1, h_d 1, H 9, global mean 0.1") {
    // Device a: one order. Devices b and c: 9 hits each so the median is 9.
    // Global mean: (1 + x) / 19 = 0.1 needs x = 0.9 spread over 18 events = 0.05
    // each, which is not an event score; use weights directly instead.
    std::vector<InteractionAggregate> aggs;
    aggs.push_back({"u1", "a", 1, 1.0, 1.0});
    aggs.push_back({"u2", "b", 9, 0.45, 0.05});
    aggs.push_back({"u3", "c", 9, 0.45, 0.05});
    weight_scores(aggs);
    // H = median{1,9,9} = 9, g = (1 + 0.45 + 0.45) / 19 = 0.1
    CHECK(aggs[0].weighted_score == doctest::Approx(0.1 * 1.0 + 0.9 * 0.1));
    CHECK(aggs[0].weighted_score == doctest::Approx(0.19));
  }
  SUBCASE("many hits pull weighted toward avg") {
    std::vector<InteractionAggregate> aggs;
    aggs.push_back({"u1", "a", 1, 0.02, 0.02});
    aggs.push_back({"u2", "b", 100000, 100000.0, 1.0});
    aggs.push_back({"u3", "c", 1, 0.02, 0.02});
    weight_scores(aggs);
    CHECK(std::abs(aggs[1].weighted_score - 1.0) < 1e-4);
  }
  SUBCASE("empty input") {
    std::vector<InteractionAggregate> aggs;
    weight_scores(aggs);
    CHECK(aggs.empty());
  }
}

TEST_CASE("weighted is a convex combination of avg and the global mean") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto events = random_events(seed, 300, 20, 8);
    auto aggs = aggregate(events);
    double cum = 0.0;
    for (const auto& e : events) cum += event_score(e.type);
    const double g = cum / static_cast<double>(events.size());
    weight_scores(aggs);
    for (const auto& a : aggs) {
      CHECK(a.weighted_score >= std::min(a.avg_score, g) - 1e-12);
      CHECK(a.weighted_score <= std::max(a.avg_score, g) + 1e-12);
    }
  }
}

TEST_CASE("normalize_scores examples") {
  SUBCASE("single device visitor keeps weighted") {
    const std::vector<InteractionEvent> events{ev("u", "d", EventType::view), ev("u", "d", EventType::cart)};
    const auto aggs = scored(events);
    CHECK(aggs[0].normalized_score == doctest::Approx(aggs[0].weighted_score));
  }
  SUBCASE("weighted 0.8, hits 1 of 4") {
    std::vector<InteractionAggregate> aggs{{"u", "a", 1, 0, 0, 0.8}, {"u", "b", 3, 0, 0, 0.5}};
    normalize_scores(aggs);
    CHECK(aggs[0].normalized_score == doctest::Approx(0.2));
  }
  SUBCASE("symmetric devices get equal scores") {
    std::vector<InteractionAggregate> aggs{{"u", "a", 2, 0, 0, 0.4}, {"u", "b", 2, 0, 0, 0.4}};
    normalize_scores(aggs);
    CHECK(aggs[0].normalized_score == aggs[1].normalized_score);
  }
}

TEST_CASE("normalized scores are bounded by weighted and [0,1]") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& a : scored(random_events(seed, 400, 30, 10))) {
      CHECK(a.normalized_score >= 0.0);
      CHECK(a.normalized_score <= a.weighted_score + 1e-15);
      CHECK(a.weighted_score <= 1.0);
    }
  }
}

TEST_CASE("nearest-rank percentile") {
  CHECK(nearest_rank_percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 90) == 9);
  CHECK(nearest_rank_percentile({10, 1, 5}, 50) == 5);
  CHECK(nearest_rank_percentile({3}, 1) == 3);
  CHECK_THROWS_AS(nearest_rank_percentile({1, 2}, 0), std::invalid_argument);
  CHECK_THROWS_AS(nearest_rank_percentile({1, 2}, 100), std::invalid_argument);
}

TEST_CASE("reduce_by_percentile examples") {
  SUBCASE("equal hits keep everything") {
    std::vector<InteractionEvent> events;
    for (int d = 0; d < 5; ++d) events.push_back(ev("u" + std::to_string(d), "d" + std::to_string(d), EventType::view));
    const auto r = reduce_by_percentile(aggregate(events), 1);
    CHECK(r.devices_after == 5);
    CHECK(r.kept.size() == 5);
  }
  SUBCASE("hits 1..10 at the 90th percentile") {
    std::vector<InteractionEvent> events;
    for (int d = 1; d <= 10; ++d) {
      for (int h = 0; h < d; ++h) events.push_back(ev("u" + std::to_string(h), "d" + std::to_string(d), EventType::view));
    }
    const auto r = reduce_by_percentile(aggregate(events), 90);
    // Oracle: sort totals and take rank ceil(0.9 * 10) = 9.
    std::vector<double> totals{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CHECK(r.threshold == totals[8]);
    std::set<std::string> survivors;
    for (const auto& a : r.kept) survivors.insert(a.device_id);
    CHECK(survivors == std::set<std::string>{"d10", "d9"});
  }
  SUBCASE("visitors left without interactions are dropped") {
    const std::vector<InteractionEvent> events{ev("a", "hot", EventType::view), ev("b", "hot", EventType::view),
                                               ev("c", "cold", EventType::view)};
    const auto r = reduce_by_percentile(aggregate(events), 90);
    for (const auto& a : r.kept) CHECK(a.visitor_id != "c");
  }
  SUBCASE("percentile outside (0,100) rejected") {
    const auto aggs = aggregate(std::vector<InteractionEvent>{ev("a", "d", EventType::view)});
    CHECK_THROWS_AS(reduce_by_percentile(aggs, 0), std::invalid_argument);
    CHECK_THROWS_AS(reduce_by_percentile(aggs, 100), std::invalid_argument);
  }
}

TEST_CASE("raising the percentile never enlarges the surviving devices") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto aggs = aggregate(random_events(seed, 500, 40, 25));
    std::set<std::string> previous;
    bool first = true;
    for (double p = 5; p < 100; p += 5) {
      std::set<std::string> now;
      for (const auto& a : reduce_by_percentile(aggs, p).kept) now.insert(a.device_id);
      if (!first) CHECK(std::includes(previous.begin(), previous.end(), now.begin(), now.end()));
      previous = now;
      first = false;
    }
  }
}

TEST_CASE("build_matrix examples") {
  SUBCASE("1x1") {
    std::vector<InteractionAggregate> aggs{{"u", "d", 1, 0, 0, 0.5, 0.5}};
    const auto m = build_matrix(aggs);
    CHECK(m.values == std::vector<double>{0.5});
  }
  SUBCASE("missing pairs are zero") {
    std::vector<InteractionAggregate> aggs{{"u1", "d2", 1, 0, 0, 0.3, 0.3}, {"u2", "d1", 1, 0, 0, 0, 0}};
    const auto m = build_matrix(aggs);
    CHECK(m.visitors == std::vector<std::string>{"u1", "u2"});
    CHECK(m.devices == std::vector<std::string>{"d1", "d2"});
    CHECK(m.values == std::vector<double>{0, 0.3, 0, 0});
  }
  SUBCASE("duplicate pairs rejected") {
    std::vector<InteractionAggregate> aggs{{"u", "d", 1, 0, 0, 0.1, 0.1}, {"u", "d", 1, 0, 0, 0.1, 0.1}};
    CHECK_THROWS_AS(build_matrix(aggs), std::invalid_argument);
  }
}

TEST_CASE("matrix entries stay in [0,1] and ignore event order") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto events = random_events(seed, 300, 15, 6);
    const auto m1 = build_matrix(scored(events));
    for (double v : m1.values) CHECK((v >= 0.0 && v <= 1.0));
    std::mt19937_64 rng(seed);
    std::shuffle(events.begin(), events.end(), rng);
    CHECK(build_matrix(scored(events)).values == m1.values);
  }
}

TEST_CASE("device_sequence") {
  SUBCASE("padding on the left") {
    const std::vector<InteractionEvent> events{ev("u", "d", EventType::view, 5)};
    CHECK(device_sequence(events, 4) ==
          std::vector<std::string>{"<pad>", "<pad>", "<pad>", "d"});
  }
  SUBCASE("keeps the most recent m by first-seen time") {
    std::vector<InteractionEvent> events;
    const std::vector<std::pair<std::string, int>> raw{{"f", 60}, {"a", 10}, {"c", 30}, {"b", 20},
                                                       {"e", 50}, {"d", 40}, {"a", 70}};
    for (const auto& [d, t] : raw) events.push_back(ev("u", d, EventType::view, t));
    // Oracle: sort distinct devices by first timestamp, slice the tail.
    std::map<std::string, int> first;
    for (const auto& [d, t] : raw) {
      if (!first.count(d) || t < first[d]) first[d] = t;
    }
    std::vector<std::pair<int, std::string>> order;
    for (const auto& [d, t] : first) order.push_back({t, d});
    std::sort(order.begin(), order.end());
    std::vector<std::string> expect;
    for (std::size_t i = order.size() - 4; i < order.size(); ++i) expect.push_back(order[i].second);
    CHECK(device_sequence(events, 4) == expect);
  }
}

TEST_CASE("denormalize") {
  SynthConfig cfg;
  cfg.visitors = 60;
  cfg.devices = 8;
  cfg.events = 600;
  cfg.seed = 3;
  const auto data = synth_generate(cfg);
  const auto aggs = scored(data.events);
  const auto matrix = build_matrix(aggs);
  std::vector<std::string> warnings;
  const auto rows = denormalize(matrix, data.events, 5, data.features, &warnings);
  REQUIRE(rows.size() == matrix.rows());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    CHECK(rows[r].visitor_id == matrix.visitors[r]);
    CHECK(rows[r].device_sequence.size() == 5);
    CHECK(rows[r].features.size() == data.features.width());
    for (double f : rows[r].features) CHECK(std::isfinite(f));
    const auto row = matrix.row(r);
    CHECK(std::equal(row.begin(), row.end(), rows[r].target.begin(), rows[r].target.end()));
    // Mass preservation against the aggregates.
    double mass = 0.0, expect = 0.0;
    for (double v : rows[r].target) mass += v;
    for (const auto& a : aggs) {
      if (a.visitor_id == rows[r].visitor_id) expect += a.normalized_score;
    }
    CHECK(mass == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("denormalize imputes unknown visitors with a warning") {
  const std::vector<InteractionEvent> events{ev("ghost", "d", EventType::view, 1)};
  const auto matrix = build_matrix(scored(events));
  FeatureSet fs;
  fs.visitor.columns = {"age"};
  fs.visitor.ids = {"known"};
  fs.visitor.rows["known"] = {40.0};
  std::vector<std::string> warnings;
  const auto rows = denormalize(matrix, events, 2, fs, &warnings);
  CHECK(rows[0].features == std::vector<double>{40.0});
  CHECK_FALSE(warnings.empty());
}

TEST_CASE("standardizer uses training statistics and zero for missing") {
  std::vector<DenormalizedRow> rows(3);
  rows[0].features = {1, 10};
  rows[1].features = {2, 10};
  rows[2].features = {3, 10};
  const auto s = Standardizer::fit(rows);
  const auto z = s.apply(std::vector<double>{2, 10});
  CHECK(z[0] == doctest::Approx(0.0));
  CHECK(z[1] == 0.0);  // constant column
  const auto m = s.apply(std::vector<double>{std::nan(""), 11});
  CHECK(m[0] == 0.0);
}

TEST_CASE("split") {
  std::vector<DenormalizedRow> four(4);
  for (int i = 0; i < 4; ++i) four[i].visitor_id = "v" + std::to_string(i);
  std::mt19937_64 rng(1);
  const auto [train, val] = split(four, 0.75, rng);
  CHECK(train.size() == 3);
  CHECK(val.size() == 1);

  auto a = std::mt19937_64(5), b = std::mt19937_64(5), c = std::mt19937_64(6);
  const auto s1 = split_indices(100, 0.8, a);
  const auto s2 = split_indices(100, 0.8, b);
  const auto s3 = split_indices(100, 0.8, c);
  CHECK(s1.train == s2.train);
  CHECK(s1.train != s3.train);
  std::vector<std::size_t> all = s1.train;
  all.insert(all.end(), s1.validation.begin(), s1.validation.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(all[i] == i);

  std::vector<DenormalizedRow> one(1);
  CHECK_THROWS_AS(split(one, 0.5, rng), std::invalid_argument);
  CHECK_THROWS_AS(split(four, 1.0, rng), std::invalid_argument);
}

TEST_CASE("synth_generate") {
  SUBCASE("one of everything") {
    SynthConfig cfg;
    cfg.visitors = 1;
    cfg.devices = 1;
    cfg.events = 1;
    const auto data = synth_generate(cfg);
    CHECK(data.events.size() == 1);
    CHECK(data.descriptions.size() == 1);
  }
  SUBCASE("zero entities rejected") {
    SynthConfig cfg;
    cfg.visitors = 0;
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
  }
  SUBCASE("deterministic files") {
    SynthConfig cfg;
    cfg.visitors = 50;
    cfg.devices = 10;
    cfg.events = 400;
    auto dump = [&] {
      const auto data = synth_generate(cfg);
      std::ostringstream out;
      write_events(out, data.events);
      write_features(out, data.features.visitor, "visitor_id");
      write_features(out, data.features.context, "visitor_id");
      write_features(out, data.features.device, "device_id");
      write_descriptions(out, data.descriptions);
      return out.str();
    };
    CHECK(dump() == dump());
  }
  SUBCASE("default dataset shape") {
    const SynthConfig cfg;
    const auto data = synth_generate(cfg);
    CHECK(data.events.size() == cfg.events);
    CHECK(data.features.visitor.width() == cfg.visitor_features);
    CHECK(data.features.context.width() == cfg.context_features);
    CHECK(data.features.device.width() == cfg.device_features);
    std::map<EventType, std::size_t> counts;
    std::map<std::string, std::int64_t> last;
    for (const auto& e : data.events) {
      ++counts[e.type];
      auto it = last.find(e.visitor_id);
      if (it != last.end()) CHECK(e.timestamp > it->second);
      last[e.visitor_id] = e.timestamp;
    }
    CHECK(counts[EventType::view] > counts[EventType::cart]);
    CHECK(counts[EventType::cart] > counts[EventType::order]);
    const auto r = reduce_by_percentile(aggregate(data.events), 90);
    CHECK(r.devices_after >= 4);
    CHECK(r.devices_after <= 10);
    // Roughly a tenth of the catalogue survives.
    CHECK(static_cast<double>(r.devices_after) / static_cast<double>(r.devices_before) < 0.2);
  }
}

TEST_CASE("events csv round trip and errors") {
  const std::vector<InteractionEvent> events{ev("u,1", "d", EventType::cart, 3), ev("u2", "d\"x", EventType::order, 9)};
  std::stringstream buf;
  write_events(buf, events);
  const auto back = read_events(buf);
  REQUIRE(back.size() == 2);
  CHECK(back[0].visitor_id == "u,1");
  CHECK(back[1].device_id == "d\"x");
  CHECK(back[1].type == EventType::order);

  std::istringstream bad("visitor_id,device_id,event_type,timestamp\nu,d,view,1\nu,d,click,2\n");
  try {
    read_events(bad, "events.csv");
    FAIL("expected a throw");
  } catch (const DataError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream header("a,b\n");
  CHECK_THROWS_AS(read_events(header), DataError);
  std::istringstream negative("visitor_id,device_id,event_type,timestamp\nu,d,view,-1\n");
  CHECK_THROWS_AS(read_events(negative), DataError);
}

TEST_CASE("feature csv one-hot encodes categories with an unknown bucket") {
  std::istringstream in("visitor_id,age,plan\nu1,30,gold\nu2,,\nu3,50,silver\n");
  const auto t = read_features(in);
  CHECK(t.columns == std::vector<std::string>{"age", "plan=gold", "plan=silver", "plan=unknown"});
  CHECK(std::isnan(t.find("u2")->at(0)));
  CHECK(t.find("u2")->at(3) == 1.0);
  CHECK(t.column_means()[0] == doctest::Approx(40.0));
}

TEST_CASE("descriptions csv round trip") {
  const std::vector<DeviceDescription> d{{"d1", "Acme model1", "fast, bright"}};
  std::stringstream buf;
  write_descriptions(buf, d);
  const auto back = read_descriptions(buf);
  REQUIRE(back.size() == 1);
  CHECK(back[0].description == "fast, bright");
}
