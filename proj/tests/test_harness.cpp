// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "liveupdate/config_error.hpp"
#include "liveupdate/harness.hpp"

using namespace liveupdate;
using namespace liveupdate::harness;

namespace {

ExperimentConfig small(Strategy s, double cadence) {
  ExperimentConfig c;
  c.strategy = s;
  c.cadence_minutes = cadence;
  c.nodes = 2;
  c.eval_window_minutes = 5;
  c.full_sync_minutes = 20;
  c.workload.table_rows = {400, 200};
  c.workload.rate_per_minute = 1500;
  c.workload.horizon_minutes = 20;
  c.adapt.interval_steps = 32;
  c.adapt.snapshot_stride = 8;
  c.sync.interval_steps = 16;
  c.scheduler.min_samples = 10;
  return c;
}

std::string field_of(const nlohmann::json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

// Independent trace arithmetic: distinct ids per table between consecutive
// ticks (ticks at k * cadence up to and including the horizon), each shipped as
// an 8-byte index plus a float32 row.
double delta_cost_by_hand(const std::vector<Sample>& trace, const ExperimentConfig& c) {
  const double horizon = c.workload.horizon_minutes;
  std::uint64_t bytes = 0;
  for (double lo = 0.0; lo < horizon - 1e-9; lo += c.cadence_minutes) {
    const double hi = lo + c.cadence_minutes;
    for (std::size_t t = 0; t < c.workload.table_count(); ++t) {
      std::set<Index> ids;
      for (const auto& s : trace) {
        if (s.timestamp >= lo && s.timestamp < hi) ids.insert(s.ids[t].begin(), s.ids[t].end());
      }
      bytes += ids.size() * (8 + 4 * c.workload.dim);
    }
  }
  return static_cast<double>(bytes) * 8.0 / (c.bandwidth_gbps * 1e9);
}

}  // namespace

TEST_CASE("config errors carry the field path") {
  CHECK(field_of({{"cadence_minutes", -1}}) == "cadence_minutes");
  CHECK(field_of({{"strategy", "sometimes"}}) == "strategy");
  CHECK(field_of({{"trainer", {{"batch_size", "many"}}}}) == "trainer.batch_size");
  CHECK(field_of({{"trainer", {{"batch_size", 0}}}}) == "trainer.batch_size");
  CHECK(field_of({{"adapt", {{"alpha", 1.5}}}}) == "adapt.alpha");
  CHECK(field_of({{"scheduler", {{"t_low_ms", 50}}}}) == "scheduler.t_low_ms");
  CHECK(field_of({{"workload", {{"rate_per_minute", 0}}}}) == "workload.rate_per_minute");
  CHECK(field_of({{"cadence_minutes", 7}}) == "full_sync_minutes");
  CHECK(field_of({{"adapt", {{"interval_steps", 20}}}, {"sync", {{"interval_steps", 16}}}}) ==
        "adapt.interval_steps");
  CHECK(field_of(nlohmann::json::array()) == "");
  CHECK(field_of(nlohmann::json::object()).empty());
}

TEST_CASE("config json round trip") {
  auto c = small(Strategy::kQuickUpdate, 2.0);
  c.seed = 77;
  c.workload.drift_minutes = {5, 10};
  const auto back = config_from_json(to_json(c));
  CHECK(back.strategy == Strategy::kQuickUpdate);
  CHECK(back.cadence_minutes == 2.0);
  CHECK(back.seed == 77);
  CHECK(back.workload.table_rows == c.workload.table_rows);
  CHECK(back.workload.drift_minutes == c.workload.drift_minutes);
  CHECK(back.adapt.interval_steps == 32);
  CHECK(to_json(back) == to_json(c));
  // The top-level seed seeds the workload too.
  CHECK(config_from_json({{"seed", 5}}).workload.seed == 5);
  CHECK(config_from_json({{"seed", 5}, {"workload", {{"seed", 6}}}}).workload.seed == 6);
}

TEST_CASE("strategy names") {
  for (auto s : {Strategy::kNoUpdate, Strategy::kDeltaUpdate, Strategy::kQuickUpdate, Strategy::kLiveUpdate}) {
    CHECK(strategy_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(strategy_from_string("live"), ConfigError);
}

TEST_CASE("no_update costs nothing") {
  const auto r = run_scenario(small(Strategy::kNoUpdate, 5));
  CHECK(r.cost.total() == 0.0);
  CHECK(r.cost.payload_bytes == 0);
  CHECK(r.metrics.size() == 4);
  for (const auto& m : r.metrics) CHECK(m.cost_seconds == 0.0);
}

TEST_CASE("delta_update cost matches trace arithmetic") {
  for (double cadence : {2.0, 5.0, 10.0}) {
    auto c = small(Strategy::kDeltaUpdate, cadence);
    const auto trace = workload::generate_stream(c.workload);
    const auto r = run_scenario(c, trace);
    CHECK(r.cost.training_seconds == 0.0);
    CHECK(r.cost.transfer_seconds == doctest::Approx(delta_cost_by_hand(trace, c)).epsilon(1e-12));
    CHECK(r.metrics.back().cost_seconds == doctest::Approx(r.cost.total()));
  }
}

TEST_CASE("halving the cadence doubles delta cost once every tick touches every row") {
  auto c = small(Strategy::kDeltaUpdate, 10);
  c.workload.table_rows = {40};
  c.workload.horizon_minutes = 60;
  c.full_sync_minutes = 60;
  c.workload.zipf_exponent = 0.5;
  const double slow = run_scenario(c).cost.total();
  c.cadence_minutes = 5;
  const double fast = run_scenario(c).cost.total();
  CHECK(fast / slow == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("live_update training cost barely depends on cadence") {
  std::vector<double> secs;
  for (double cadence : {1.0, 2.0, 5.0, 10.0}) {
    const auto r = run_scenario(small(Strategy::kLiveUpdate, cadence));
    CHECK(r.replicas_consistent);
    CHECK(r.cost.sync_rounds > 0);
    secs.push_back(r.cost.training_seconds);
  }
  const auto [lo, hi] = std::minmax_element(secs.begin(), secs.end());
  CHECK(*lo > 0.0);
  CHECK(*hi / *lo < 1.25);
}

TEST_CASE("runs are deterministic per seed") {
  auto c = small(Strategy::kLiveUpdate, 5);
  const auto a = run_scenario(c);
  const auto b = run_scenario(c);
  CHECK(a.metrics == b.metrics);
  CHECK(a.adapt_reports == b.adapt_reports);
  CHECK(a.sched_trace == b.sched_trace);
  c.seed = 2;
  c.workload.seed = 2;
  CHECK(run_scenario(c).metrics != a.metrics);
}

TEST_CASE("metrics csv round trip") {
  const auto r = run_scenario(small(Strategy::kQuickUpdate, 5));
  std::stringstream io;
  write_metrics_csv(io, r.metrics);
  CHECK(read_metrics_csv(io) == r.metrics);

  std::stringstream empty;
  write_metrics_csv(empty, {});
  const std::string header = empty.str();
  CHECK(std::count(header.begin(), header.end(), '\n') == 1);
  CHECK(header.rfind("time_min,", 0) == 0);
  std::stringstream again(header);
  CHECK(read_metrics_csv(again).empty());

  std::stringstream bad("time_min,bce\n1,2\n");
  CHECK_THROWS_AS(read_metrics_csv(bad), std::runtime_error);
}

TEST_CASE("outputs land on disk and compare across runs") {
  const auto dir = std::filesystem::temp_directory_path() / "liveupdate_test_outputs";
  std::filesystem::remove_all(dir);
  auto c = small(Strategy::kLiveUpdate, 5);
  c.output_dir = (dir / "live").string();
  run_scenario(c);
  for (const char* f : {"metrics.csv", "adapt.csv", "sched.csv", "summary.json"}) {
    CHECK(std::filesystem::exists(dir / "live" / f));
  }
  CHECK(std::filesystem::exists(dir / "live" / "checkpoints"));
  const auto row = read_run_summary(c.output_dir);
  CHECK(row.strategy == Strategy::kLiveUpdate);
  CHECK(row.cadence_minutes == 5.0);

  auto longer = small(Strategy::kDeltaUpdate, 5);
  longer.workload.horizon_minutes = 25;
  std::vector<ScenarioResult> runs{run_scenario(small(Strategy::kDeltaUpdate, 5)), run_scenario(longer)};
  CHECK_THROWS_AS(compare_update_cost(runs), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("auroc by hand") {
  CHECK(auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
  CHECK(auroc({1, 2, 3}, {0, 0, 1}) == doctest::Approx(1.0));
  CHECK(auroc({3, 2, 1}, {0, 0, 1}) == doctest::Approx(0.0));
  // All tied: every pair counts half.
  CHECK(auroc({5, 5, 5, 5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK(auroc({1, 2}, {1, 1}) == 0.5);
  CHECK_THROWS(auroc({1, 2}, {1}));
}
