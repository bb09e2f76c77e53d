// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "liveupdate/adapt.hpp"
#include "liveupdate/scheduler.hpp"
#include "liveupdate/sync.hpp"
#include "liveupdate/workload.hpp"

namespace liveupdate::harness {

enum class Strategy { kNoUpdate, kDeltaUpdate, kQuickUpdate, kLiveUpdate };

std::string to_string(Strategy s);
// Accepts "no_update", "delta_update", "quick_update", "live_update".
Strategy strategy_from_string(const std::string& s);

struct TrainerConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  // Trailing window a tick samples from; widened to the cadence, capped by
  // the buffer retention.
  double window_minutes = 5.0;
  std::size_t buffer_capacity = 200000;
  double retention_minutes = 10.0;
  // Train steps per tick = ceil(epochs * new samples / batch_size).
  double epochs = 1.0;
  // Simulated compute cost of one training sample.
  double seconds_per_sample = 2e-6;
};

// The offline training cluster, modeled as tracking the planted tables with a
// lag and estimation noise.
struct ClusterConfig {
  double lag_minutes = 5.0;
  double noise = 0.05;
};

struct ExperimentConfig {
  std::string scenario = "default";
  Strategy strategy = Strategy::kLiveUpdate;
  // quick_update transfers this fraction of the changed rows per tick.
  double quick_fraction = 0.05;
  std::size_t nodes = 4;
  double cadence_minutes = 5.0;
  double full_sync_minutes = 60.0;
  double eval_window_minutes = 10.0;
  double bandwidth_gbps = 100.0;
  std::uint64_t seed = 1;
  std::string output_dir;
  ClusterConfig cluster;
  TrainerConfig trainer;
  adapt::AdaptConfig adapt;
  sync::SyncConfig sync;
  sync::NetConfig net;
  sched::SchedulerConfig scheduler;
  sched::DefaultLatencyModel latency;
  workload::WorkloadSpec workload;

  // Throws ConfigError with the dotted field path.
  void validate() const;
};

// Missing keys keep their defaults; "seed" also seeds the workload unless
// workload.seed is given explicitly.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

struct MetricsRow {
  double time_minutes = 0.0;
  double bce = 0.0;
  double auroc = 0.0;
  double cost_seconds = 0.0;  // cumulative
  double memory_proxy = 0.0;
  std::uint64_t payload_bytes = 0;  // this window
  double p99_ms = 0.0;
  std::size_t samples = 0;

  bool operator==(const MetricsRow&) const = default;
};

struct CostBreakdown {
  double transfer_seconds = 0.0;
  double training_seconds = 0.0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t trained_samples = 0;
  std::size_t sync_rounds = 0;
  double total() const { return transfer_seconds + training_seconds; }
};

// Accounting of one live_update sync round.
struct SyncRecord {
  std::size_t ranks = 0;
  std::size_t tables = 0;
  std::size_t rank = 0;          // LoRA rank k (largest over tables)
  std::size_t support_rows = 0;  // sum over ranks of |S_r|, all tables
  std::size_t b_entries = 0;     // B matrices sent, all ranks and tables
  std::size_t payload_bytes = 0;
};

struct ScenarioResult {
  ExperimentConfig config;
  std::vector<MetricsRow> metrics;
  std::vector<adapt::AdaptReport> adapt_reports;
  std::vector<std::size_t> adapt_tables;  // table of each report
  std::vector<sched::TraceRow> sched_trace;
  std::vector<double> sync_latency_us;
  std::vector<SyncRecord> sync_records;
  CostBreakdown cost;
  // Replicas were bitwise identical after every sync round.
  bool replicas_consistent = true;

  double final_hour_bce() const;
};

// Runs one strategy over the trace. When `trace` is empty the stream is
// generated from config.workload. When output_dir is set, writes the CSVs and
// one checkpoint per table of node 0.
ScenarioResult run_scenario(const ExperimentConfig& config,
                            const std::vector<Sample>& trace = {});

// Area under the ROC curve by rank sum, ties at mid-rank. 0.5 when a class
// is missing.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
// Throws std::runtime_error on a malformed file.
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

struct CostSummaryRow {
  std::string label;
  Strategy strategy;
  double cadence_minutes;
  double horizon_minutes;
  CostBreakdown cost;
};

// One row per run. Throws std::invalid_argument if horizons differ.
std::vector<CostSummaryRow> compare_update_cost(const std::vector<ScenarioResult>& runs);
void check_comparable(const std::vector<CostSummaryRow>& rows);
void write_cost_summary(std::ostream& out, const std::vector<CostSummaryRow>& rows);

// Spread of total cost per strategy across the compared runs.
struct CostShape {
  Strategy strategy;
  double min_total;
  double max_total;
  std::size_t runs;
  double ratio() const { return min_total > 0.0 ? max_total / min_total : 0.0; }
};
std::vector<CostShape> cost_shape(const std::vector<CostSummaryRow>& rows);

nlohmann::json summary_json(const ScenarioResult& result);
// Reads summary.json from a run directory.
CostSummaryRow read_run_summary(const std::string& dir);

// Writes metrics.csv, adapt.csv, sched.csv and summary.json under `dir`.
void write_outputs(const std::string& dir, const ScenarioResult& result);

}  // namespace liveupdate::harness
