// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "liveupdate/config_error.hpp"
#include "liveupdate/harness.hpp"
#include "liveupdate/workload_json.hpp"

namespace liveupdate::harness {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kNoUpdate: return "no_update";
    case Strategy::kDeltaUpdate: return "delta_update";
    case Strategy::kQuickUpdate: return "quick_update";
    case Strategy::kLiveUpdate: return "live_update";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "no_update") return Strategy::kNoUpdate;
  if (s == "delta_update") return Strategy::kDeltaUpdate;
  if (s == "quick_update") return Strategy::kQuickUpdate;
  if (s == "live_update") return Strategy::kLiveUpdate;
  throw ConfigError("strategy", "unknown strategy '" + s + "'");
}

namespace {

bool multiple_of(double a, double b) {
  const double q = a / b;
  return std::abs(q - std::round(q)) < 1e-9;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (nodes == 0) throw ConfigError("nodes", "must be >= 1");
  if (nodes > 65535) throw ConfigError("nodes", "must fit in 16 bits");
  if (!(cadence_minutes > 0.0)) throw ConfigError("cadence_minutes", "must be positive");
  if (!(full_sync_minutes > 0.0)) throw ConfigError("full_sync_minutes", "must be positive");
  if (!multiple_of(full_sync_minutes, cadence_minutes)) {
    throw ConfigError("full_sync_minutes", "must be a multiple of cadence_minutes");
  }
  if (!(eval_window_minutes > 0.0)) throw ConfigError("eval_window_minutes", "must be positive");
  if (!(bandwidth_gbps > 0.0)) throw ConfigError("bandwidth_gbps", "must be positive");
  if (!(quick_fraction > 0.0 && quick_fraction <= 1.0)) {
    throw ConfigError("quick_fraction", "must be in (0, 1]");
  }
  if (!(cluster.lag_minutes >= 0.0)) throw ConfigError("cluster.lag_minutes", "must be >= 0");
  if (!(cluster.noise >= 0.0)) throw ConfigError("cluster.noise", "must be >= 0");
  if (!(trainer.learning_rate >= 0.0)) throw ConfigError("trainer.learning_rate", "must be >= 0");
  if (trainer.batch_size == 0) throw ConfigError("trainer.batch_size", "must be >= 1");
  if (!(trainer.window_minutes > 0.0)) throw ConfigError("trainer.window_minutes", "must be positive");
  if (trainer.buffer_capacity == 0) throw ConfigError("trainer.buffer_capacity", "must be >= 1");
  if (!(trainer.retention_minutes > 0.0)) {
    throw ConfigError("trainer.retention_minutes", "must be positive");
  }
  if (!(trainer.epochs > 0.0)) throw ConfigError("trainer.epochs", "must be positive");
  if (!(trainer.seconds_per_sample >= 0.0)) {
    throw ConfigError("trainer.seconds_per_sample", "must be >= 0");
  }
  workload.validate();
  for (std::size_t rows : workload.table_rows) adapt.validate(rows, workload.dim);
  sync.validate();
  if (adapt.interval_steps % sync.interval_steps != 0) {
    throw ConfigError("adapt.interval_steps", "must be a multiple of sync.interval_steps");
  }
  scheduler.validate();
  if (!(latency.sigma >= 0.0)) throw ConfigError("latency.sigma", "must be >= 0");
  if (net.drop_probability < 0.0 || net.drop_probability >= 1.0) {
    throw ConfigError("net.drop_probability", "must be in [0, 1)");
  }
}

namespace {

using nlohmann::json;

template <typename T>
void get(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path.empty() ? key : path + "." + key, "wrong type");
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(key, "expected an object");
  return j.at(key);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  ExperimentConfig c;
  get(j, "", "scenario", c.scenario);
  if (j.contains("strategy")) {
    if (!j["strategy"].is_string()) throw ConfigError("strategy", "expected a string");
    c.strategy = strategy_from_string(j["strategy"].get<std::string>());
  }
  get(j, "", "quick_fraction", c.quick_fraction);
  get(j, "", "nodes", c.nodes);
  get(j, "", "cadence_minutes", c.cadence_minutes);
  get(j, "", "full_sync_minutes", c.full_sync_minutes);
  get(j, "", "eval_window_minutes", c.eval_window_minutes);
  get(j, "", "bandwidth_gbps", c.bandwidth_gbps);
  get(j, "", "seed", c.seed);
  get(j, "", "output_dir", c.output_dir);

  const json& cl = section(j, "cluster");
  get(cl, "cluster", "lag_minutes", c.cluster.lag_minutes);
  get(cl, "cluster", "noise", c.cluster.noise);

  const json& tr = section(j, "trainer");
  get(tr, "trainer", "learning_rate", c.trainer.learning_rate);
  get(tr, "trainer", "batch_size", c.trainer.batch_size);
  get(tr, "trainer", "window_minutes", c.trainer.window_minutes);
  get(tr, "trainer", "buffer_capacity", c.trainer.buffer_capacity);
  get(tr, "trainer", "retention_minutes", c.trainer.retention_minutes);
  get(tr, "trainer", "epochs", c.trainer.epochs);
  get(tr, "trainer", "seconds_per_sample", c.trainer.seconds_per_sample);

  const json& ad = section(j, "adapt");
  get(ad, "adapt", "alpha", c.adapt.alpha);
  get(ad, "adapt", "interval_steps", c.adapt.interval_steps);
  get(ad, "adapt", "snapshot_stride", c.adapt.snapshot_stride);
  get(ad, "adapt", "reservoir_size", c.adapt.reservoir_size);
  get(ad, "adapt", "tau_prune", c.adapt.tau_prune);
  get(ad, "adapt", "c_min", c.adapt.c_min);
  get(ad, "adapt", "c_max", c.adapt.c_max);
  get(ad, "adapt", "hot_fraction", c.adapt.hot_fraction);
  get(ad, "adapt", "initial_rank", c.adapt.initial_rank);
  get(ad, "adapt", "adapt_rank", c.adapt.adapt_rank);
  get(ad, "adapt", "prune", c.adapt.prune);

  const json& sy = section(j, "sync");
  get(sy, "sync", "interval_steps", c.sync.interval_steps);

  const json& net = section(j, "net");
  get(net, "net", "hop_latency_us", c.net.hop_latency_us);
  get(net, "net", "jitter_us", c.net.jitter_us);
  get(net, "net", "drop_probability", c.net.drop_probability);
  get(net, "net", "duplicate_probability", c.net.duplicate_probability);
  get(net, "net", "retransmit_timeout_us", c.net.retransmit_timeout_us);
  get(net, "net", "merge_us_per_entry", c.net.merge_us_per_entry);

  const json& sc = section(j, "scheduler");
  get(sc, "scheduler", "t_high_ms", c.scheduler.t_high_ms);
  get(sc, "scheduler", "t_low_ms", c.scheduler.t_low_ms);
  get(sc, "scheduler", "units", c.scheduler.units);
  get(sc, "scheduler", "min_inference", c.scheduler.min_inference);
  get(sc, "scheduler", "max_training", c.scheduler.max_training);
  get(sc, "scheduler", "t_mon_ms", c.scheduler.t_mon_ms);
  get(sc, "scheduler", "t_cycle_ms", c.scheduler.t_cycle_ms);
  get(sc, "scheduler", "min_samples", c.scheduler.min_samples);

  const json& lat = section(j, "latency");
  get(lat, "latency", "base_ms", c.latency.base_ms);
  get(lat, "latency", "load_coeff_ms", c.latency.load_coeff_ms);
  get(lat, "latency", "contention_ms", c.latency.contention_ms);
  get(lat, "latency", "sigma", c.latency.sigma);
  get(lat, "latency", "requests_per_window", c.latency.requests_per_window);

  if (j.contains("workload")) {
    c.workload = workload::spec_from_json(j["workload"], "workload");
    if (!j["workload"].contains("seed")) c.workload.seed = c.seed;
  } else {
    c.workload.seed = c.seed;
  }
  c.sync.ranks = c.nodes;
  c.net.bandwidth_gbps = c.bandwidth_gbps;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  json j;
  j["scenario"] = c.scenario;
  j["strategy"] = to_string(c.strategy);
  j["quick_fraction"] = c.quick_fraction;
  j["nodes"] = c.nodes;
  j["cadence_minutes"] = c.cadence_minutes;
  j["full_sync_minutes"] = c.full_sync_minutes;
  j["eval_window_minutes"] = c.eval_window_minutes;
  j["bandwidth_gbps"] = c.bandwidth_gbps;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["cluster"] = {{"lag_minutes", c.cluster.lag_minutes}, {"noise", c.cluster.noise}};
  j["trainer"] = {{"learning_rate", c.trainer.learning_rate},
                  {"batch_size", c.trainer.batch_size},
                  {"window_minutes", c.trainer.window_minutes},
                  {"buffer_capacity", c.trainer.buffer_capacity},
                  {"retention_minutes", c.trainer.retention_minutes},
                  {"epochs", c.trainer.epochs},
                  {"seconds_per_sample", c.trainer.seconds_per_sample}};
  j["adapt"] = {{"alpha", c.adapt.alpha},
                {"interval_steps", c.adapt.interval_steps},
                {"snapshot_stride", c.adapt.snapshot_stride},
                {"reservoir_size", c.adapt.reservoir_size},
                {"tau_prune", c.adapt.tau_prune},
                {"c_min", c.adapt.c_min},
                {"c_max", c.adapt.c_max},
                {"hot_fraction", c.adapt.hot_fraction},
                {"initial_rank", c.adapt.initial_rank},
                {"adapt_rank", c.adapt.adapt_rank},
                {"prune", c.adapt.prune}};
  j["sync"] = {{"interval_steps", c.sync.interval_steps}};
  j["net"] = {{"hop_latency_us", c.net.hop_latency_us},
              {"jitter_us", c.net.jitter_us},
              {"drop_probability", c.net.drop_probability},
              {"duplicate_probability", c.net.duplicate_probability},
              {"retransmit_timeout_us", c.net.retransmit_timeout_us},
              {"merge_us_per_entry", c.net.merge_us_per_entry}};
  j["scheduler"] = {{"t_high_ms", c.scheduler.t_high_ms},
                    {"t_low_ms", c.scheduler.t_low_ms},
                    {"units", c.scheduler.units},
                    {"min_inference", c.scheduler.min_inference},
                    {"max_training", c.scheduler.max_training},
                    {"t_mon_ms", c.scheduler.t_mon_ms},
                    {"t_cycle_ms", c.scheduler.t_cycle_ms},
                    {"min_samples", c.scheduler.min_samples}};
  j["latency"] = {{"base_ms", c.latency.base_ms},
                  {"load_coeff_ms", c.latency.load_coeff_ms},
                  {"contention_ms", c.latency.contention_ms},
                  {"sigma", c.latency.sigma},
                  {"requests_per_window", c.latency.requests_per_window}};
  j["workload"] = workload::to_json(c.workload);
  return j;
}

}  // namespace liveupdate::harness
