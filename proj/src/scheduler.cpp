// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "liveupdate/config_error.hpp"

namespace liveupdate::sched {

void SchedulerConfig::validate() const {
  if (!(t_low_ms < t_high_ms)) throw ConfigError("scheduler.t_low_ms", "must be below t_high_ms");
  if (units == 0) throw ConfigError("scheduler.units", "must be >= 1");
  if (min_inference == 0) throw ConfigError("scheduler.min_inference", "must be >= 1");
  if (min_inference > units) throw ConfigError("scheduler.min_inference", "exceeds units");
  if (max_training > units) throw ConfigError("scheduler.max_training", "exceeds units");
  if (!(t_mon_ms > 0.0)) throw ConfigError("scheduler.t_mon_ms", "must be positive");
  if (!(t_cycle_ms > 0.0)) throw ConfigError("scheduler.t_cycle_ms", "must be positive");
  if (min_samples == 0) throw ConfigError("scheduler.min_samples", "must be >= 1");
}

PartitionState PartitionState::initial(const SchedulerConfig& c) {
  c.validate();
  const std::size_t n_inf =
      std::max(c.min_inference, c.units > c.max_training ? c.units - c.max_training : 0);
  PartitionState s;
  for (std::size_t u = 0; u < c.units; ++u) {
    (u < n_inf ? s.inference : s.training).insert(static_cast<int>(u));
  }
  return s;
}

bool PartitionState::valid(const SchedulerConfig& c) const {
  for (int u : inference) {
    if (training.count(u)) return false;
  }
  if (inference.size() + training.size() != c.units) return false;
  for (int u : inference) {
    if (u < 0 || static_cast<std::size_t>(u) >= c.units) return false;
  }
  for (int u : training) {
    if (u < 0 || static_cast<std::size_t>(u) >= c.units) return false;
  }
  return inference.size() >= c.min_inference && training.size() <= c.max_training;
}

P99 measure_p99(std::span<const double> samples, double previous, std::size_t min_samples) {
  if (samples.size() < std::max<std::size_t>(min_samples, 1)) return {previous, true};
  std::vector<double> v(samples.begin(), samples.end());
  const auto n = v.size();
  // ceil(0.99 n) in integers.
  const std::size_t rank = (99 * n + 99) / 100;
  auto nth = v.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(v.begin(), nth, v.end());
  return {*nth, false};
}

StepResult step(const PartitionState& state, double p99, const SchedulerConfig& c) {
  StepResult r{state, 0};
  if (p99 >= c.t_high_ms) {
    if (!r.state.training.empty()) {
      const int u = *r.state.training.begin();
      r.state.training.erase(u);
      r.state.inference.insert(u);
      r.moved = +1;
    }
  } else if (p99 <= c.t_low_ms) {
    if (r.state.training.size() < c.max_training && r.state.inference.size() > c.min_inference) {
      const int u = *r.state.inference.rbegin();
      r.state.inference.erase(u);
      r.state.training.insert(u);
      r.moved = -1;
    }
  }
  return r;
}

double DefaultLatencyModel::median_ms(const LatencyInput& in) const {
  const double n_inf = static_cast<double>(std::max<std::size_t>(in.n_inference, 1));
  const double share =
      in.units ? static_cast<double>(in.n_training) / static_cast<double>(in.units) : 0.0;
  return base_ms + load_coeff_ms * in.load / n_inf + contention_ms * share;
}

double DefaultLatencyModel::p99_ms(const LatencyInput& in) const {
  // z_0.99 of the standard normal.
  return median_ms(in) * std::exp(2.3263478740408408 * sigma);
}

void DefaultLatencyModel::operator()(const LatencyInput& in, std::mt19937_64& rng,
                                     std::vector<double>& out) const {
  const auto count = static_cast<std::size_t>(
      std::llround(static_cast<double>(requests_per_window) * std::max(in.load, 0.05)));
  const double m = median_ms(in);
  std::normal_distribution<double> n01(0.0, 1.0);
  out.clear();
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(m * std::exp(sigma * n01(rng)));
}

Controller::Controller(SchedulerConfig config, SpscQueue<double>& telemetry,
                       AffinityTable& affinity)
    : config_(std::move(config)),
      telemetry_(telemetry),
      affinity_(affinity),
      state_(*affinity.snapshot()) {
  config_.validate();
  if (!state_.valid(config_)) throw std::invalid_argument("initial partition violates bounds");
}

void Controller::drain() {
  while (auto v = telemetry_.try_pop()) window_.push_back(*v);
}

TraceRow Controller::run_cycle() {
  drain();
  const P99 p = measure_p99(window_, last_p99_, config_.min_samples);
  window_.clear();
  TraceRow row;
  row.cycle = cycle_++;
  row.p99_ms = p.ms;
  row.held = p.held;
  if (!p.held) {
    last_p99_ = p.ms;
    StepResult r = step(state_, p.ms, config_);
    row.moved = r.moved;
    if (r.moved != 0) {
      state_ = std::move(r.state);
      affinity_.publish(state_);
    }
  }
  row.n_inference = state_.inference.size();
  row.n_training = state_.training.size();
  return row;
}

std::vector<TraceRow> run_control_loop(const LatencyModel& model, const SchedulerConfig& config,
                                       const std::function<double(std::size_t)>& load,
                                       std::size_t horizon, std::uint64_t seed) {
  if (horizon == 0) throw std::invalid_argument("horizon must be >= 1 cycle");
  AffinityTable affinity(PartitionState::initial(config));
  std::vector<double> window;
  std::mt19937_64 rng(seed);
  std::vector<TraceRow> trace;
  trace.reserve(horizon);
  SpscQueue<double> queue(4096);
  Controller controller(config, queue, affinity);
  for (std::size_t c = 0; c < horizon; ++c) {
    const auto snap = affinity.snapshot();
    LatencyInput in{snap->inference.size(), snap->training.size(), config.units, load(c)};
    model(in, rng, window);
    for (double v : window) {
      while (!queue.try_push(v)) controller.drain();
    }
    TraceRow row = controller.run_cycle();
    row.cycle = c;
    trace.push_back(row);
  }
  return trace;
}

void write_trace_header(std::ostream& out) { out << "cycle,p99_ms,n_inf,n_train,moved\n"; }

void write_trace_csv(std::ostream& out, const TraceRow& r) {
  out << r.cycle << ',' << r.p99_ms << ',' << r.n_inference << ',' << r.n_training << ','
      << r.moved << '\n';
}

}  // namespace liveupdate::sched
