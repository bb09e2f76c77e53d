// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <vector>

namespace liveupdate::sched {

struct SchedulerConfig {
  double t_high_ms = 10.0;
  double t_low_ms = 6.0;
  std::size_t units = 8;
  std::size_t min_inference = 2;  // m_inf
  std::size_t max_training = 4;   // M_train
  // Monitoring window and adjustment period, simulated milliseconds.
  double t_mon_ms = 1000.0;
  double t_cycle_ms = 1000.0;
  // Latency samples needed for a fresh p99 estimate.
  std::size_t min_samples = 100;

  // Throws ConfigError ("scheduler.<field>").
  void validate() const;
};

// Split of compute units between serving and training.
struct PartitionState {
  std::set<int> inference;
  std::set<int> training;

  // max(m_inf, units - M_train) units serve, the rest train.
  static PartitionState initial(const SchedulerConfig& config);
  bool valid(const SchedulerConfig& config) const;
  bool operator==(const PartitionState&) const = default;
};

struct P99 {
  double ms = 0.0;
  // Fewer than min_samples were available; `ms` is the previous value.
  bool held = false;
};

// Nearest-rank 99th percentile: the ceil(0.99 n)-th smallest sample.
P99 measure_p99(std::span<const double> samples_ms, double previous_ms,
                std::size_t min_samples = 100);

// +1: one unit moved training -> inference; -1: inference -> training.
struct StepResult {
  PartitionState state;
  int moved = 0;
};

StepResult step(const PartitionState& state, double p99_ms, const SchedulerConfig& config);

// Conditions a latency model sees for one monitoring window.
struct LatencyInput {
  std::size_t n_inference = 0;
  std::size_t n_training = 0;
  std::size_t units = 0;
  double load = 1.0;
};

// Fills `out` with per-request latencies (ms) for one window.
using LatencyModel =
    std::function<void(const LatencyInput&, std::mt19937_64&, std::vector<double>& out)>;

// latency = (base + load_coeff * load / n_inf + contention * n_train / units)
//           * exp(N(0, sigma^2))
struct DefaultLatencyModel {
  double base_ms = 2.0;
  double load_coeff_ms = 20.0;
  double contention_ms = 3.0;
  double sigma = 0.05;
  // Requests per window at load 1.0.
  std::size_t requests_per_window = 2000;

  double median_ms(const LatencyInput& in) const;
  double p99_ms(const LatencyInput& in) const;
  void operator()(const LatencyInput& in, std::mt19937_64& rng, std::vector<double>& out) const;
};

struct TraceRow {
  std::size_t cycle = 0;
  double p99_ms = 0.0;
  bool held = false;
  std::size_t n_inference = 0;
  std::size_t n_training = 0;
  int moved = 0;
  bool operator==(const TraceRow&) const = default;
};

// Bounded single-producer / single-consumer ring.
template <typename T>
class SpscQueue {
 public:
  explicit SpscQueue(std::size_t capacity) : slots_(capacity + 1) {}

  bool try_push(const T& v) {
    const std::size_t tail = tail_.load(std::memory_order_relaxed);
    const std::size_t next = (tail + 1) % slots_.size();
    if (next == head_.load(std::memory_order_acquire)) return false;
    slots_[tail] = v;
    tail_.store(next, std::memory_order_release);
    return true;
  }

  std::optional<T> try_pop() {
    const std::size_t head = head_.load(std::memory_order_relaxed);
    if (head == tail_.load(std::memory_order_acquire)) return std::nullopt;
    T v = slots_[head];
    head_.store((head + 1) % slots_.size(), std::memory_order_release);
    return v;
  }

  std::size_t capacity() const { return slots_.size() - 1; }

 private:
  std::vector<T> slots_;
  std::atomic<std::size_t> head_{0};
  std::atomic<std::size_t> tail_{0};
};

// Published partition. Readers get an immutable snapshot; the controller
// swaps in a new one after each move.
class AffinityTable {
 public:
  explicit AffinityTable(PartitionState initial)
      : current_(std::make_shared<const PartitionState>(std::move(initial))) {}

  std::shared_ptr<const PartitionState> snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
  }
  void publish(PartitionState next) {
    auto p = std::make_shared<const PartitionState>(std::move(next));
    std::lock_guard lock(mu_);
    current_ = std::move(p);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PartitionState> current_;
};

// Measure -> step -> publish, fed by a telemetry queue.
class Controller {
 public:
  Controller(SchedulerConfig config, SpscQueue<double>& telemetry, AffinityTable& affinity);

  // Moves queued samples into the current monitoring window.
  void drain();
  // Closes the window: measure, step, publish.
  TraceRow run_cycle();
  const PartitionState& state() const { return state_; }

 private:
  SchedulerConfig config_;
  SpscQueue<double>& telemetry_;
  AffinityTable& affinity_;
  PartitionState state_;
  double last_p99_ = 0.0;
  std::size_t cycle_ = 0;
  std::vector<double> window_;
};

// Simulated loop: each cycle draws one window of latencies from `model` under
// the current partition and `load(cycle)`, pushes them through the telemetry
// queue and runs one controller cycle.
std::vector<TraceRow> run_control_loop(const LatencyModel& model, const SchedulerConfig& config,
                                       const std::function<double(std::size_t)>& load,
                                       std::size_t horizon_cycles, std::uint64_t seed);

void write_trace_header(std::ostream& out);
void write_trace_csv(std::ostream& out, const TraceRow& row);

}  // namespace liveupdate::sched
