// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "liveupdate/sample.hpp"
#include "liveupdate/tower.hpp"

namespace liveupdate::workload {

// Rank-frequency sampler: P(rank r) proportional to (r + 1)^-s, r in [0, n).
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent);

  std::size_t size() const { return cdf_.size(); }
  double exponent() const { return exponent_; }
  std::size_t sample(std::mt19937_64& rng) const;
  // P(rank <= r).
  double cdf(std::size_t r) const { return cdf_[r]; }

 private:
  double exponent_;
  std::vector<double> cdf_;
};

// Share of probability mass on the top ceil(fraction * n) ranks.
double top_share(std::size_t n, double exponent, double fraction);

// Exponent whose top `fraction` of ranks carries `target_share` of accesses,
// found by bisection on top_share().
double calibrate_zipf_exponent(std::size_t n, double fraction = 0.1,
                               double target_share = 0.938);

struct WorkloadSpec {
  std::vector<std::size_t> table_rows{10000, 10000};
  std::size_t dim = 16;
  std::size_t dense_features = 4;
  std::size_t max_ids_per_table = 1;
  // Unset: calibrated so the top 10% of ids receive 93.8% of accesses.
  std::optional<double> zipf_exponent;
  double rate_per_minute = 4000.0;
  double rate_jitter = 0.05;
  double horizon_minutes = 120.0;
  // Preference shifts: at each time the planted model's embeddings move along
  // `drift_rank` shared directions with per-id Gaussian loadings.
  std::vector<double> drift_minutes;
  double drift_magnitude = 0.5;
  double drift_fraction = 1.0;
  std::size_t drift_rank = 3;
  double embedding_scale = 0.5;
  std::size_t tower_hidden = 8;
  std::uint64_t seed = 1;

  std::size_t table_count() const { return table_rows.size(); }
  double resolved_exponent(std::size_t table) const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// The planted click model the stream's labels are drawn from: a ToyDlrm-shaped
// teacher whose embedding tables shift at the drift times.
class GroundTruth {
 public:
  explicit GroundTruth(const WorkloadSpec& spec);

  const WorkloadSpec& spec() const { return spec_; }
  const DenseTower& tower() const { return tower_; }

  // Teacher table t as of `minute` (all drift events at or before it applied).
  std::vector<float> table_at(std::size_t t, double minute) const;

  // Click logit of `s` under the given teacher tables.
  double logit(const Sample& s, std::span<const std::vector<float>> tables) const;

 private:
  struct Shift {
    double minute;
    std::size_t table;
    std::vector<float> loadings;    // rows x rank
    std::vector<float> directions;  // rank x dim
  };

  void apply_shift(const Shift& shift, std::vector<float>& table) const;

  WorkloadSpec spec_;
  DenseTower tower_;
  std::vector<std::vector<float>> initial_;
  std::vector<Shift> shifts_;
  friend class StreamGenerator;
};

// Deterministic request stream: Zipf ids through a fixed rank -> id
// permutation per table, Gaussian dense features, labels from GroundTruth.
class StreamGenerator {
 public:
  explicit StreamGenerator(const WorkloadSpec& spec);

  std::optional<Sample> next();
  const GroundTruth& truth() const { return truth_; }
  // Rank -> id mapping of table t.
  const std::vector<Index>& permutation(std::size_t t) const { return perms_[t]; }

 private:
  void start_minute();

  WorkloadSpec spec_;
  GroundTruth truth_;
  std::vector<ZipfSampler> samplers_;
  std::vector<std::vector<Index>> perms_;
  std::vector<std::vector<float>> current_;
  std::size_t next_shift_ = 0;
  std::mt19937_64 rng_;
  long minute_ = -1;
  std::size_t in_minute_ = 0;
  std::size_t minute_count_ = 0;
};

std::vector<Sample> generate_stream(const WorkloadSpec& spec);

// Bounded FIFO of logged requests. Entries older than the retention window
// (relative to the newest ingest or `now`) are evicted oldest-first.
class RingBuffer {
 public:
  explicit RingBuffer(std::size_t capacity, double retention_minutes = 10.0);

  // Appends `s`, evicting by capacity and retention. Throws
  // std::invalid_argument if timestamps go backwards.
  void ingest(Sample s);
  // Removes entries aged more than the retention window; returns the count.
  std::size_t evict_expired(double now);

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::size_t capacity() const { return slots_.size(); }
  double retention() const { return retention_; }
  // 0 is the oldest entry.
  const Sample& operator[](std::size_t i) const { return slots_[(head_ + i) % slots_.size()]; }
  // Position of the first entry with timestamp > t (size() if none).
  std::size_t first_after(double t) const;

 private:
  void pop_front();

  std::vector<Sample> slots_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  double retention_;
};

// Mutex-guarded ring buffer shared by one ingesting producer and one sampling
// consumer.
class SharedRingBuffer {
 public:
  explicit SharedRingBuffer(std::size_t capacity, double retention_minutes = 10.0)
      : buf_(capacity, retention_minutes) {}

  void ingest(Sample s) {
    std::lock_guard lock(mu_);
    buf_.ingest(std::move(s));
  }
  template <typename Fn>
  decltype(auto) read(Fn&& fn) const {
    std::lock_guard lock(mu_);
    return fn(buf_);
  }

 private:
  mutable std::mutex mu_;
  RingBuffer buf_;
};

// Newline-delimited JSON traces. The optional first line carries the workload settings:
// {"workload_spec": {...}}; each further line is
// {"ts": minutes, "ids": [[table, id], ...], "dense": [...], "label": 0|1}.
void write_trace(std::ostream& out, std::span<const Sample> samples,
                 const WorkloadSpec* spec = nullptr);
void write_trace(const std::string& path, std::span<const Sample> samples,
                 const WorkloadSpec* spec = nullptr);

struct Trace {
  std::optional<WorkloadSpec> spec;
  std::vector<Sample> samples;
};

Trace read_trace(std::istream& in);
Trace read_trace(const std::string& path);

}  // namespace liveupdate::workload
