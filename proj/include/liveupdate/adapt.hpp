// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <future>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "liveupdate/lowrank.hpp"
#include "liveupdate/model_core.hpp"

namespace liveupdate::adapt {

struct AdaptConfig {
  double alpha = 0.8;
  std::size_t interval_steps = 128;
  // Gradient snapshots per interval are taken every `snapshot_stride` steps;
  // each contributes one spectrum to the rank average.
  std::size_t snapshot_stride = 32;
  std::size_t reservoir_size = 4096;
  // Initial pruning threshold; recalibrated every cycle.
  std::size_t tau_prune = 1;
  // 0 selects the defaults |V| / 50 and |V|.
  std::size_t c_min = 0;
  std::size_t c_max = 0;
  // Share of the vocabulary treated as hot: sets the tau boundary rank and the
  // initial capacity.
  double hot_fraction = 0.1;
  std::size_t initial_rank = 8;
  bool adapt_rank = true;
  bool prune = true;

  // Copy with c_min / c_max resolved against |V|.
  AdaptConfig resolved(std::size_t vocab) const;
  std::size_t initial_capacity(std::size_t vocab) const;
  // Throws ConfigError ("adapt.<field>").
  void validate(std::size_t vocab, std::size_t dim) const;
};

// Uniform reservoir (Algorithm R) over embedding-row gradients dL/dE_i.
// Closing a snapshot turns the held rows into one spectrum and starts over.
class GradientReservoir {
 public:
  struct Entry {
    std::size_t step;
    std::vector<double> row;
  };

  GradientReservoir(std::size_t dim, std::size_t capacity, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return rows_.size(); }
  // Rows offered since the last snapshot closed.
  std::uint64_t seen() const { return seen_; }
  const std::vector<Entry>& rows() const { return rows_; }

  void offer(std::size_t step, std::span<const double> gradient);
  lowrank::Matrix snapshot() const;
  // Appends the spectrum of the held rows to the history and empties the
  // reservoir. Returns false (nothing recorded) when it holds no rows.
  bool close_snapshot();

  const std::vector<lowrank::Spectrum>& history() const { return history_; }
  void clear_history() { history_.clear(); }

 private:
  std::size_t dim_;
  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::uint64_t seen_ = 0;
  std::vector<Entry> rows_;
  std::vector<lowrank::Spectrum> history_;
};

// Per-index update and access counts over the last `window_steps` recorded
// steps. Each occurrence in a step counts once.
class UsageTracker {
 public:
  using Counts = std::unordered_map<Index, std::uint64_t>;

  explicit UsageTracker(std::size_t window_steps);

  void record_step(std::span<const Index> updated, std::span<const Index> accessed);

  std::size_t window() const { return window_; }
  std::size_t steps() const { return steps_.size(); }
  std::uint64_t update_count(Index i) const;
  std::uint64_t access_count(Index i) const;
  const Counts& update_counts() const { return updates_; }
  const Counts& access_counts() const { return accesses_; }
  std::uint64_t total_accesses() const { return total_accesses_; }
  void clear();

 private:
  struct Step {
    std::vector<Index> updated;
    std::vector<Index> accessed;
  };
  static void add(Counts& c, std::span<const Index> ids);
  static void remove(Counts& c, std::span<const Index> ids);

  std::size_t window_;
  std::deque<Step> steps_;
  Counts updates_;
  Counts accesses_;
  std::uint64_t total_accesses_ = 0;
};

struct RankDecision {
  std::size_t rank;
  // No spectra were available; the current rank is kept.
  bool noop;
};

// ceil(mean of select_rank over the spectra), clamped to [1, max_rank].
RankDecision rank_adaptation(std::span<const lowrank::Spectrum> history, double alpha,
                             std::size_t current_rank, std::size_t max_rank);
RankDecision rank_adaptation(const GradientReservoir& reservoir, const AdaptConfig& config,
                             std::size_t current_rank);

// Access count of the index at the top-`hot_fraction` boundary rank (untracked
// indices count zero), floored at 1. An empty tracker keeps `current`.
std::size_t update_tau(const UsageTracker& tracker, std::size_t vocab, double hot_fraction,
                       std::size_t current);

struct AdaptReport {
  std::size_t step = 0;
  std::size_t old_rank = 0;
  std::size_t new_rank = 0;
  std::size_t old_capacity = 0;
  std::size_t new_capacity = 0;
  std::size_t pruned_count = 0;
  std::vector<Index> folded_indices;
  std::size_t tau = 0;

  bool operator==(const AdaptReport&) const = default;
};

// Folds every hot index whose update count is below `tau` (except indices in
// `keep`, rows inserted after the counts were taken), then sets capacity to
// clamp(|active|, c_min, c_max), folding the least-updated rows if the adapter
// still exceeds it. Served values are unchanged.
AdaptReport prune_and_resize(const UsageTracker::Counts& update_counts, std::size_t tau,
                             std::size_t c_min, std::size_t c_max, EmbeddingTable& table,
                             LoraAdapter& adapter, HotIndexFilter& filter,
                             std::span<const Index> keep = {});

// Consistent copy of everything a cycle reads.
struct AdaptSnapshot {
  std::size_t step = 0;
  std::size_t vocab = 0;
  std::size_t dim = 0;
  std::size_t rank = 0;
  std::size_t capacity = 0;
  std::size_t tau = 0;
  std::vector<lowrank::Spectrum> spectra;
  UsageTracker tracker{1};
  std::vector<Index> hot;  // sorted
  lowrank::Matrix a_active;
  lowrank::Matrix b;
};

// Cycle result computed off the write path.
struct AdaptPlan {
  std::size_t step = 0;
  std::size_t old_rank = 0;
  std::size_t new_rank = 0;
  // Shrink: orthonormal d x new_rank basis; A' = A (B V), B' = V^T.
  lowrank::Matrix subspace;
  // Grow: (new_rank - old_rank) x d unit rows appended to B; A gains zero
  // columns so the product is unchanged.
  lowrank::Matrix growth;
  bool prune = false;
  std::size_t tau = 0;
  std::size_t c_min = 0;
  std::size_t c_max = 0;
  std::vector<Index> snapshot_hot;
  UsageTracker::Counts update_counts;
};

// Per-table controller state: counts, gradient rows and the current tau.
struct AdaptState {
  AdaptState(const AdaptConfig& config, std::size_t vocab, std::size_t dim, std::uint64_t seed);

  AdaptConfig config;
  std::size_t vocab;
  UsageTracker tracker;
  GradientReservoir reservoir;
  std::size_t tau;
  std::uint64_t seed;
  std::uint64_t cycles = 0;

  // Call after every training step; closes a gradient snapshot on stride
  // boundaries. Returns true when `step + 1` ends an interval.
  bool end_step(std::size_t step);
};

AdaptSnapshot take_snapshot(const AdaptState& state, const AdaptedTable& table, std::size_t step);
AdaptPlan plan_cycle(const AdaptSnapshot& snapshot, const AdaptConfig& config, std::uint64_t seed);
// Applies rank change, then pruning, under the table's write lock.
AdaptReport apply_plan(const AdaptPlan& plan, AdaptedTable& table);

// Snapshot, plan and apply in one call; updates state.tau and clears the
// spectrum history.
AdaptReport run_adaptation_cycle(AdaptState& state, AdaptedTable& table, std::size_t step);

// Runs plan_cycle on a background thread while training continues.
class BackgroundCycle {
 public:
  void start(AdaptState& state, const AdaptedTable& table, std::size_t step);
  bool pending() const { return future_.valid(); }
  bool ready() const;
  // Waits for the plan, applies it and updates `state`.
  AdaptReport finish(AdaptState& state, AdaptedTable& table);

 private:
  std::future<AdaptPlan> future_;
};

// Fraction of dense parameters the adapter occupies:
// (capacity * rank + rank * d) / (|V| * d).
double memory_proxy(std::size_t capacity, std::size_t rank, std::size_t vocab, std::size_t dim);

void write_report_header(std::ostream& out);
void write_report_csv(std::ostream& out, const AdaptReport& report);

}  // namespace liveupdate::adapt
