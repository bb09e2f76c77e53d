// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "liveupdate/model_core.hpp"
#include "liveupdate/sample.hpp"
#include "liveupdate/tower.hpp"
#include "liveupdate/workload.hpp"

namespace liveupdate::adapt {
struct AdaptState;
}

namespace liveupdate::trainer {

// Embedding tables with LoRA overlays feeding a frozen dense tower. The tower
// input is the concatenation of each table's pooled embedding and the dense
// features.
class ToyDlrm {
 public:
  ToyDlrm(std::vector<std::unique_ptr<AdaptedTable>> tables, DenseTower tower,
          std::size_t dense_features);

  // Base weights per table; every adapter starts with no rows and a random
  // orthonormal B of the given rank.
  static ToyDlrm create(const std::vector<std::vector<float>>& base_weights, std::size_t dim,
                        DenseTower tower, std::size_t dense_features, std::size_t rank,
                        std::span<const std::size_t> capacities, std::uint64_t seed);

  std::size_t table_count() const { return tables_.size(); }
  std::size_t dim() const { return tables_.front()->dim(); }
  std::size_t dense_features() const { return dense_features_; }
  AdaptedTable& table(std::size_t t) { return *tables_.at(t); }
  const AdaptedTable& table(std::size_t t) const { return *tables_.at(t); }
  const DenseTower& tower() const { return tower_; }

 private:
  std::vector<std::unique_ptr<AdaptedTable>> tables_;
  DenseTower tower_;
  std::size_t dense_features_;
};

// Serving-path click logit and probability (pooled float lookups).
double logit(const ToyDlrm& model, const Sample& s);
// Per-sample probabilities. Throws std::invalid_argument on an empty batch and
// std::out_of_range on an invalid id.
std::vector<double> forward(const ToyDlrm& model, std::span<const Sample> batch);

// Gradients of the mean BCE of a batch, in double precision.
struct TableGradients {
  // dL/dA[i] (length k) for every touched index, hot or not.
  std::unordered_map<Index, std::vector<double>> a;
  // dL/dB (k x d, row-major).
  std::vector<double> b;
  // dL/dE[i] (length d) for every touched index.
  std::unordered_map<Index, std::vector<double>> rows;
  // Every id occurrence in the batch, in batch order.
  std::vector<Index> touched;
};

struct Gradients {
  double loss = 0.0;
  std::vector<TableGradients> tables;
};

Gradients compute_gradients(const ToyDlrm& model, std::span<const Sample> batch);

struct TrainStepStats {
  std::size_t step = 0;
  std::size_t batch_size = 0;
  double loss = 0.0;
  bool aborted = false;
  std::vector<std::size_t> touched;   // distinct indices per table
  std::vector<std::size_t> skipped;   // new rows rejected by capacity
  double grad_norm_a = 0.0;
  double grad_norm_b = 0.0;
  // Indices whose A row actually changed, per table (sorted).
  std::vector<std::vector<Index>> modified;
  std::vector<bool> b_modified;
};

// Optional per-table adaptation state fed by train_step.
struct TrainHooks {
  std::vector<adapt::AdaptState*> adapt;
};

// One SGD step on A and B. Updates of each table are published under a single
// write lock. Rows are only inserted when their update is nonzero, and new rows
// beyond capacity are skipped. A non-finite loss aborts the step without
// touching any parameter.
TrainStepStats train_step(ToyDlrm& model, std::span<const Sample> batch, double learning_rate,
                          std::size_t step = 0, const TrainHooks* hooks = nullptr);

// Uniform draws with replacement from buffer entries newer than
// now - min(window, retention). Empty when no entry qualifies.
std::vector<Sample> sample_batch(const workload::RingBuffer& buffer, std::size_t batch_size,
                                 double window, double now, std::mt19937_64& rng);

void write_stats_header(std::ostream& out);
void write_stats_csv(std::ostream& out, const TrainStepStats& stats);

}  // namespace liveupdate::trainer
