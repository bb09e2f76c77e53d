// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace liveupdate {

using Index = std::uint64_t;

// A served embedding row. Values are float32, the precision of the tables;
// every product that produced them was accumulated in double and rounded once.
struct EmbeddingVector {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  float operator[](std::size_t j) const { return values[j]; }
  bool operator==(const EmbeddingVector&) const = default;
};

// Frozen base weights W (rows x dim, row-major). `version` counts full-parameter
// updates and only ever increases.
class EmbeddingTable {
 public:
  EmbeddingTable(std::uint32_t table_id, std::size_t rows, std::size_t dim);
  EmbeddingTable(std::uint32_t table_id, std::size_t rows, std::size_t dim,
                 std::vector<float> weights);

  std::uint32_t id() const { return id_; }
  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t version() const { return version_; }

  std::span<const float> row(Index i) const;
  std::span<float> mutable_row(Index i);
  const std::vector<float>& weights() const { return weights_; }

  // Replaces every weight and bumps the version. Throws std::invalid_argument
  // on a size mismatch or non-finite entries.
  void replace_weights(std::vector<float> weights);

 private:
  std::uint32_t id_;
  std::size_t rows_;
  std::size_t dim_;
  std::vector<float> weights_;
  std::uint64_t version_ = 0;
};

// Sparse LoRA factors: A is keyed by embedding index (one length-`rank` row per
// hot index), B is a dense rank x dim matrix.
class LoraAdapter {
 public:
  using RowMap = std::unordered_map<Index, std::vector<float>>;

  // `max_rows` is |V|; capacity is clamped to it.
  LoraAdapter(std::size_t dim, std::size_t rank, std::size_t capacity,
              std::size_t max_rows);

  std::size_t dim() const { return dim_; }
  std::size_t rank() const { return rank_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t max_rows() const { return max_rows_; }
  std::size_t size() const { return rows_.size(); }

  bool contains(Index i) const { return rows_.count(i) != 0; }
  // Empty span when `i` holds no row.
  std::span<const float> row(Index i) const;
  std::span<const float> b() const { return b_; }
  const RowMap& rows() const { return rows_; }
  std::vector<Index> sorted_indices() const;

  // Inserts or overwrites A[i]. Returns false (and stores nothing) when `i` is
  // new and the adapter is already at capacity.
  bool set_row(Index i, std::span<const float> values);
  bool erase_row(Index i);
  void set_b(std::span<const float> values);

  // Capacity may not drop below the number of stored rows.
  void set_capacity(std::size_t capacity);

  // Installs factors of a different rank in one step.
  void reshape(std::size_t rank, RowMap rows, std::vector<float> b);

  // Drops every A row and zeroes B.
  void clear();

 private:
  static void check_finite(std::span<const float> values);

  std::size_t dim_;
  std::size_t rank_;
  std::size_t capacity_;
  std::size_t max_rows_;
  RowMap rows_;
  std::vector<float> b_;
};

class HotIndexFilter {
 public:
  bool is_hot(Index i) const { return hot_.count(i) != 0; }
  void insert(Index i) { hot_.insert(i); }
  void erase(Index i) { hot_.erase(i); }
  void clear() { hot_.clear(); }
  std::size_t size() const { return hot_.size(); }

  // True when the hot set is exactly the adapter's key set.
  bool matches(const LoraAdapter& adapter) const;

 private:
  std::unordered_set<Index> hot_;
};

// Serving-path row: W[i] + A[i]B for hot indices, W[i] otherwise.
// Throws std::out_of_range for i >= |V|.
EmbeddingVector lookup(const EmbeddingTable& table, const LoraAdapter& adapter,
                       const HotIndexFilter& filter, Index index);

// Mean of the per-index lookups. Throws std::invalid_argument on an empty list.
EmbeddingVector pooled_lookup(const EmbeddingTable& table,
                              const LoraAdapter& adapter,
                              const HotIndexFilter& filter,
                              std::span<const Index> indices);

// Full-parameter replacement: new base weights, version + 1, adapter cleared.
void apply_full_update(EmbeddingTable& table, LoraAdapter& adapter,
                       HotIndexFilter& filter, std::vector<float> new_weights);

// Moves A[i]B into W[i] and evicts i. The served value of i is unchanged
// bit for bit. Returns false (no-op) when i is not hot.
bool fold_row(EmbeddingTable& table, LoraAdapter& adapter,
              HotIndexFilter& filter, Index index);

// Dense (W + scatter(A) B) restricted to one row, in double precision.
void accumulate_row(const EmbeddingTable& table, const LoraAdapter& adapter,
                    const HotIndexFilter& filter, Index index,
                    std::span<double> out);

// Table + adapter + filter behind a reader/writer lock. Lookups run
// concurrently; each mutation publishes atomically, so readers see either the
// old or the new value of a row, never a mix.
class AdaptedTable {
 public:
  AdaptedTable(EmbeddingTable table, LoraAdapter adapter);

  std::uint32_t id() const { return table_.id(); }
  std::size_t rows() const { return table_.rows(); }
  std::size_t dim() const { return table_.dim(); }

  EmbeddingVector lookup(Index index) const;
  EmbeddingVector pooled_lookup(std::span<const Index> indices) const;

  std::size_t rank() const;
  std::size_t capacity() const;
  std::size_t hot_count() const;
  std::uint64_t version() const;

  // Publishes a whole A row (marking it hot). False if rejected by capacity.
  bool publish_row(Index index, std::span<const float> values);
  void publish_b(std::span<const float> values);
  bool fold(Index index);
  void full_update(std::vector<float> new_weights);
  void set_capacity(std::size_t capacity);
  void reshape(std::size_t rank, LoraAdapter::RowMap rows,
               std::vector<float> b);

  // Runs `fn(table, adapter, filter)` under the shared lock.
  template <typename Fn>
  decltype(auto) read(Fn&& fn) const {
    std::shared_lock lock(mu_);
    return fn(table_, adapter_, filter_);
  }

  // Runs `fn(table, adapter, filter)` under the exclusive lock.
  template <typename Fn>
  decltype(auto) write(Fn&& fn) {
    std::unique_lock lock(mu_);
    return fn(table_, adapter_, filter_);
  }

 private:
  mutable std::shared_mutex mu_;
  EmbeddingTable table_;
  LoraAdapter adapter_;
  HotIndexFilter filter_;
};

// Binary checkpoint: "LUPD", format version, |V|, d, k, row count, base
// weights, (index, A row) pairs sorted by index, then B. Little-endian f32.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(std::ostream& out, const EmbeddingTable& table,
                     const LoraAdapter& adapter);
void save_checkpoint(const std::string& path, const EmbeddingTable& table,
                     const LoraAdapter& adapter);

struct Checkpoint {
  EmbeddingTable table;
  LoraAdapter adapter;
  HotIndexFilter filter;
};

// The restored adapter's capacity is max(row count, `capacity`), with
// `capacity` = 0 meaning |V|. Throws std::runtime_error on malformed input.
Checkpoint load_checkpoint(std::istream& in, std::uint32_t table_id = 0,
                           std::size_t capacity = 0);
Checkpoint load_checkpoint(const std::string& path, std::uint32_t table_id = 0,
                           std::size_t capacity = 0);

}  // namespace liveupdate
