// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "liveupdate/byte_io.hpp"

namespace liveupdate {
namespace {

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

void check_index(const EmbeddingTable& table, Index index) {
  if (index >= table.rows()) {
    throw std::out_of_range("embedding index " + std::to_string(index) +
                            " out of range for table of " +
                            std::to_string(table.rows()) + " rows");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::uint32_t table_id, std::size_t rows,
                               std::size_t dim)
    : EmbeddingTable(table_id, rows, dim, std::vector<float>(rows * dim, 0.0f)) {}

EmbeddingTable::EmbeddingTable(std::uint32_t table_id, std::size_t rows,
                               std::size_t dim, std::vector<float> weights)
    : id_(table_id), rows_(rows), dim_(dim), weights_(std::move(weights)) {
  if (dim_ == 0) throw std::invalid_argument("embedding dim must be positive");
  if (weights_.size() != rows_ * dim_) {
    throw std::invalid_argument("weights size does not match rows x dim");
  }
  if (!all_finite(weights_)) throw std::invalid_argument("non-finite weights");
}

std::span<const float> EmbeddingTable::row(Index i) const {
  check_index(*this, i);
  return {weights_.data() + i * dim_, dim_};
}

std::span<float> EmbeddingTable::mutable_row(Index i) {
  check_index(*this, i);
  return {weights_.data() + i * dim_, dim_};
}

void EmbeddingTable::replace_weights(std::vector<float> weights) {
  if (weights.size() != rows_ * dim_) {
    throw std::invalid_argument("full update has " + std::to_string(weights.size()) +
                                " weights, expected " + std::to_string(rows_ * dim_));
  }
  if (!all_finite(weights)) throw std::invalid_argument("non-finite weights");
  weights_ = std::move(weights);
  ++version_;
}

// ---------------------------------------------------------------------------
// LoraAdapter

LoraAdapter::LoraAdapter(std::size_t dim, std::size_t rank, std::size_t capacity,
                         std::size_t max_rows)
    : dim_(dim),
      rank_(rank),
      capacity_(std::min(capacity, max_rows)),
      max_rows_(max_rows),
      b_(rank * dim, 0.0f) {
  if (rank_ < 1 || rank_ > dim_) {
    throw std::invalid_argument("adapter rank must be in [1, dim]");
  }
}

void LoraAdapter::check_finite(std::span<const float> values) {
  if (!all_finite(values)) throw std::invalid_argument("non-finite adapter values");
}

std::span<const float> LoraAdapter::row(Index i) const {
  auto it = rows_.find(i);
  if (it == rows_.end()) return {};
  return it->second;
}

std::vector<Index> LoraAdapter::sorted_indices() const {
  std::vector<Index> out;
  out.reserve(rows_.size());
  for (const auto& [i, _] : rows_) out.push_back(i);
  std::sort(out.begin(), out.end());
  return out;
}

bool LoraAdapter::set_row(Index i, std::span<const float> values) {
  if (values.size() != rank_) throw std::invalid_argument("A row length != rank");
  if (i >= max_rows_) throw std::out_of_range("adapter row index out of range");
  check_finite(values);
  auto it = rows_.find(i);
  if (it != rows_.end()) {
    std::copy(values.begin(), values.end(), it->second.begin());
    return true;
  }
  if (rows_.size() >= capacity_) return false;
  rows_.emplace(i, std::vector<float>(values.begin(), values.end()));
  return true;
}

bool LoraAdapter::erase_row(Index i) { return rows_.erase(i) != 0; }

void LoraAdapter::set_b(std::span<const float> values) {
  if (values.size() != rank_ * dim_) throw std::invalid_argument("B size != rank x dim");
  check_finite(values);
  std::copy(values.begin(), values.end(), b_.begin());
}

void LoraAdapter::set_capacity(std::size_t capacity) {
  capacity = std::min(capacity, max_rows_);
  if (capacity < rows_.size()) {
    throw std::invalid_argument("capacity below current row count");
  }
  capacity_ = capacity;
}

void LoraAdapter::reshape(std::size_t rank, RowMap rows, std::vector<float> b) {
  if (rank < 1 || rank > dim_) throw std::invalid_argument("adapter rank must be in [1, dim]");
  if (b.size() != rank * dim_) throw std::invalid_argument("B size != rank x dim");
  if (rows.size() > capacity_) throw std::invalid_argument("reshape exceeds capacity");
  check_finite(b);
  for (const auto& [i, r] : rows) {
    if (r.size() != rank) throw std::invalid_argument("A row length != rank");
    if (i >= max_rows_) throw std::out_of_range("adapter row index out of range");
    check_finite(r);
  }
  rank_ = rank;
  rows_ = std::move(rows);
  b_ = std::move(b);
}

void LoraAdapter::clear() {
  rows_.clear();
  std::fill(b_.begin(), b_.end(), 0.0f);
}

bool HotIndexFilter::matches(const LoraAdapter& adapter) const {
  if (hot_.size() != adapter.size()) return false;
  return std::all_of(hot_.begin(), hot_.end(),
                     [&](Index i) { return adapter.contains(i); });
}

// ---------------------------------------------------------------------------
// Serving path

void accumulate_row(const EmbeddingTable& table, const LoraAdapter& adapter,
                    const HotIndexFilter& filter, Index index,
                    std::span<double> out) {
  auto base = table.row(index);
  const std::size_t d = table.dim();
  std::fill(out.begin(), out.end(), 0.0);
  if (filter.is_hot(index)) {
    auto a = adapter.row(index);
    auto b = adapter.b();
    for (std::size_t r = 0; r < a.size(); ++r) {
      const double ar = a[r];
      const float* brow = b.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) out[j] += ar * static_cast<double>(brow[j]);
    }
  }
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<double>(base[j]) + out[j];
}

EmbeddingVector lookup(const EmbeddingTable& table, const LoraAdapter& adapter,
                       const HotIndexFilter& filter, Index index) {
  check_index(table, index);
  const std::size_t d = table.dim();
  std::vector<double> acc(d);
  accumulate_row(table, adapter, filter, index, acc);
  EmbeddingVector out;
  out.values.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.values[j] = static_cast<float>(acc[j]);
  return out;
}

EmbeddingVector pooled_lookup(const EmbeddingTable& table,
                              const LoraAdapter& adapter,
                              const HotIndexFilter& filter,
                              std::span<const Index> indices) {
  if (indices.empty()) throw std::invalid_argument("pooled_lookup of empty index list");
  const std::size_t d = table.dim();
  std::vector<double> sum(d, 0.0);
  for (Index i : indices) {
    auto row = lookup(table, adapter, filter, i);
    for (std::size_t j = 0; j < d; ++j) sum[j] += row.values[j];
  }
  EmbeddingVector out;
  out.values.resize(d);
  const double n = static_cast<double>(indices.size());
  for (std::size_t j = 0; j < d; ++j) out.values[j] = static_cast<float>(sum[j] / n);
  return out;
}

void apply_full_update(EmbeddingTable& table, LoraAdapter& adapter,
                       HotIndexFilter& filter, std::vector<float> new_weights) {
  table.replace_weights(std::move(new_weights));
  adapter.clear();
  filter.clear();
}

bool fold_row(EmbeddingTable& table, LoraAdapter& adapter,
              HotIndexFilter& filter, Index index) {
  if (!filter.is_hot(index) || !adapter.contains(index)) return false;
  // Write back exactly what lookup() serves so the value does not move.
  auto served = lookup(table, adapter, filter, index);
  auto dst = table.mutable_row(index);
  std::copy(served.values.begin(), served.values.end(), dst.begin());
  adapter.erase_row(index);
  filter.erase(index);
  return true;
}

// ---------------------------------------------------------------------------
// AdaptedTable

AdaptedTable::AdaptedTable(EmbeddingTable table, LoraAdapter adapter)
    : table_(std::move(table)), adapter_(std::move(adapter)) {
  if (adapter_.dim() != table_.dim() || adapter_.max_rows() != table_.rows()) {
    throw std::invalid_argument("adapter shape does not match table");
  }
  for (const auto& [i, _] : adapter_.rows()) filter_.insert(i);
}

EmbeddingVector AdaptedTable::lookup(Index index) const {
  std::shared_lock lock(mu_);
  return liveupdate::lookup(table_, adapter_, filter_, index);
}

EmbeddingVector AdaptedTable::pooled_lookup(std::span<const Index> indices) const {
  std::shared_lock lock(mu_);
  return liveupdate::pooled_lookup(table_, adapter_, filter_, indices);
}

std::size_t AdaptedTable::rank() const {
  std::shared_lock lock(mu_);
  return adapter_.rank();
}

std::size_t AdaptedTable::capacity() const {
  std::shared_lock lock(mu_);
  return adapter_.capacity();
}

std::size_t AdaptedTable::hot_count() const {
  std::shared_lock lock(mu_);
  return filter_.size();
}

std::uint64_t AdaptedTable::version() const {
  std::shared_lock lock(mu_);
  return table_.version();
}

bool AdaptedTable::publish_row(Index index, std::span<const float> values) {
  std::unique_lock lock(mu_);
  if (index >= table_.rows()) throw std::out_of_range("publish_row index out of range");
  if (!adapter_.set_row(index, values)) return false;
  filter_.insert(index);
  return true;
}

void AdaptedTable::publish_b(std::span<const float> values) {
  std::unique_lock lock(mu_);
  adapter_.set_b(values);
}

bool AdaptedTable::fold(Index index) {
  std::unique_lock lock(mu_);
  return fold_row(table_, adapter_, filter_, index);
}

void AdaptedTable::full_update(std::vector<float> new_weights) {
  std::unique_lock lock(mu_);
  apply_full_update(table_, adapter_, filter_, std::move(new_weights));
}

void AdaptedTable::set_capacity(std::size_t capacity) {
  std::unique_lock lock(mu_);
  adapter_.set_capacity(capacity);
}

void AdaptedTable::reshape(std::size_t rank, LoraAdapter::RowMap rows,
                           std::vector<float> b) {
  std::unique_lock lock(mu_);
  HotIndexFilter next;
  for (const auto& [i, _] : rows) next.insert(i);
  adapter_.reshape(rank, std::move(rows), std::move(b));
  filter_ = std::move(next);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[4] = {'L', 'U', 'P', 'D'};
}

void save_checkpoint(std::ostream& out, const EmbeddingTable& table,
                     const LoraAdapter& adapter) {
  bytes::Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointFormatVersion);
  w.u64(table.rows());
  w.u32(static_cast<std::uint32_t>(table.dim()));
  w.u32(static_cast<std::uint32_t>(adapter.rank()));
  w.u64(adapter.size());
  w.f32s(table.weights());
  for (Index i : adapter.sorted_indices()) {
    w.u64(i);
    w.f32s(adapter.row(i));
  }
  w.f32s(adapter.b());
  const auto& data = w.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("checkpoint write failed");
}

void save_checkpoint(const std::string& path, const EmbeddingTable& table,
                     const LoraAdapter& adapter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(out, table, adapter);
}

Checkpoint load_checkpoint(std::istream& in, std::uint32_t table_id,
                           std::size_t capacity) {
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  bytes::Reader r(data);
  for (char c : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw std::runtime_error("bad checkpoint magic");
  }
  const auto version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(version));
  }
  const std::size_t rows = r.u64();
  const std::size_t dim = r.u32();
  const std::size_t rank = r.u32();
  const std::size_t row_count = r.u64();
  if (dim == 0 || rank == 0 || rank > dim || row_count > rows) {
    throw std::runtime_error("inconsistent checkpoint header");
  }
  // Cheap sanity bound before allocating.
  if (r.remaining() < (rows * dim + row_count * rank + rank * dim) * 4) {
    throw std::runtime_error("truncated checkpoint");
  }
  std::vector<float> weights(rows * dim);
  r.f32s(weights);
  EmbeddingTable table(table_id, rows, dim, std::move(weights));

  LoraAdapter::RowMap a_rows;
  a_rows.reserve(row_count);
  Index prev = 0;
  for (std::size_t n = 0; n < row_count; ++n) {
    const Index i = r.u64();
    if (i >= rows || (n > 0 && i <= prev)) throw std::runtime_error("unsorted or invalid A index");
    prev = i;
    std::vector<float> a(rank);
    r.f32s(a);
    a_rows.emplace(i, std::move(a));
  }
  std::vector<float> b(rank * dim);
  r.f32s(b);
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint");

  const std::size_t cap = std::max(row_count, capacity == 0 ? rows : capacity);
  LoraAdapter adapter(dim, rank, cap, rows);
  adapter.reshape(rank, std::move(a_rows), std::move(b));
  HotIndexFilter filter;
  for (const auto& [i, _] : adapter.rows()) filter.insert(i);
  return Checkpoint{std::move(table), std::move(adapter), std::move(filter)};
}

Checkpoint load_checkpoint(const std::string& path, std::uint32_t table_id,
                           std::size_t capacity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_checkpoint(in, table_id, capacity);
}

}  // namespace liveupdate
