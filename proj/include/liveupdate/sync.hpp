// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "liveupdate/model_core.hpp"

namespace liveupdate::sync {

// LoRA parameters of one table as plain values.
struct LoraParams {
  std::size_t rank = 0;
  std::size_t dim = 0;
  std::map<Index, std::vector<float>> rows;
  std::vector<float> b;

  bool operator==(const LoraParams&) const = default;
};

// One replica: parameters per table, the indices it modified since the last
// round (S_r) and whether it ran a train step this round.
struct RankState {
  std::uint16_t rank_id = 0;
  std::vector<LoraParams> theta;
  std::vector<std::set<Index>> support;
  bool trained = false;
};

struct SyncConfig {
  std::size_t ranks = 1;
  std::size_t interval_steps = 16;

  // Throws ConfigError ("sync.<field>").
  void validate() const;
};

// Writes new A rows into θ_r. Only indices whose stored value actually
// changes join S_r (a new row of all zeros counts as unchanged).
void record_update(RankState& state, std::size_t table, std::span<const Index> indices,
                   std::span<const std::vector<float>> values);
// Replaces B and marks the rank as having trained this round.
void record_b(RankState& state, std::size_t table, std::span<const float> b);

// ---------------------------------------------------------------------------
// Wire format. All integers little-endian, rows as f32:
//   header   round u64 | rank u16 | kind u8 | table_count u16
//            table_count x (table u16, k u16, d u16)
//   entries  count u32 | count x (table u16, index u64, [winner u16], k x f32)
//   b        count u16 | count x (table u16, [winner u16], k*d x f32)
// Winner fields are present only in aggregates.

enum class MessageKind : std::uint8_t { kContribution = 0, kAggregate = 1 };

struct TableShape {
  std::uint16_t table = 0;
  std::uint16_t rank = 0;
  std::uint16_t dim = 0;
  bool operator==(const TableShape&) const = default;
};

struct RowEntry {
  std::uint16_t table = 0;
  Index index = 0;
  std::uint16_t winner = 0;
  std::vector<float> row;
  bool operator==(const RowEntry&) const = default;
};

struct BEntry {
  std::uint16_t table = 0;
  std::uint16_t winner = 0;
  std::vector<float> b;
  bool operator==(const BEntry&) const = default;
};

struct Message {
  std::uint64_t round = 0;
  std::uint16_t rank = 0;
  MessageKind kind = MessageKind::kContribution;
  std::vector<TableShape> shapes;
  std::vector<RowEntry> entries;
  std::vector<BEntry> bs;
  bool operator==(const Message&) const = default;
};

std::vector<std::uint8_t> encode(const Message& m);
// Throws std::runtime_error on malformed input.
Message decode(std::span<const std::uint8_t> bytes);
std::size_t encoded_size(const Message& m);

// Contribution of a rank: its S_r rows, plus B when it trained.
Message contribution(const RankState& state, std::uint64_t round);

// ---------------------------------------------------------------------------
// Merge

struct Winner {
  std::uint16_t rank = 0;
  std::vector<float> value;
  bool operator==(const Winner&) const = default;
};

// Priority-merged round result: per table, every index in the union of
// supports with the value of the highest rank that modified it, and B from
// the highest rank that trained.
struct MergeOutcome {
  std::uint64_t round = 0;
  std::vector<TableShape> shapes;
  std::vector<std::map<Index, Winner>> rows;
  std::vector<std::optional<Winner>> b;

  std::size_t index_count() const;
  bool operator==(const MergeOutcome&) const = default;
};

// Folds a contribution or aggregate into `acc`. Commutative and associative.
void merge_into(MergeOutcome& acc, const Message& m);
Message to_message(const MergeOutcome& outcome, std::uint16_t sender);

// Installs merged values in a replica and clears its support and trained flag.
// Applying the same outcome twice is a no-op.
void apply(const MergeOutcome& outcome, RankState& state);

// ---------------------------------------------------------------------------
// Simulated network

struct NetConfig {
  double hop_latency_us = 5.0;
  double bandwidth_gbps = 100.0;
  // Uniform extra delay in [0, jitter_us) per delivery.
  double jitter_us = 1.0;
  double drop_probability = 0.0;
  double duplicate_probability = 0.0;
  double retransmit_timeout_us = 50.0;
  // Per-entry merge cost at a receiving node.
  double merge_us_per_entry = 0.0;
  std::uint64_t seed = 1;
};

struct Delivery {
  double time_us;
  std::uint64_t seq;
  int from;
  int to;
  std::vector<std::uint8_t> payload;
};

// In-process discrete-event fabric. Each send is delivered at least once;
// drops are retransmitted after a timeout and duplicates may arrive.
class SimNet {
 public:
  explicit SimNet(NetConfig config);

  void send(double now_us, int from, int to, std::vector<std::uint8_t> payload);
  std::optional<Delivery> next();
  bool idle() const { return events_.empty(); }

  const NetConfig& config() const { return config_; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t transmissions() const { return transmissions_; }
  std::uint64_t drops() const { return drops_; }

 private:
  struct Later {
    bool operator()(const Delivery& a, const Delivery& b) const {
      return a.time_us != b.time_us ? a.time_us > b.time_us : a.seq > b.seq;
    }
  };

  NetConfig config_;
  std::mt19937_64 rng_;
  std::priority_queue<Delivery, std::vector<Delivery>, Later> events_;
  std::uint64_t seq_ = 0;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t transmissions_ = 0;
  std::uint64_t drops_ = 0;
};

struct RoundResult {
  MergeOutcome outcome;
  // Time until every rank holds the merged state.
  double latency_us = 0.0;
  // Sum of encoded contribution sizes.
  std::size_t payload_bytes = 0;
  // Every byte put on the wire, retransmissions and duplicates included.
  std::size_t network_bytes = 0;
};

// Binomial-tree gather to rank 0 with priority merge at every hop, then the
// merged state is broadcast down the same tree. Contributions must come from
// ranks 0..R-1 in order.
RoundResult run_round(const std::vector<Message>& contributions, SimNet& net, std::uint64_t round);

// run_round over replica states, then apply() to each.
RoundResult sync_round(std::vector<RankState>& states, SimNet& net, std::uint64_t round);

// Parent and children of `rank` in the binomial tree over `ranks` nodes.
int tree_parent(int rank);
std::vector<int> tree_children(int rank, int ranks);

// Installs an outcome in a serving table. `baseline` is the sorted hot set
// every replica shared after the previous round. Rows this replica inserted
// since then are dropped, B is replaced, then each merged index is written:
// baseline rows are overwritten, new rows admitted while capacity allows and
// the rest folded into the base weights. Replicas that shared the baseline end
// bitwise identical.
void apply_to_table(const MergeOutcome& outcome, std::size_t table_slot, AdaptedTable& table,
                    std::span<const Index> baseline);

}  // namespace liveupdate::sync
