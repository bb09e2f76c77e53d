// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/sync.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "liveupdate/byte_io.hpp"
#include "liveupdate/config_error.hpp"

namespace liveupdate::sync {

void SyncConfig::validate() const {
  if (ranks == 0) throw ConfigError("sync.ranks", "must be >= 1");
  if (ranks > 65535) throw ConfigError("sync.ranks", "must fit in 16 bits");
  if (interval_steps == 0) throw ConfigError("sync.interval_steps", "must be >= 1");
}

void record_update(RankState& state, std::size_t table, std::span<const Index> indices,
                   std::span<const std::vector<float>> values) {
  if (indices.size() != values.size()) throw std::invalid_argument("one value per index required");
  LoraParams& p = state.theta.at(table);
  if (state.support.size() < state.theta.size()) state.support.resize(state.theta.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const auto& v = values[n];
    if (v.size() != p.rank) throw std::invalid_argument("row length differs from rank");
    auto it = p.rows.find(indices[n]);
    bool changed;
    if (it == p.rows.end()) {
      changed = std::any_of(v.begin(), v.end(), [](float x) { return x != 0.0f; });
      if (changed) p.rows.emplace(indices[n], v);
    } else {
      changed = it->second != v;
      if (changed) it->second = v;
    }
    if (changed) state.support[table].insert(indices[n]);
  }
}

void record_b(RankState& state, std::size_t table, std::span<const float> b) {
  LoraParams& p = state.theta.at(table);
  if (b.size() != p.rank * p.dim) throw std::invalid_argument("B size differs from rank x dim");
  p.b.assign(b.begin(), b.end());
  state.trained = true;
}

// ---------------------------------------------------------------------------
// Wire format

namespace {

bool aggregate(const Message& m) { return m.kind == MessageKind::kAggregate; }

const TableShape& shape_of(const std::vector<TableShape>& shapes, std::uint16_t table) {
  for (const auto& s : shapes) {
    if (s.table == table) return s;
  }
  throw std::runtime_error("entry for unknown table " + std::to_string(table));
}

std::vector<float> read_floats(bytes::Reader& r, std::size_t n) {
  if (r.remaining() < n * 4) throw std::runtime_error("truncated input");
  std::vector<float> out(n);
  r.f32s(out);
  return out;
}

// Rejects counts that cannot fit in the remaining bytes before allocating.
std::size_t checked_count(const bytes::Reader& r, std::size_t count, std::size_t min_size) {
  if (count * min_size > r.remaining()) throw std::runtime_error("truncated input");
  return count;
}

}  // namespace

std::size_t encoded_size(const Message& m) {
  const std::size_t winner = aggregate(m) ? 2 : 0;
  std::size_t n = 8 + 2 + 1 + 2 + m.shapes.size() * 6 + 4 + 2;
  for (const auto& e : m.entries) n += 2 + 8 + winner + e.row.size() * 4;
  for (const auto& b : m.bs) n += 2 + winner + b.b.size() * 4;
  return n;
}

std::vector<std::uint8_t> encode(const Message& m) {
  bytes::Writer w;
  w.u64(m.round);
  w.u16(m.rank);
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u16(static_cast<std::uint16_t>(m.shapes.size()));
  for (const auto& s : m.shapes) {
    w.u16(s.table);
    w.u16(s.rank);
    w.u16(s.dim);
  }
  w.u32(static_cast<std::uint32_t>(m.entries.size()));
  for (const auto& e : m.entries) {
    if (e.row.size() != shape_of(m.shapes, e.table).rank) throw std::invalid_argument("row length differs from rank");
    w.u16(e.table);
    w.u64(e.index);
    if (aggregate(m)) w.u16(e.winner);
    w.f32s(e.row);
  }
  w.u16(static_cast<std::uint16_t>(m.bs.size()));
  for (const auto& b : m.bs) {
    const auto& s = shape_of(m.shapes, b.table);
    if (b.b.size() != std::size_t{s.rank} * s.dim) throw std::invalid_argument("B size differs from shape");
    w.u16(b.table);
    if (aggregate(m)) w.u16(b.winner);
    w.f32s(b.b);
  }
  return w.release();
}

Message decode(std::span<const std::uint8_t> bytes) {
  bytes::Reader r(bytes);
  Message m;
  m.round = r.u64();
  m.rank = r.u16();
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw std::runtime_error("unknown message kind " + std::to_string(kind));
  m.kind = static_cast<MessageKind>(kind);
  m.shapes.resize(checked_count(r, r.u16(), 6));
  for (auto& s : m.shapes) {
    s.table = r.u16();
    s.rank = r.u16();
    s.dim = r.u16();
  }
  m.entries.resize(checked_count(r, r.u32(), 10));
  for (auto& e : m.entries) {
    e.table = r.u16();
    e.index = r.u64();
    e.winner = aggregate(m) ? r.u16() : m.rank;
    e.row = read_floats(r, shape_of(m.shapes, e.table).rank);
  }
  m.bs.resize(checked_count(r, r.u16(), 2));
  for (auto& b : m.bs) {
    b.table = r.u16();
    b.winner = aggregate(m) ? r.u16() : m.rank;
    const auto& s = shape_of(m.shapes, b.table);
    b.b = read_floats(r, std::size_t{s.rank} * s.dim);
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after message");
  return m;
}

Message contribution(const RankState& state, std::uint64_t round) {
  Message m;
  m.round = round;
  m.rank = state.rank_id;
  m.kind = MessageKind::kContribution;
  for (std::size_t t = 0; t < state.theta.size(); ++t) {
    const auto& p = state.theta[t];
    const auto table = static_cast<std::uint16_t>(t);
    m.shapes.push_back({table, static_cast<std::uint16_t>(p.rank), static_cast<std::uint16_t>(p.dim)});
    if (t < state.support.size()) {
      for (Index i : state.support[t]) {
        auto it = p.rows.find(i);
        std::vector<float> row = it == p.rows.end() ? std::vector<float>(p.rank, 0.0f) : it->second;
        m.entries.push_back({table, i, state.rank_id, std::move(row)});
      }
    }
    if (state.trained) m.bs.push_back({table, state.rank_id, p.b});
  }
  return m;
}

// ---------------------------------------------------------------------------
// Merge

std::size_t MergeOutcome::index_count() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.size();
  return n;
}

void merge_into(MergeOutcome& acc, const Message& m) {
  // The aggregate of nothing is the identity.
  if (m.shapes.empty() && m.entries.empty() && m.bs.empty()) return;
  if (acc.shapes.empty()) {
    acc.round = m.round;
    acc.shapes = m.shapes;
    acc.rows.assign(m.shapes.size(), {});
    acc.b.assign(m.shapes.size(), std::nullopt);
  } else if (acc.shapes != m.shapes) {
    throw std::invalid_argument("ranks disagree on table shapes");
  }
  if (m.round != acc.round) throw std::invalid_argument("message from another round");
  for (const auto& e : m.entries) {
    const std::uint16_t winner = aggregate(m) ? e.winner : m.rank;
    auto& slot = acc.rows.at(e.table);
    auto it = slot.find(e.index);
    if (it == slot.end()) {
      slot.emplace(e.index, Winner{winner, e.row});
    } else if (winner > it->second.rank) {
      it->second = Winner{winner, e.row};
    }
  }
  for (const auto& b : m.bs) {
    const std::uint16_t winner = aggregate(m) ? b.winner : m.rank;
    auto& slot = acc.b.at(b.table);
    if (!slot || winner > slot->rank) slot = Winner{winner, b.b};
  }
}

Message to_message(const MergeOutcome& outcome, std::uint16_t sender) {
  Message m;
  m.round = outcome.round;
  m.rank = sender;
  m.kind = MessageKind::kAggregate;
  m.shapes = outcome.shapes;
  for (std::size_t t = 0; t < outcome.rows.size(); ++t) {
    const auto table = outcome.shapes[t].table;
    for (const auto& [i, w] : outcome.rows[t]) m.entries.push_back({table, i, w.rank, w.value});
    if (outcome.b[t]) m.bs.push_back({table, outcome.b[t]->rank, outcome.b[t]->value});
  }
  return m;
}

void apply(const MergeOutcome& outcome, RankState& state) {
  for (std::size_t t = 0; t < outcome.rows.size(); ++t) {
    LoraParams& p = state.theta.at(outcome.shapes[t].table);
    for (const auto& [i, w] : outcome.rows[t]) p.rows[i] = w.value;
    if (outcome.b[t]) p.b = outcome.b[t]->value;
  }
  for (auto& s : state.support) s.clear();
  state.trained = false;
}

// ---------------------------------------------------------------------------
// SimNet

SimNet::SimNet(NetConfig config) : config_(config), rng_(config.seed) {
  if (!(config_.bandwidth_gbps > 0.0)) throw std::invalid_argument("bandwidth must be positive");
}

void SimNet::send(double now_us, int from, int to, std::vector<std::uint8_t> payload) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // bytes / (Gbit/s) in microseconds: bytes * 8 / (gbps * 1e3).
  const double wire_us =
      static_cast<double>(payload.size()) * 8.0 / (config_.bandwidth_gbps * 1e3);
  double t = now_us;
  for (int attempt = 0;; ++attempt) {
    ++transmissions_;
    bytes_sent_ += payload.size();
    if (attempt < 64 && u01(rng_) < config_.drop_probability) {
      ++drops_;
      t += config_.retransmit_timeout_us;
      continue;
    }
    break;
  }
  const double arrive = t + config_.hop_latency_us + wire_us + config_.jitter_us * u01(rng_);
  if (u01(rng_) < config_.duplicate_probability) {
    ++transmissions_;
    bytes_sent_ += payload.size();
    const double again = arrive + config_.hop_latency_us * u01(rng_) + config_.jitter_us * u01(rng_);
    events_.push({again, seq_++, from, to, payload});
  }
  events_.push({arrive, seq_++, from, to, std::move(payload)});
}

std::optional<Delivery> SimNet::next() {
  if (events_.empty()) return std::nullopt;
  Delivery d = events_.top();
  events_.pop();
  return d;
}

// ---------------------------------------------------------------------------
// Rounds

int tree_parent(int rank) {
  if (rank <= 0) return -1;
  return rank & (rank - 1);
}

std::vector<int> tree_children(int rank, int ranks) {
  std::vector<int> out;
  for (int bit = 1; bit < ranks; bit <<= 1) {
    if (rank & bit) break;
    if (rank + bit < ranks) out.push_back(rank + bit);
  }
  return out;
}

RoundResult run_round(const std::vector<Message>& contributions, SimNet& net, std::uint64_t round) {
  const int n = static_cast<int>(contributions.size());
  if (n == 0) throw std::invalid_argument("sync round needs at least one rank");
  RoundResult result;
  const std::uint64_t bytes_before = net.bytes_sent();

  struct Node {
    MergeOutcome acc;
    std::set<int> waiting;
    double ready_us = 0.0;
    bool have_final = false;
    double final_us = 0.0;
  };
  std::vector<Node> nodes(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const Message& m = contributions[static_cast<std::size_t>(r)];
    if (m.rank != r) throw std::invalid_argument("contributions must be ordered by rank");
    if (m.round != round) throw std::invalid_argument("contribution from another round");
    result.payload_bytes += encoded_size(m);
    // Round-trip every contribution through the wire format.
    merge_into(nodes[static_cast<std::size_t>(r)].acc, decode(encode(m)));
    for (int c : tree_children(r, n)) nodes[static_cast<std::size_t>(r)].waiting.insert(c);
  }

  std::vector<std::uint8_t> final_bytes;
  auto finish_gather = [&](int r) {
    Node& node = nodes[static_cast<std::size_t>(r)];
    auto bytes = encode(to_message(node.acc, static_cast<std::uint16_t>(r)));
    if (r == 0) {
      node.have_final = true;
      node.final_us = node.ready_us;
      final_bytes = bytes;
      for (int c : tree_children(0, n)) net.send(node.ready_us, 0, c, bytes);
    } else {
      net.send(node.ready_us, r, tree_parent(r), std::move(bytes));
    }
  };
  for (int r = 0; r < n; ++r) {
    if (nodes[static_cast<std::size_t>(r)].waiting.empty()) finish_gather(r);
  }

  while (auto d = net.next()) {
    Node& node = nodes[static_cast<std::size_t>(d->to)];
    const Message m = decode(d->payload);
    if (m.round != round) throw std::runtime_error("message from another round in flight");
    if (d->from == tree_parent(d->to)) {
      // Broadcast down; duplicates are ignored.
      if (node.have_final) continue;
      node.have_final = true;
      node.final_us = d->time_us;
      for (int c : tree_children(d->to, n)) net.send(d->time_us, d->to, c, d->payload);
      continue;
    }
    if (!node.waiting.erase(d->from)) continue;  // duplicate from a child
    merge_into(node.acc, m);
    node.ready_us = std::max(node.ready_us, d->time_us) +
                    net.config().merge_us_per_entry * static_cast<double>(m.entries.size());
    if (node.waiting.empty()) finish_gather(d->to);
  }

  for (const Node& node : nodes) {
    if (!node.have_final) throw std::logic_error("sync round ended without full delivery");
    result.latency_us = std::max(result.latency_us, node.final_us);
  }
  result.outcome = std::move(nodes[0].acc);
  result.network_bytes = static_cast<std::size_t>(net.bytes_sent() - bytes_before);
  return result;
}

RoundResult sync_round(std::vector<RankState>& states, SimNet& net, std::uint64_t round) {
  std::vector<Message> contributions;
  contributions.reserve(states.size());
  for (const auto& s : states) contributions.push_back(contribution(s, round));
  RoundResult result = run_round(contributions, net, round);
  for (auto& s : states) apply(result.outcome, s);
  return result;
}

void apply_to_table(const MergeOutcome& outcome, std::size_t slot, AdaptedTable& table,
                    std::span<const Index> baseline) {
  const auto& shape = outcome.shapes.at(slot);
  table.write([&](EmbeddingTable& w, LoraAdapter& a, HotIndexFilter& f) {
    if (a.rank() != shape.rank || w.dim() != shape.dim) {
      throw std::invalid_argument("outcome shape differs from table");
    }
    for (Index i : a.sorted_indices()) {
      if (!std::binary_search(baseline.begin(), baseline.end(), i)) {
        a.erase_row(i);
        f.erase(i);
      }
    }
    if (outcome.b[slot]) a.set_b(outcome.b[slot]->value);
    const std::size_t d = w.dim();
    const auto b = a.b();
    for (const auto& [i, win] : outcome.rows[slot]) {
      if (a.contains(i) || a.size() < a.capacity()) {
        a.set_row(i, win.value);
        f.insert(i);
        continue;
      }
      // No room: fold the merged row into the base copy, as fold_row would.
      auto base = w.mutable_row(i);
      std::vector<double> acc(d, 0.0);
      for (std::size_t r = 0; r < win.value.size(); ++r) {
        const double ar = win.value[r];
        for (std::size_t j = 0; j < d; ++j) acc[j] += ar * static_cast<double>(b[r * d + j]);
      }
      for (std::size_t j = 0; j < d; ++j) base[j] = static_cast<float>(static_cast<double>(base[j]) + acc[j]);
    }
  });
}

}  // namespace liveupdate::sync
