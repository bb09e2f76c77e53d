// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include "doctest.h"
#include "liveupdate/config_error.hpp"
#include "liveupdate/sync.hpp"

using namespace liveupdate;
using namespace liveupdate::sync;

namespace {

constexpr std::size_t kRank = 2;
constexpr std::size_t kDim = 3;

std::vector<float> random_row(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

// R replicas over two tables; each modifies a random subset of a small id range.
std::vector<RankState> random_states(std::size_t ranks, std::mt19937_64& rng) {
  std::vector<RankState> states(ranks);
  std::bernoulli_distribution touch(0.3), trains(0.6);
  for (std::size_t r = 0; r < ranks; ++r) {
    auto& s = states[r];
    s.rank_id = static_cast<std::uint16_t>(r);
    s.theta.assign(2, LoraParams{kRank, kDim, {}, std::vector<float>(kRank * kDim, 0.0f)});
    s.support.resize(2);
    for (std::size_t t = 0; t < 2; ++t) {
      std::vector<Index> ids;
      std::vector<std::vector<float>> vals;
      for (Index i = 0; i < 12; ++i) {
        if (touch(rng)) {
          ids.push_back(i);
          vals.push_back(random_row(rng, kRank));
        }
      }
      record_update(s, t, ids, vals);
      if (trains(rng)) record_b(s, t, random_row(rng, kRank * kDim));
    }
  }
  return states;
}

// Highest modifying rank wins each index; highest trained rank wins B.
MergeOutcome reference(const std::vector<RankState>& states) {
  MergeOutcome out;
  out.shapes = {{0, kRank, kDim}, {1, kRank, kDim}};
  out.rows.resize(2);
  out.b.resize(2);
  for (const auto& s : states) {
    for (std::size_t t = 0; t < 2; ++t) {
      for (Index i : s.support[t]) {
        auto it = out.rows[t].find(i);
        if (it == out.rows[t].end() || s.rank_id > it->second.rank) {
          out.rows[t][i] = Winner{s.rank_id, s.theta[t].rows.at(i)};
        }
      }
      if (s.trained && (!out.b[t] || s.rank_id > out.b[t]->rank)) out.b[t] = Winner{s.rank_id, s.theta[t].b};
    }
  }
  return out;
}

std::size_t size_by_hand(const Message& m) {
  const bool agg = m.kind == MessageKind::kAggregate;
  std::size_t n = 8 + 2 + 1 + 2 + 6 * m.shapes.size() + 4 + 2;
  for (const auto& e : m.entries) n += 2 + 8 + (agg ? 2 : 0) + 4 * e.row.size();
  for (const auto& b : m.bs) n += 2 + (agg ? 2 : 0) + 4 * b.b.size();
  return n;
}

}  // namespace

TEST_CASE("wire format round trips and its size adds up") {
  std::mt19937_64 rng(1);
  for (int n = 0; n < 50; ++n) {
    auto states = random_states(3, rng);
    Message m = contribution(states[n % 3], 7 + n);
    const auto bytes = encode(m);
    CHECK(bytes.size() == encoded_size(m));
    CHECK(bytes.size() == size_by_hand(m));
    CHECK(decode(bytes) == m);

    MergeOutcome acc;
    for (const auto& s : states) merge_into(acc, contribution(s, 7 + n));
    const Message agg = to_message(acc, 0);
    CHECK(agg.kind == MessageKind::kAggregate);
    CHECK(encode(agg).size() == size_by_hand(agg));
    CHECK(decode(encode(agg)) == agg);
  }
}

TEST_CASE("malformed bytes are rejected") {
  std::mt19937_64 rng(2);
  auto states = random_states(1, rng);
  states[0].trained = true;
  const auto bytes = encode(contribution(states[0], 1));
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    CHECK_THROWS_AS(decode(std::span(bytes.data(), cut)), std::runtime_error);
  }
  auto bad_kind = bytes;
  bad_kind[10] = 9;
  CHECK_THROWS_AS(decode(bad_kind), std::runtime_error);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode(trailing), std::runtime_error);
}

TEST_CASE("merge matches the highest-rank reference in any order") {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 200; ++n) {
    auto states = random_states(1 + n % 7, rng);
    const MergeOutcome want = reference(states);
    std::vector<std::size_t> order(states.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int p = 0; p < 4; ++p) {
      std::shuffle(order.begin(), order.end(), rng);
      MergeOutcome acc;
      for (std::size_t i : order) merge_into(acc, contribution(states[i], 0));
      CHECK(acc.rows == want.rows);
      CHECK(acc.b == want.b);
      // Merging an aggregate of a subset is the same as merging its members.
      MergeOutcome half, rest;
      for (std::size_t i = 0; i < order.size() / 2; ++i) merge_into(half, contribution(states[order[i]], 0));
      for (std::size_t i = order.size() / 2; i < order.size(); ++i) merge_into(rest, contribution(states[order[i]], 0));
      merge_into(rest, to_message(half, 0));
      merge_into(rest, to_message(half, 0));
      CHECK(rest.rows == want.rows);
      CHECK(rest.b == want.b);
    }
  }
}

TEST_CASE("binomial tree shape") {
  CHECK(tree_parent(0) == -1);
  CHECK(tree_parent(1) == 0);
  CHECK(tree_parent(6) == 4);
  CHECK(tree_parent(7) == 6);
  CHECK(tree_children(0, 8) == std::vector<int>{1, 2, 4});
  CHECK(tree_children(4, 8) == std::vector<int>{5, 6});
  CHECK(tree_children(0, 5) == std::vector<int>{1, 2, 4});
  CHECK(tree_children(4, 5).empty());
  CHECK(tree_children(3, 8).empty());
  // Every non-root has exactly one parent that lists it.
  for (int r = 1; r < 13; ++r) {
    const auto c = tree_children(tree_parent(r), 13);
    CHECK(std::count(c.begin(), c.end(), r) == 1);
  }
}

TEST_CASE("a lossy network still converges every replica") {
  std::mt19937_64 rng(4);
  for (int n = 0; n < 30; ++n) {
    auto states = random_states(1 + n % 9, rng);
    const MergeOutcome want = reference(states);
    NetConfig nc;
    nc.seed = 100 + n;
    nc.jitter_us = 20;
    nc.drop_probability = 0.2;
    nc.duplicate_probability = 0.2;
    SimNet net(nc);
    const auto res = sync_round(states, net, n);
    CHECK(res.outcome.rows == want.rows);
    if (states.size() > 1) {
      CHECK(res.latency_us > 0.0);
      CHECK(res.network_bytes >= res.payload_bytes);
    }
    for (const auto& s : states) {
      CHECK(s.theta == states[0].theta);
      CHECK_FALSE(s.trained);
      for (const auto& sup : s.support) CHECK(sup.empty());
    }
    // A second application changes nothing.
    auto again = states;
    for (auto& s : again) apply(res.outcome, s);
    for (std::size_t r = 0; r < states.size(); ++r) CHECK(again[r].theta == states[r].theta);
  }
}

TEST_CASE("record_update only marks values that change") {
  RankState s;
  s.theta.assign(1, LoraParams{kRank, kDim, {}, std::vector<float>(kRank * kDim, 0.0f)});
  const Index ids[] = {1, 2};
  const std::vector<std::vector<float>> vals{{0, 0}, {1, 0}};
  record_update(s, 0, ids, vals);
  CHECK(s.support[0] == std::set<Index>{2});
  s.support[0].clear();
  record_update(s, 0, std::span(ids + 1, 1), std::span(vals.data() + 1, 1));
  CHECK(s.support[0].empty());
  CHECK_THROWS(record_b(s, 0, std::vector<float>{1.0f}));
  CHECK_FALSE(s.trained);
}

TEST_CASE("replicas that diverge since the baseline end identical") {
  std::mt19937_64 rng(5);
  const std::size_t rows = 20;
  std::vector<float> w(rows * kDim);
  for (float& x : w) x = std::uniform_real_distribution<float>(-1, 1)(rng);
  auto make = [&] { return AdaptedTable(EmbeddingTable(0, rows, kDim, w), LoraAdapter(kDim, kRank, 6, rows)); };
  AdaptedTable a = make(), b = make();
  const auto b0 = random_row(rng, kRank * kDim);
  a.publish_b(b0);
  b.publish_b(b0);
  for (Index i : {1u, 3u, 5u}) {
    const auto r = random_row(rng, kRank);
    a.publish_row(i, r);
    b.publish_row(i, r);
  }
  const std::vector<Index> baseline{1, 3, 5};
  // Local steps since the baseline.
  a.publish_row(7, random_row(rng, kRank));
  a.publish_row(1, random_row(rng, kRank));
  b.publish_row(9, random_row(rng, kRank));
  b.publish_row(11, random_row(rng, kRank));

  MergeOutcome out;
  out.shapes = {{0, kRank, kDim}};
  out.rows.resize(1);
  out.b.resize(1);
  out.b[0] = Winner{1, random_row(rng, kRank * kDim)};
  for (Index i : {1u, 7u, 9u, 12u, 13u, 14u, 15u}) out.rows[0][i] = Winner{0, random_row(rng, kRank)};

  apply_to_table(out, 0, a, baseline);
  apply_to_table(out, 0, b, baseline);
  CHECK(a.hot_count() == b.hot_count());
  CHECK(a.hot_count() == 6);
  for (Index i = 0; i < rows; ++i) CHECK(a.lookup(i) == b.lookup(i));
  // The merged value of an admitted row is what gets served.
  a.read([&](const EmbeddingTable&, const LoraAdapter& ad, const HotIndexFilter&) {
    CHECK(ad.contains(1));
    const auto r = ad.row(1);
    CHECK(std::vector<float>(r.begin(), r.end()) == out.rows[0].at(1).value);
    CHECK(ad.contains(3));
    CHECK_FALSE(ad.contains(13));
  });
}

TEST_CASE("sync config validation") {
  SyncConfig c;
  c.ranks = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SyncConfig{};
  c.interval_steps = 0;
  try {
    c.validate();
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "sync.interval_steps");
  }
}
