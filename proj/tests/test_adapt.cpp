// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <deque>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "liveupdate/adapt.hpp"
#include "liveupdate/config_error.hpp"

using namespace liveupdate;
using namespace liveupdate::adapt;

namespace {

struct Fixture {
  Fixture(std::size_t rows, std::size_t d, std::size_t k, std::uint64_t seed)
      : table(0, rows, d), adapter(d, k, rows, rows) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<float> w(rows * d);
    for (float& x : w) x = static_cast<float>(n(rng));
    table.replace_weights(w);
    std::vector<float> b(k * d);
    for (float& x : b) x = static_cast<float>(n(rng));
    adapter.set_b(b);
  }

  void add(Index i, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<float> a(adapter.rank());
    for (float& x : a) x = static_cast<float>(n(rng));
    adapter.set_row(i, a);
    filter.insert(i);
  }

  std::vector<EmbeddingVector> served() const {
    std::vector<EmbeddingVector> out;
    for (Index i = 0; i < table.rows(); ++i) out.push_back(lookup(table, adapter, filter, i));
    return out;
  }

  EmbeddingTable table;
  LoraAdapter adapter;
  HotIndexFilter filter;
};

}  // namespace

TEST_CASE("reservoir keeps every offered row with equal probability") {
  const std::size_t n = 400, cap = 40, trials = 4000;
  std::vector<double> kept(n, 0.0);
  const double row[1] = {1.0};
  for (std::size_t t = 0; t < trials; ++t) {
    GradientReservoir r(1, cap, 1000 + t);
    for (std::size_t s = 0; s < n; ++s) r.offer(s, row);
    REQUIRE(r.size() == cap);
    for (const auto& e : r.rows()) kept[e.step] += 1.0;
  }
  const double expected = static_cast<double>(trials * cap) / n;
  double chi2 = 0.0;
  for (double c : kept) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(n - 1));
  CHECK(chi2 < boost::math::quantile(dist, 0.999));
}

TEST_CASE("closing a snapshot records the spectrum and empties the reservoir") {
  GradientReservoir r(3, 10, 1);
  CHECK_FALSE(r.close_snapshot());
  const double a[3] = {3, 0, 0};
  const double b[3] = {0, 4, 0};
  r.offer(0, a);
  r.offer(1, b);
  CHECK_THROWS_AS(r.offer(2, std::vector<double>{1.0}), std::invalid_argument);
  CHECK(r.close_snapshot());
  CHECK(r.size() == 0);
  CHECK(r.seen() == 0);
  REQUIRE(r.history().size() == 1);
  const auto& ev = r.history()[0].eigenvalues;
  REQUIRE(ev.size() == 3);
  CHECK(ev[0] == doctest::Approx(16));
  CHECK(ev[1] == doctest::Approx(9));
  CHECK(ev[2] == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("usage tracker agrees with a naive recount over the window") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> id(0, 30);
  std::uniform_int_distribution<int> len(0, 6);
  const std::size_t window = 7;
  UsageTracker tracker(window);
  std::deque<std::pair<std::vector<Index>, std::vector<Index>>> steps;
  for (int n = 0; n < 500; ++n) {
    std::vector<Index> up(len(rng)), acc(len(rng));
    for (auto& x : up) x = id(rng);
    for (auto& x : acc) x = id(rng);
    tracker.record_step(up, acc);
    steps.emplace_back(up, acc);
    if (steps.size() > window) steps.pop_front();
    std::map<Index, std::uint64_t> u, a;
    std::uint64_t total = 0;
    for (const auto& [su, sa] : steps) {
      for (Index i : su) ++u[i];
      for (Index i : sa) ++a[i];
      total += sa.size();
    }
    CHECK(tracker.total_accesses() == total);
    CHECK(tracker.update_counts().size() == u.size());
    CHECK(tracker.access_counts().size() == a.size());
    for (Index i = 0; i <= 30; ++i) {
      CHECK(tracker.update_count(i) == (u.count(i) ? u[i] : 0));
      CHECK(tracker.access_count(i) == (a.count(i) ? a[i] : 0));
    }
  }
  CHECK(tracker.steps() == window);
  CHECK_THROWS(UsageTracker(0));
}

TEST_CASE("rank adaptation is the ceiling of the mean selected rank") {
  // select_rank at 0.8: {8,2} -> 1, {1,1,1,1} -> 4, {5,3,1,1} -> 2
  const std::vector<lowrank::Spectrum> h{{{8, 2}}, {{1, 1, 1, 1}}, {{5, 3, 1, 1}}};
  // mean 7/3 -> 3
  CHECK(rank_adaptation(h, 0.8, 5, 16).rank == 3);
  CHECK_FALSE(rank_adaptation(h, 0.8, 5, 16).noop);
  CHECK(rank_adaptation(h, 0.8, 5, 2).rank == 2);
  const std::vector<lowrank::Spectrum> none;
  const auto d = rank_adaptation(none, 0.8, 5, 16);
  CHECK(d.noop);
  CHECK(d.rank == 5);
}

TEST_CASE("tau is the access count at the hot boundary") {
  UsageTracker t(20);
  CHECK(update_tau(t, 100, 0.1, 7) == 7);
  // 12 ids with access counts 12, 11, ..., 1. Boundary rank ceil(0.1*100) = 10.
  for (Index i = 0; i < 12; ++i) {
    std::vector<Index> acc(12 - i, i);
    t.record_step({}, acc);
  }
  CHECK(update_tau(t, 100, 0.1, 7) == 3);
  CHECK(update_tau(t, 100, 0.01, 7) == 12);
  // Fewer tracked ids than the boundary: untracked ids count zero, floor 1.
  CHECK(update_tau(t, 1000, 0.1, 7) == 1);
}

TEST_CASE("pruning folds cold rows without changing served values") {
  std::mt19937_64 rng(3);
  Fixture f(60, 8, 3, 4);
  for (Index i = 0; i < 20; ++i) f.add(i, rng);
  UsageTracker::Counts counts;
  for (Index i = 0; i < 20; ++i) counts[i] = i;  // rows 0..4 are below tau 5
  const auto before = f.served();
  const Index keep[] = {2};
  // 15 ids reach tau; c_min 16 leaves room for the kept row.
  const auto rep = prune_and_resize(counts, 5, 16, 60, f.table, f.adapter, f.filter, keep);
  CHECK(f.served() == before);
  CHECK(rep.folded_indices == std::vector<Index>{0, 1, 3, 4});
  CHECK(rep.pruned_count == 4);
  CHECK(f.adapter.size() == 16);
  CHECK(rep.new_capacity == 16);
  CHECK(f.filter.matches(f.adapter));
}

TEST_CASE("capacity is clamped to [c_min, c_max] and overflow folds the least updated") {
  std::mt19937_64 rng(8);
  Fixture f(50, 4, 2, 9);
  for (Index i = 0; i < 30; ++i) f.add(i, rng);
  UsageTracker::Counts counts;
  for (Index i = 0; i < 30; ++i) counts[i] = 100 + i;
  const auto before = f.served();
  const auto rep = prune_and_resize(counts, 1, 2, 10, f.table, f.adapter, f.filter);
  CHECK(f.served() == before);
  CHECK(rep.new_capacity == 10);
  CHECK(f.adapter.size() == 10);
  for (Index i = 20; i < 30; ++i) CHECK(f.adapter.contains(i));

  Fixture g(50, 4, 2, 10);
  for (Index i = 0; i < 3; ++i) g.add(i, rng);
  UsageTracker::Counts few{{0, 5}};
  const auto r2 = prune_and_resize(few, 1, 8, 40, g.table, g.adapter, g.filter);
  CHECK(r2.new_capacity == 8);
  CHECK(g.adapter.size() == 1);
  CHECK_THROWS(prune_and_resize(few, 1, 9, 8, g.table, g.adapter, g.filter));
}

TEST_CASE("rank growth keeps the served values exactly") {
  std::mt19937_64 rng(12);
  const std::size_t rows = 40, d = 8;
  AdaptConfig cfg;
  cfg.initial_rank = 2;
  cfg.prune = false;
  cfg.snapshot_stride = 1;
  cfg.interval_steps = 1;
  AdaptState state(cfg, rows, d, 21);
  Fixture f(rows, d, 2, 13);
  for (Index i = 0; i < 10; ++i) f.add(i, rng);
  AdaptedTable table(f.table, f.adapter);
  for (Index i = 0; i < 10; ++i) table.write([&](auto&, auto&, HotIndexFilter& h) { h.insert(i); });
  // A full-rank isotropic gradient sample asks for a larger rank.
  std::normal_distribution<double> n(0.0, 1.0);
  for (int s = 0; s < 200; ++s) {
    std::vector<double> g(d);
    for (double& x : g) x = n(rng);
    state.reservoir.offer(0, g);
  }
  state.reservoir.close_snapshot();
  std::vector<EmbeddingVector> before;
  for (Index i = 0; i < rows; ++i) before.push_back(table.lookup(i));
  const auto rep = run_adaptation_cycle(state, table, 0);
  CHECK(rep.old_rank == 2);
  CHECK(rep.new_rank > 2);
  CHECK(table.rank() == rep.new_rank);
  for (Index i = 0; i < rows; ++i) CHECK(table.lookup(i) == before[i]);
}

TEST_CASE("memory proxy arithmetic") {
  CHECK(memory_proxy(100, 4, 1000, 16) == doctest::Approx((400.0 + 64.0) / 16000.0));
  CHECK(memory_proxy(0, 1, 10, 1) == doctest::Approx(0.1));
}

TEST_CASE("config defaults resolve against the vocabulary") {
  const AdaptConfig c = AdaptConfig{}.resolved(10000);
  CHECK(c.c_min == 200);
  CHECK(c.c_max == 10000);
  CHECK(AdaptConfig{}.initial_capacity(10000) == 1000);

  auto field = [](auto mutate) {
    AdaptConfig c;
    mutate(c);
    try {
      c.validate(1000, 16);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  CHECK(field([](AdaptConfig& c) { c.alpha = 0; }) == "adapt.alpha");
  CHECK(field([](AdaptConfig& c) { c.alpha = 1.2; }) == "adapt.alpha");
  CHECK(field([](AdaptConfig& c) { c.interval_steps = 0; }) == "adapt.interval_steps");
  CHECK(field([](AdaptConfig& c) { c.c_max = 2000; }) == "adapt.c_max");
  CHECK(field([](AdaptConfig& c) { c.c_min = 50; c.c_max = 10; }) == "adapt.c_min");
  CHECK(field([](AdaptConfig& c) { c.initial_rank = 17; }) == "adapt.initial_rank");
  CHECK(field([](AdaptConfig&) {}).empty());
}
