// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "doctest.h"
#include "liveupdate/config_error.hpp"
#include "liveupdate/scheduler.hpp"

using namespace liveupdate;
using namespace liveupdate::sched;

TEST_CASE("nearest-rank p99 on hand cases") {
  std::vector<double> a(100), b(200);
  std::iota(a.begin(), a.end(), 1.0);
  std::iota(b.begin(), b.end(), 1.0);
  std::shuffle(b.begin(), b.end(), std::mt19937_64(1));
  CHECK(measure_p99(a, 0.0).ms == 99.0);
  CHECK(measure_p99(b, 0.0).ms == 198.0);
  CHECK_FALSE(measure_p99(a, 0.0).held);
}

TEST_CASE("p99 agrees with a sorted nearest-rank oracle") {
  std::mt19937_64 rng(2);
  std::lognormal_distribution<double> lat(1.0, 0.7);
  for (int n = 0; n < 200; ++n) {
    std::vector<double> v(100 + rng() % 900);
    for (double& x : v) x = lat(rng);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto k = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(v.size()) - 1e-9));
    CHECK(measure_p99(v, 0.0).ms == sorted[k - 1]);
  }
}

TEST_CASE("too few samples hold the previous estimate") {
  std::vector<double> v(99, 50.0);
  const auto p = measure_p99(v, 7.5);
  CHECK(p.held);
  CHECK(p.ms == 7.5);
  CHECK(measure_p99(v, 7.5, 10).ms == 50.0);
}

TEST_CASE("step branches and bounds") {
  SchedulerConfig c;
  c.units = 6;
  c.min_inference = 2;
  c.max_training = 3;
  const auto s0 = PartitionState::initial(c);
  CHECK(s0.inference.size() == 3);
  CHECK(s0.training.size() == 3);
  CHECK(s0.valid(c));

  // Above the high threshold: a training unit serves.
  auto r = step(s0, 12.0, c);
  CHECK(r.moved == 1);
  CHECK(r.state.inference.size() == 4);
  CHECK(r.state.valid(c));
  // Band: nothing moves.
  CHECK(step(s0, 8.0, c).moved == 0);
  CHECK(step(s0, 8.0, c).state == s0);
  // Below the low threshold, but training is already at M_train.
  CHECK(step(s0, 1.0, c).moved == 0);
  // From 4/2, a low reading returns one unit to training.
  auto back = step(r.state, 1.0, c);
  CHECK(back.moved == -1);
  CHECK(back.state == s0);

  // Everything serving: a high reading has nothing to move.
  PartitionState all;
  for (int u = 0; u < 6; ++u) all.inference.insert(u);
  CHECK(step(all, 100.0, c).moved == 0);
  // m_inf floor.
  PartitionState floor;
  floor.inference = {0, 1};
  floor.training = {2, 3, 4, 5};
  CHECK_FALSE(floor.valid(c));
  c.max_training = 4;
  CHECK(floor.valid(c));
  CHECK(step(floor, 1.0, c).moved == 0);
}

TEST_CASE("initial partition respects m_inf when M_train is large") {
  SchedulerConfig c;
  c.units = 4;
  c.min_inference = 3;
  c.max_training = 4;
  const auto s = PartitionState::initial(c);
  CHECK(s.inference.size() == 3);
  CHECK(s.training.size() == 1);
}

TEST_CASE("scheduler config validation") {
  auto field = [](auto mutate) {
    SchedulerConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  CHECK(field([](SchedulerConfig& c) { c.t_low_ms = 20; }).find("scheduler.t_") == 0);
  CHECK(field([](SchedulerConfig& c) { c.units = 0; }) == "scheduler.units");
  CHECK(field([](SchedulerConfig& c) { c.min_inference = 9; }) == "scheduler.min_inference");
  CHECK(field([](SchedulerConfig&) {}).empty());
}

TEST_CASE("spsc queue is FIFO across threads") {
  SpscQueue<int> q(64);
  const int n = 200000;
  std::thread producer([&] {
    for (int i = 0; i < n; ++i) {
      while (!q.try_push(i)) std::this_thread::yield();
    }
  });
  int expect = 0;
  bool ordered = true;
  while (expect < n) {
    if (auto v = q.try_pop()) {
      ordered = ordered && *v == expect;
      ++expect;
    }
  }
  producer.join();
  CHECK(ordered);
  CHECK_FALSE(q.try_pop().has_value());
}

TEST_CASE("control loop recovers from a load step and stays put in the band") {
  SchedulerConfig c;
  DefaultLatencyModel m;
  const auto trace = run_control_loop(m, c, [](std::size_t cycle) { return cycle < 50 ? 0.5 : 1.5; }, 120, 3);
  REQUIRE(trace.size() == 120);
  for (const auto& row : trace) {
    CHECK(row.n_inference + row.n_training == c.units);
    CHECK(row.n_inference >= c.min_inference);
    CHECK(row.n_training <= c.max_training);
  }
  CHECK(trace.back().p99_ms < c.t_high_ms);
  // No move is taken while the measured p99 sits inside the band.
  for (const auto& row : trace) {
    if (!row.held && row.p99_ms > c.t_low_ms && row.p99_ms < c.t_high_ms) CHECK(row.moved == 0);
  }
}
