// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <deque>
#include <random>
#include <sstream>

#include "doctest.h"
#include "liveupdate/workload.hpp"

using namespace liveupdate;
using namespace liveupdate::workload;

namespace {

// Share of accesses landing on the top 10% of ranks, via the rank -> id map.
double empirical_top_share(const WorkloadSpec& spec) {
  StreamGenerator gen(spec);
  const auto& perm = gen.permutation(0);
  const std::size_t top = (spec.table_rows[0] + 9) / 10;
  std::vector<char> is_top(spec.table_rows[0], 0);
  for (std::size_t r = 0; r < top; ++r) is_top[perm[r]] = 1;
  std::size_t hits = 0, total = 0;
  while (auto s = gen.next()) {
    for (Index id : s->ids[0]) {
      hits += is_top[id];
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

WorkloadSpec small_spec() {
  WorkloadSpec s;
  s.table_rows = {2000};
  s.rate_per_minute = 2000;
  s.horizon_minutes = 20;
  return s;
}

}  // namespace

TEST_CASE("zipf sampler matches the analytic cdf") {
  const std::size_t n = 1000;
  const double s = 1.1;
  ZipfSampler z(n, s);
  std::vector<double> cdf(n);
  double norm = 0.0;
  for (std::size_t r = 0; r < n; ++r) norm += 1.0 / std::pow(r + 1.0, s);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += 1.0 / std::pow(r + 1.0, s) / norm;
    cdf[r] = acc;
  }
  std::mt19937_64 rng(3);
  const std::size_t draws = 200000;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t i = 0; i < draws; ++i) ++counts[z.sample(rng)];
  double ks = 0.0;
  std::size_t run = 0;
  for (std::size_t r = 0; r < n; ++r) {
    run += counts[r];
    ks = std::max(ks, std::abs(static_cast<double>(run) / draws - cdf[r]));
  }
  CHECK(ks < 0.01);
  CHECK_THROWS(ZipfSampler(0, 1.0));
  CHECK_THROWS(ZipfSampler(10, 0.0));
}

TEST_CASE("near-uniform exponent spreads accesses evenly") {
  auto spec = small_spec();
  spec.zipf_exponent = 1e-6;
  CHECK(empirical_top_share(spec) == doctest::Approx(0.10).epsilon(0.1));
}

TEST_CASE("calibrated exponent concentrates 93.8% on the top decile") {
  const auto spec = small_spec();
  CHECK(top_share(2000, spec.resolved_exponent(0), 0.1) == doctest::Approx(0.938).epsilon(1e-6));
  CHECK(std::abs(empirical_top_share(spec) - 0.938) < 0.015);
}

TEST_CASE("stream is deterministic per seed and ordered in time") {
  auto spec = small_spec();
  spec.horizon_minutes = 3;
  const auto a = generate_stream(spec);
  const auto b = generate_stream(spec);
  CHECK(a == b);
  spec.seed = 2;
  CHECK(generate_stream(spec) != a);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].timestamp >= a[i - 1].timestamp);
  for (const auto& s : a) {
    CHECK(s.timestamp < spec.horizon_minutes);
    CHECK(s.dense.size() == spec.dense_features);
    CHECK((s.label == 0 || s.label == 1));
  }
  // Rate jitter stays inside its band.
  const double per_min = static_cast<double>(a.size()) / spec.horizon_minutes;
  CHECK(per_min >= spec.rate_per_minute * (1 - spec.rate_jitter) - 1);
  CHECK(per_min <= spec.rate_per_minute * (1 + spec.rate_jitter) + 1);
}

TEST_CASE("workload validation names the field") {
  auto bad = [](auto mutate) {
    WorkloadSpec s;
    mutate(s);
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(bad([](WorkloadSpec& s) { s.table_rows.clear(); }).find("table_rows") != std::string::npos);
  CHECK(bad([](WorkloadSpec& s) { s.dim = 0; }).find("dim") != std::string::npos);
  CHECK(bad([](WorkloadSpec& s) { s.rate_per_minute = -1; }).find("rate_per_minute") != std::string::npos);
  CHECK(bad([](WorkloadSpec& s) { s.horizon_minutes = 0; }).find("horizon_minutes") != std::string::npos);
  CHECK(bad([](WorkloadSpec& s) { s.zipf_exponent = -2.0; }).find("zipf_exponent") != std::string::npos);
  CHECK(bad([](WorkloadSpec&) {}).empty());
}

TEST_CASE("ring buffer evicts by capacity and retention like a deque") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> gap(0.0, 0.4);
  std::uniform_int_distribution<int> action(0, 9);
  RingBuffer buf(37, 5.0);
  std::deque<double> oracle;
  double t = 0.0;
  for (int n = 0; n < 20000; ++n) {
    t += gap(rng);
    if (action(rng) == 0) {
      const auto before = oracle.size();
      while (!oracle.empty() && t - oracle.front() > 5.0) oracle.pop_front();
      CHECK(buf.evict_expired(t) == before - oracle.size());
    } else {
      Sample s;
      s.timestamp = t;
      buf.ingest(s);
      while (!oracle.empty() && t - oracle.front() > 5.0) oracle.pop_front();
      if (oracle.size() == 37) oracle.pop_front();
      oracle.push_back(t);
    }
    REQUIRE(buf.size() == oracle.size());
    if (!oracle.empty()) {
      CHECK(buf[0].timestamp == oracle.front());
      CHECK(buf[buf.size() - 1].timestamp == oracle.back());
    }
  }
  Sample old;
  old.timestamp = t - 1.0;
  CHECK_THROWS_AS(buf.ingest(old), std::invalid_argument);
  CHECK_THROWS(RingBuffer(0));
}

TEST_CASE("first_after is a binary search over timestamps") {
  RingBuffer buf(10, 100.0);
  for (double ts : {1.0, 2.0, 2.0, 3.0, 5.0}) {
    Sample s;
    s.timestamp = ts;
    buf.ingest(s);
  }
  CHECK(buf.first_after(0.0) == 0);
  CHECK(buf.first_after(2.0) == 3);
  CHECK(buf.first_after(4.0) == 4);
  CHECK(buf.first_after(5.0) == 5);
}

TEST_CASE("trace round trip keeps samples and workload settings") {
  auto spec = small_spec();
  spec.horizon_minutes = 1;
  spec.table_rows = {100, 50};
  spec.max_ids_per_table = 3;
  spec.drift_minutes = {0.5};
  const auto samples = generate_stream(spec);
  std::stringstream io;
  write_trace(io, samples, &spec);
  const auto tr = read_trace(io);
  REQUIRE(tr.spec.has_value());
  CHECK(tr.spec->table_rows == spec.table_rows);
  CHECK(tr.spec->drift_minutes == spec.drift_minutes);
  CHECK(tr.spec->seed == spec.seed);
  CHECK(tr.samples == samples);

  std::stringstream bad("{\"ts\": 1.0, \"ids\": 3}\n");
  CHECK_THROWS(read_trace(bad));
}

TEST_CASE("a preference shift raises the loss of a frozen model") {
  WorkloadSpec spec;
  spec.table_rows = {500};
  spec.embedding_scale = 1.0;
  spec.drift_magnitude = 2.0;
  spec.drift_minutes = {10.0};
  spec.rate_per_minute = 3000;
  spec.horizon_minutes = 20;
  StreamGenerator gen(spec);
  const GroundTruth& truth = gen.truth();
  const std::vector<std::vector<float>> frozen{truth.table_at(0, 0.0)};
  const std::vector<std::vector<float>> current{truth.table_at(0, 20.0)};
  CHECK(frozen != current);
  double before = 0, after = 0, after_true = 0;
  std::size_t nb = 0, na = 0;
  while (auto s = gen.next()) {
    if (s->timestamp < 10.0) {
      before += bce_from_logit(truth.logit(*s, frozen), s->label);
      ++nb;
    } else {
      after += bce_from_logit(truth.logit(*s, frozen), s->label);
      after_true += bce_from_logit(truth.logit(*s, current), s->label);
      ++na;
    }
  }
  before /= nb;
  after /= na;
  after_true /= na;
  CHECK(after > before + 0.02);
  CHECK(after > after_true + 0.02);
}
