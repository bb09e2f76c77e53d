// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "liveupdate/model_core.hpp"

using namespace liveupdate;

namespace {

std::vector<float> iota_weights(std::size_t rows, std::size_t d) {
  std::vector<float> w(rows * d);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.25f * static_cast<float>(i % 7) - 0.5f;
  return w;
}

// W[i] + sum_c A[i][c] B[c], long double, rounded once.
std::vector<float> naive_row(const std::vector<float>& w, const std::vector<float>& a,
                             const std::vector<float>& b, std::size_t i, std::size_t k, std::size_t d) {
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    long double acc = w[i * d + j];
    for (std::size_t c = 0; c < k; ++c) acc += static_cast<long double>(a[c]) * b[c * d + j];
    out[j] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace

TEST_CASE("hot lookup serves W + A B, cold lookup serves W") {
  const std::size_t rows = 10, d = 4, k = 2;
  const auto w = iota_weights(rows, d);
  EmbeddingTable table(0, rows, d, w);
  LoraAdapter adapter(d, k, 5, rows);
  HotIndexFilter filter;
  const std::vector<float> b{1, 0, 2, 0, 0, 1, 0, -1};
  adapter.set_b(b);
  const std::vector<float> a{0.5f, -2.0f};
  REQUIRE(adapter.set_row(3, a));
  filter.insert(3);

  const auto hot = lookup(table, adapter, filter, 3);
  CHECK(hot.values == naive_row(w, a, b, 3, k, d));
  // column 0 by hand: W + 0.5 * 1 + (-2) * 0
  CHECK(hot[0] == doctest::Approx(w[12] + 0.5f));
  const auto cold = lookup(table, adapter, filter, 4);
  CHECK(cold.values == std::vector<float>(w.begin() + 16, w.begin() + 20));
  CHECK_THROWS_AS(lookup(table, adapter, filter, rows), std::out_of_range);
}

TEST_CASE("pooled lookup is the mean of the rows") {
  EmbeddingTable table(0, 3, 2, {1, 2, 3, 4, 5, 6});
  LoraAdapter adapter(2, 1, 3, 3);
  HotIndexFilter filter;
  const Index ids[] = {0, 2};
  const auto p = pooled_lookup(table, adapter, filter, ids);
  CHECK(p[0] == doctest::Approx(3.0));
  CHECK(p[1] == doctest::Approx(4.0));
  CHECK_THROWS_AS(pooled_lookup(table, adapter, filter, std::span<const Index>{}), std::invalid_argument);
}

TEST_CASE("capacity rejects new rows but allows overwrites") {
  LoraAdapter adapter(4, 2, 2, 100);
  const std::vector<float> r{1, 1};
  CHECK(adapter.set_row(1, r));
  CHECK(adapter.set_row(2, r));
  CHECK_FALSE(adapter.set_row(3, r));
  CHECK(adapter.set_row(1, std::vector<float>{2, 2}));
  CHECK(adapter.size() == 2);
  CHECK_THROWS(adapter.set_capacity(1));
  CHECK(LoraAdapter(4, 2, 1000, 100).capacity() == 100);
}

TEST_CASE("fold keeps the served value bit for bit") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t rows = 50, d = 16, k = 5;
  std::vector<float> w(rows * d);
  for (float& x : w) x = static_cast<float>(n(rng));
  EmbeddingTable table(0, rows, d, w);
  LoraAdapter adapter(d, k, rows, rows);
  HotIndexFilter filter;
  std::vector<float> b(k * d);
  for (float& x : b) x = static_cast<float>(n(rng));
  adapter.set_b(b);
  for (Index i = 0; i < rows; i += 2) {
    std::vector<float> a(k);
    for (float& x : a) x = static_cast<float>(n(rng));
    adapter.set_row(i, a);
    filter.insert(i);
  }
  for (Index i = 0; i < rows; ++i) {
    const auto before = lookup(table, adapter, filter, i);
    const bool was_hot = filter.is_hot(i);
    CHECK(fold_row(table, adapter, filter, i) == was_hot);
    CHECK(lookup(table, adapter, filter, i) == before);
    CHECK_FALSE(filter.is_hot(i));
  }
  CHECK(adapter.size() == 0);
  CHECK(filter.matches(adapter));
}

TEST_CASE("full update replaces weights, bumps version and clears the adapter") {
  AdaptedTable t(EmbeddingTable(0, 4, 2), LoraAdapter(2, 1, 4, 4));
  t.publish_b(std::vector<float>{1, 1});
  t.publish_row(1, std::vector<float>{3});
  CHECK(t.hot_count() == 1);
  const auto v0 = t.version();
  t.full_update({1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(t.version() == v0 + 1);
  CHECK(t.hot_count() == 0);
  CHECK(t.lookup(1).values == std::vector<float>{3, 4});
  CHECK_THROWS_AS(t.full_update({1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(t.full_update(std::vector<float>(8, NAN)), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves every served value") {
  const std::size_t rows = 20, d = 3, k = 2;
  EmbeddingTable table(0, rows, d, iota_weights(rows, d));
  LoraAdapter adapter(d, k, 10, rows);
  adapter.set_b(std::vector<float>{0.5f, 1, 0, -1, 2, 0.25f});
  for (Index i : {2u, 9u, 17u}) adapter.set_row(i, std::vector<float>{static_cast<float>(i), -1});
  HotIndexFilter filter;
  for (Index i : {2u, 9u, 17u}) filter.insert(i);

  std::stringstream buf;
  save_checkpoint(buf, table, adapter);
  const auto cp = load_checkpoint(buf, 0, 10);
  CHECK(cp.adapter.rank() == k);
  CHECK(cp.adapter.size() == 3);
  CHECK(cp.adapter.capacity() == 10);
  for (Index i = 0; i < rows; ++i) {
    CHECK(lookup(cp.table, cp.adapter, cp.filter, i) == lookup(table, adapter, filter, i));
  }

  std::stringstream bad("LUPX garbage");
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  std::stringstream again;
  save_checkpoint(again, table, adapter);
  std::stringstream cut(again.str().substr(0, again.str().size() - 3));
  CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);
}

TEST_CASE("readers never see a half-written row") {
  const std::size_t d = 8;
  AdaptedTable t(EmbeddingTable(0, 4, d), LoraAdapter(d, 1, 4, 4));
  t.publish_b(std::vector<float>(d, 1.0f));
  std::atomic<bool> stop{false};
  std::atomic<int> torn{0};
  std::thread reader([&] {
    while (!stop) {
      const auto v = t.lookup(2);
      for (std::size_t j = 1; j < d; ++j) {
        if (v[j] != v[0]) ++torn;
      }
    }
  });
  for (int n = 0; n < 20000; ++n) {
    t.publish_row(2, std::vector<float>{static_cast<float>(n)});
    if (n % 10 == 0) t.fold(2);
  }
  stop = true;
  reader.join();
  CHECK(torn == 0);
}
