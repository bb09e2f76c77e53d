// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "liveupdate/adapt.hpp"
#include "liveupdate/lowrank.hpp"
#include "liveupdate/random.hpp"

namespace liveupdate::trainer {

ToyDlrm::ToyDlrm(std::vector<std::unique_ptr<AdaptedTable>> tables, DenseTower tower,
                 std::size_t dense_features)
    : tables_(std::move(tables)), tower_(std::move(tower)), dense_features_(dense_features) {
  if (tables_.empty()) throw std::invalid_argument("model needs at least one table");
  const std::size_t d = tables_.front()->dim();
  for (const auto& t : tables_) {
    if (t->dim() != d) throw std::invalid_argument("all tables must share one dim");
  }
  if (tower_.input_dim != tables_.size() * d + dense_features_) {
    throw std::invalid_argument("tower input_dim must equal tables * dim + dense features");
  }
}

ToyDlrm ToyDlrm::create(const std::vector<std::vector<float>>& base_weights, std::size_t dim,
                        DenseTower tower, std::size_t dense_features, std::size_t rank,
                        std::span<const std::size_t> capacities, std::uint64_t seed) {
  if (capacities.size() != base_weights.size()) {
    throw std::invalid_argument("one capacity per table required");
  }
  std::vector<std::unique_ptr<AdaptedTable>> tables;
  for (std::size_t t = 0; t < base_weights.size(); ++t) {
    const std::size_t rows = base_weights[t].size() / dim;
    EmbeddingTable table(static_cast<std::uint32_t>(t), rows, dim, base_weights[t]);
    LoraAdapter adapter(dim, rank, capacities[t], rows);
    std::mt19937_64 rng(derive_seed(seed, 200 + t));
    const lowrank::Matrix b = lowrank::orthonormal_complement_rows(
        lowrank::Matrix(static_cast<Eigen::Index>(dim), 0), rank, dim, rng);
    std::vector<float> bf(rank * dim);
    for (std::size_t r = 0; r < rank; ++r) {
      for (std::size_t j = 0; j < dim; ++j) bf[r * dim + j] = static_cast<float>(b(r, j));
    }
    adapter.set_b(bf);
    tables.push_back(std::make_unique<AdaptedTable>(std::move(table), std::move(adapter)));
  }
  return ToyDlrm(std::move(tables), std::move(tower), dense_features);
}

namespace {

void check_sample(const ToyDlrm& model, const Sample& s) {
  if (s.ids.size() != model.table_count()) {
    throw std::invalid_argument("sample has ids for " + std::to_string(s.ids.size()) +
                                " tables, model has " + std::to_string(model.table_count()));
  }
  for (std::size_t t = 0; t < s.ids.size(); ++t) {
    if (s.ids[t].empty()) throw std::invalid_argument("sample has no id for a table");
  }
  if (s.dense.size() != model.dense_features()) {
    throw std::invalid_argument("dense feature count mismatch");
  }
}

}  // namespace

double logit(const ToyDlrm& model, const Sample& s) {
  check_sample(model, s);
  const std::size_t d = model.dim();
  std::vector<double> z(model.tower().input_dim);
  for (std::size_t t = 0; t < model.table_count(); ++t) {
    const EmbeddingVector pooled = model.table(t).pooled_lookup(s.ids[t]);
    for (std::size_t j = 0; j < d; ++j) z[t * d + j] = pooled.values[j];
  }
  const std::size_t off = model.table_count() * d;
  for (std::size_t f = 0; f < s.dense.size(); ++f) z[off + f] = s.dense[f];
  return model.tower().logit(z);
}

std::vector<double> forward(const ToyDlrm& model, std::span<const Sample> batch) {
  if (batch.empty()) throw std::invalid_argument("forward of an empty batch");
  std::vector<double> out;
  out.reserve(batch.size());
  for (const Sample& s : batch) out.push_back(sigmoid(logit(model, s)));
  return out;
}

Gradients compute_gradients(const ToyDlrm& model, std::span<const Sample> batch) {
  if (batch.empty()) throw std::invalid_argument("gradient of an empty batch");
  const std::size_t d = model.dim();
  const std::size_t nt = model.table_count();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Sample& s : batch) check_sample(model, s);

  Gradients g;
  g.tables.resize(nt);
  // Forward/backward per sample in double. Row values are memoised per table.
  std::vector<std::unordered_map<Index, std::vector<double>>> cache(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    model.table(t).read([&](const EmbeddingTable& w, const LoraAdapter& a, const HotIndexFilter& f) {
      for (const Sample& s : batch) {
        for (Index i : s.ids[t]) {
          if (i >= w.rows()) throw std::out_of_range("embedding index " + std::to_string(i) + " out of range");
          auto [it, fresh] = cache[t].try_emplace(i);
          if (fresh) {
            it->second.resize(d);
            accumulate_row(w, a, f, i, it->second);
          }
        }
      }
    });
  }

  std::vector<double> z(model.tower().input_dim);
  std::vector<double> dz(model.tower().input_dim);
  for (const Sample& s : batch) {
    for (std::size_t t = 0; t < nt; ++t) {
      const double inv = 1.0 / static_cast<double>(s.ids[t].size());
      for (std::size_t j = 0; j < d; ++j) z[t * d + j] = 0.0;
      for (Index i : s.ids[t]) {
        const auto& e = cache[t][i];
        for (std::size_t j = 0; j < d; ++j) z[t * d + j] += e[j];
      }
      for (std::size_t j = 0; j < d; ++j) z[t * d + j] *= inv;
    }
    for (std::size_t f = 0; f < s.dense.size(); ++f) z[nt * d + f] = s.dense[f];
    const double l = model.tower().logit(z);
    g.loss += bce_from_logit(l, s.label) * inv_n;
    const double dlogit = (sigmoid(l) - static_cast<double>(s.label)) * inv_n;
    model.tower().backward(z, dlogit, dz);
    for (std::size_t t = 0; t < nt; ++t) {
      const double inv = 1.0 / static_cast<double>(s.ids[t].size());
      for (Index i : s.ids[t]) {
        auto& row = g.tables[t].rows[i];
        row.resize(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) row[j] += dz[t * d + j] * inv;
        g.tables[t].touched.push_back(i);
      }
    }
  }

  // Chain through E_i = W_i + A_i B.
  for (std::size_t t = 0; t < nt; ++t) {
    auto& tg = g.tables[t];
    model.table(t).read([&](const EmbeddingTable&, const LoraAdapter& a, const HotIndexFilter& f) {
      const std::size_t k = a.rank();
      auto b = a.b();
      tg.b.assign(k * d, 0.0);
      std::vector<Index> order;
      order.reserve(tg.rows.size());
      for (const auto& [i, de] : tg.rows) order.push_back(i);
      std::sort(order.begin(), order.end());
      for (Index i : order) {
        const auto& de = tg.rows.at(i);
        std::vector<double> da(k, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j) acc += de[j] * static_cast<double>(b[r * d + j]);
          da[r] = acc;
        }
        tg.a.emplace(i, std::move(da));
        if (!f.is_hot(i)) continue;
        auto ai = a.row(i);
        for (std::size_t r = 0; r < k; ++r) {
          const double ar = ai[r];
          if (ar == 0.0) continue;
          for (std::size_t j = 0; j < d; ++j) tg.b[r * d + j] += ar * de[j];
        }
      }
    });
  }
  return g;
}

TrainStepStats train_step(ToyDlrm& model, std::span<const Sample> batch, double learning_rate,
                          std::size_t step, const TrainHooks* hooks) {
  TrainStepStats stats;
  stats.step = step;
  stats.batch_size = batch.size();
  const std::size_t nt = model.table_count();
  stats.touched.assign(nt, 0);
  stats.skipped.assign(nt, 0);
  stats.modified.resize(nt);
  stats.b_modified.assign(nt, false);
  if (batch.empty()) return stats;

  Gradients g = compute_gradients(model, batch);
  stats.loss = g.loss;
  if (!std::isfinite(g.loss)) {
    stats.aborted = true;
    return stats;
  }

  const std::size_t d = model.dim();
  double norm_a = 0.0;
  double norm_b = 0.0;
  for (std::size_t t = 0; t < nt; ++t) {
    auto& tg = g.tables[t];
    stats.touched[t] = tg.rows.size();
    for (const auto& [i, da] : tg.a) {
      for (double x : da) norm_a += x * x;
    }
    for (double x : tg.b) norm_b += x * x;

    std::vector<Index> order;
    order.reserve(tg.a.size());
    for (const auto& [i, da] : tg.a) order.push_back(i);
    std::sort(order.begin(), order.end());

    model.table(t).write([&](EmbeddingTable&, LoraAdapter& a, HotIndexFilter& f) {
      const std::size_t k = a.rank();
      if (tg.b.size() != k * d) throw std::logic_error("adapter rank changed during a train step");
      std::vector<float> next(k);
      for (Index i : order) {
        const auto& da = tg.a.at(i);
        auto cur = a.row(i);
        bool changed = false;
        for (std::size_t r = 0; r < k; ++r) {
          const float old = cur.empty() ? 0.0f : cur[r];
          next[r] = static_cast<float>(static_cast<double>(old) - learning_rate * da[r]);
          changed = changed || next[r] != old;
        }
        if (!changed) continue;
        if (!a.set_row(i, next)) {
          ++stats.skipped[t];
          continue;
        }
        f.insert(i);
        stats.modified[t].push_back(i);
      }
      auto b = a.b();
      std::vector<float> nb(b.begin(), b.end());
      bool b_changed = false;
      for (std::size_t e = 0; e < k * d; ++e) {
        nb[e] = static_cast<float>(static_cast<double>(b[e]) - learning_rate * tg.b[e]);
        b_changed = b_changed || nb[e] != b[e];
      }
      if (b_changed) a.set_b(nb);
      stats.b_modified[t] = b_changed;
    });

    if (hooks && t < hooks->adapt.size() && hooks->adapt[t]) {
      adapt::AdaptState& st = *hooks->adapt[t];
      st.tracker.record_step(tg.touched, tg.touched);
      for (Index i : order) st.reservoir.offer(step, tg.rows.at(i));
    }
  }
  stats.grad_norm_a = std::sqrt(norm_a);
  stats.grad_norm_b = std::sqrt(norm_b);
  return stats;
}

std::vector<Sample> sample_batch(const workload::RingBuffer& buffer, std::size_t batch_size,
                                 double window, double now, std::mt19937_64& rng) {
  std::vector<Sample> out;
  const double horizon = std::min(window, buffer.retention());
  const std::size_t first = buffer.first_after(now - horizon);
  if (first >= buffer.size() || batch_size == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(first, buffer.size() - 1);
  out.reserve(batch_size);
  for (std::size_t n = 0; n < batch_size; ++n) out.push_back(buffer[pick(rng)]);
  return out;
}

void write_stats_header(std::ostream& out) {
  out << "step,batch_size,loss,aborted,touched,skipped,grad_norm_a,grad_norm_b\n";
}

void write_stats_csv(std::ostream& out, const TrainStepStats& s) {
  std::size_t touched = 0;
  std::size_t skipped = 0;
  for (auto n : s.touched) touched += n;
  for (auto n : s.skipped) skipped += n;
  out << s.step << ',' << s.batch_size << ',' << s.loss << ',' << (s.aborted ? 1 : 0) << ','
      << touched << ',' << skipped << ',' << s.grad_norm_a << ',' << s.grad_norm_b << '\n';
}

}  // namespace liveupdate::trainer
