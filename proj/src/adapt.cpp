// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "liveupdate/config_error.hpp"
#include "liveupdate/random.hpp"

namespace liveupdate::adapt {

// ---------------------------------------------------------------------------
// AdaptConfig

AdaptConfig AdaptConfig::resolved(std::size_t vocab) const {
  AdaptConfig c = *this;
  if (c.c_max == 0) c.c_max = vocab;
  if (c.c_min == 0) c.c_min = std::max<std::size_t>(1, vocab / 50);
  c.c_min = std::min(c.c_min, c.c_max);
  return c;
}

std::size_t AdaptConfig::initial_capacity(std::size_t vocab) const {
  const AdaptConfig c = resolved(vocab);
  const auto hot = static_cast<std::size_t>(std::ceil(hot_fraction * static_cast<double>(vocab)));
  return std::clamp(hot, c.c_min, c.c_max);
}

void AdaptConfig::validate(std::size_t vocab, std::size_t dim) const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("adapt.alpha", "must be in (0, 1]");
  if (interval_steps == 0) throw ConfigError("adapt.interval_steps", "must be >= 1");
  if (snapshot_stride == 0) throw ConfigError("adapt.snapshot_stride", "must be >= 1");
  if (reservoir_size == 0) throw ConfigError("adapt.reservoir_size", "must be >= 1");
  if (c_max > vocab) throw ConfigError("adapt.c_max", "exceeds the vocabulary size");
  if (c_min != 0 && c_max != 0 && c_min > c_max) {
    throw ConfigError("adapt.c_min", "must not exceed c_max");
  }
  if (!(hot_fraction > 0.0 && hot_fraction <= 1.0)) {
    throw ConfigError("adapt.hot_fraction", "must be in (0, 1]");
  }
  if (initial_rank == 0 || initial_rank > dim) {
    throw ConfigError("adapt.initial_rank", "must be in [1, dim]");
  }
}

// ---------------------------------------------------------------------------
// GradientReservoir

GradientReservoir::GradientReservoir(std::size_t dim, std::size_t capacity, std::uint64_t seed)
    : dim_(dim), capacity_(capacity), rng_(seed) {
  if (dim == 0 || capacity == 0) throw std::invalid_argument("reservoir dim and capacity must be positive");
  rows_.reserve(std::min<std::size_t>(capacity, 1 << 14));
}

void GradientReservoir::offer(std::size_t step, std::span<const double> gradient) {
  if (gradient.size() != dim_) throw std::invalid_argument("gradient row length differs from dim");
  ++seen_;
  if (rows_.size() < capacity_) {
    rows_.push_back({step, {gradient.begin(), gradient.end()}});
    return;
  }
  const std::uint64_t j = std::uniform_int_distribution<std::uint64_t>(0, seen_ - 1)(rng_);
  if (j < capacity_) rows_[j] = {step, {gradient.begin(), gradient.end()}};
}

lowrank::Matrix GradientReservoir::snapshot() const {
  lowrank::Matrix g(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows_[r].row[j];
    }
  }
  return g;
}

bool GradientReservoir::close_snapshot() {
  if (rows_.empty()) return false;
  history_.push_back(lowrank::spectrum_of(snapshot()));
  rows_.clear();
  seen_ = 0;
  return true;
}

// ---------------------------------------------------------------------------
// UsageTracker

UsageTracker::UsageTracker(std::size_t window_steps) : window_(window_steps) {
  if (window_steps == 0) throw std::invalid_argument("usage window must be >= 1 step");
}

void UsageTracker::add(Counts& c, std::span<const Index> ids) {
  for (Index i : ids) ++c[i];
}

void UsageTracker::remove(Counts& c, std::span<const Index> ids) {
  for (Index i : ids) {
    auto it = c.find(i);
    if (--it->second == 0) c.erase(it);
  }
}

void UsageTracker::record_step(std::span<const Index> updated, std::span<const Index> accessed) {
  steps_.push_back({{updated.begin(), updated.end()}, {accessed.begin(), accessed.end()}});
  add(updates_, updated);
  add(accesses_, accessed);
  total_accesses_ += accessed.size();
  while (steps_.size() > window_) {
    const Step& old = steps_.front();
    remove(updates_, old.updated);
    remove(accesses_, old.accessed);
    total_accesses_ -= old.accessed.size();
    steps_.pop_front();
  }
}

std::uint64_t UsageTracker::update_count(Index i) const {
  auto it = updates_.find(i);
  return it == updates_.end() ? 0 : it->second;
}

std::uint64_t UsageTracker::access_count(Index i) const {
  auto it = accesses_.find(i);
  return it == accesses_.end() ? 0 : it->second;
}

void UsageTracker::clear() {
  steps_.clear();
  updates_.clear();
  accesses_.clear();
  total_accesses_ = 0;
}

// ---------------------------------------------------------------------------
// Rank and threshold

RankDecision rank_adaptation(std::span<const lowrank::Spectrum> history, double alpha,
                             std::size_t current_rank, std::size_t max_rank) {
  if (history.empty()) return {current_rank, true};
  std::size_t sum = 0;
  for (const auto& s : history) sum += lowrank::select_rank(s, alpha).rank;
  const std::size_t n = history.size();
  const std::size_t r = (sum + n - 1) / n;
  return {std::clamp<std::size_t>(r, 1, max_rank), false};
}

RankDecision rank_adaptation(const GradientReservoir& reservoir, const AdaptConfig& config,
                             std::size_t current_rank) {
  return rank_adaptation(reservoir.history(), config.alpha, current_rank, reservoir.dim());
}

std::size_t update_tau(const UsageTracker& tracker, std::size_t vocab, double hot_fraction,
                       std::size_t current) {
  const auto& counts = tracker.access_counts();
  if (counts.empty()) return current;
  const auto boundary = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(hot_fraction * static_cast<double>(vocab) - 1e-9)));
  if (counts.size() < boundary) return 1;
  std::vector<std::uint64_t> values;
  values.reserve(counts.size());
  for (const auto& [i, c] : counts) values.push_back(c);
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(boundary - 1);
  std::nth_element(values.begin(), nth, values.end(), std::greater<>());
  return std::max<std::size_t>(1, *nth);
}

// ---------------------------------------------------------------------------
// Pruning

namespace {

std::uint64_t count_of(const UsageTracker::Counts& c, Index i) {
  auto it = c.find(i);
  return it == c.end() ? 0 : it->second;
}

}  // namespace

AdaptReport prune_and_resize(const UsageTracker::Counts& update_counts, std::size_t tau,
                             std::size_t c_min, std::size_t c_max, EmbeddingTable& table,
                             LoraAdapter& adapter, HotIndexFilter& filter,
                             std::span<const Index> keep) {
  if (c_min > c_max || c_max > table.rows()) throw std::invalid_argument("invalid capacity bounds");
  AdaptReport report;
  report.old_rank = report.new_rank = adapter.rank();
  report.old_capacity = adapter.capacity();
  report.tau = tau;

  std::size_t active = 0;
  for (const auto& [i, f] : update_counts) {
    if (f >= tau && i < table.rows()) ++active;
  }

  std::vector<Index> kept(keep.begin(), keep.end());
  std::sort(kept.begin(), kept.end());
  for (Index i : adapter.sorted_indices()) {
    if (count_of(update_counts, i) >= tau) continue;
    if (std::binary_search(kept.begin(), kept.end(), i)) continue;
    fold_row(table, adapter, filter, i);
    report.folded_indices.push_back(i);
  }

  const std::size_t capacity = std::clamp(active, c_min, c_max);
  if (adapter.size() > capacity) {
    std::vector<Index> rest = adapter.sorted_indices();
    std::stable_sort(rest.begin(), rest.end(), [&](Index a, Index b) {
      return count_of(update_counts, a) < count_of(update_counts, b);
    });
    for (std::size_t n = 0; adapter.size() > capacity; ++n) {
      fold_row(table, adapter, filter, rest[n]);
      report.folded_indices.push_back(rest[n]);
    }
  }
  adapter.set_capacity(capacity);
  std::sort(report.folded_indices.begin(), report.folded_indices.end());
  report.pruned_count = report.folded_indices.size();
  report.new_capacity = adapter.capacity();
  return report;
}

// ---------------------------------------------------------------------------
// Cycle

AdaptState::AdaptState(const AdaptConfig& cfg, std::size_t vocab_size, std::size_t dim,
                       std::uint64_t seed_)
    : config(cfg.resolved(vocab_size)),
      vocab(vocab_size),
      tracker(cfg.interval_steps),
      reservoir(dim, cfg.reservoir_size, derive_seed(seed_, 11)),
      tau(cfg.tau_prune),
      seed(seed_) {
  config.validate(vocab_size, dim);
}

bool AdaptState::end_step(std::size_t step) {
  if ((step + 1) % config.snapshot_stride == 0) reservoir.close_snapshot();
  return (step + 1) % config.interval_steps == 0;
}

AdaptSnapshot take_snapshot(const AdaptState& state, const AdaptedTable& table, std::size_t step) {
  AdaptSnapshot s;
  s.step = step;
  s.vocab = state.vocab;
  s.tau = state.tau;
  s.spectra = state.reservoir.history();
  s.tracker = state.tracker;
  table.read([&](const EmbeddingTable& w, const LoraAdapter& a, const HotIndexFilter&) {
    s.dim = w.dim();
    s.rank = a.rank();
    s.capacity = a.capacity();
    s.hot = a.sorted_indices();
    const auto k = static_cast<Eigen::Index>(a.rank());
    const auto d = static_cast<Eigen::Index>(w.dim());
    s.a_active.resize(static_cast<Eigen::Index>(s.hot.size()), k);
    for (std::size_t r = 0; r < s.hot.size(); ++r) {
      auto row = a.row(s.hot[r]);
      for (Eigen::Index c = 0; c < k; ++c) s.a_active(static_cast<Eigen::Index>(r), c) = row[c];
    }
    s.b.resize(k, d);
    for (Eigen::Index r = 0; r < k; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) s.b(r, c) = a.b()[r * d + c];
    }
  });
  return s;
}

namespace {

// Orthonormal basis of the row space of b (d x rank(b)).
lowrank::Matrix row_space(const lowrank::Matrix& b) {
  if (b.rows() == 0) return lowrank::Matrix(b.cols(), 0);
  const lowrank::SvdResult svd = lowrank::full_svd(b);
  const double tol = svd.sigma.size() ? svd.sigma(0) * 1e-10 : 0.0;
  Eigen::Index r = 0;
  while (r < svd.sigma.size() && svd.sigma(r) > tol) ++r;
  return svd.v.leftCols(r);
}

}  // namespace

AdaptPlan plan_cycle(const AdaptSnapshot& snap, const AdaptConfig& cfg, std::uint64_t seed) {
  const AdaptConfig config = cfg.resolved(snap.vocab);
  AdaptPlan plan;
  plan.step = snap.step;
  plan.old_rank = snap.rank;
  plan.new_rank = snap.rank;
  if (config.adapt_rank) {
    plan.new_rank = rank_adaptation(snap.spectra, config.alpha, snap.rank, snap.dim).rank;
  }
  std::mt19937_64 rng(seed);
  if (plan.new_rank < plan.old_rank) {
    lowrank::Matrix v = lowrank::dominant_right_subspace(snap.a_active, snap.b, plan.new_rank);
    const auto missing = plan.new_rank - static_cast<std::size_t>(v.cols());
    if (missing > 0) {
      lowrank::Matrix extra = lowrank::orthonormal_complement_rows(v, missing, snap.dim, rng);
      lowrank::Matrix full(v.rows(), static_cast<Eigen::Index>(plan.new_rank));
      full << v, extra.transpose();
      v = std::move(full);
    }
    plan.subspace = std::move(v);
  } else if (plan.new_rank > plan.old_rank) {
    plan.growth = lowrank::orthonormal_complement_rows(row_space(snap.b), plan.new_rank - plan.old_rank, snap.dim, rng);
  }

  plan.prune = config.prune;
  plan.tau = snap.tau;
  plan.c_min = config.c_min;
  plan.c_max = config.c_max;
  if (config.prune) {
    plan.tau = update_tau(snap.tracker, snap.vocab, config.hot_fraction, snap.tau);
    plan.snapshot_hot = snap.hot;
    plan.update_counts = snap.tracker.update_counts();
  }
  return plan;
}

AdaptReport apply_plan(const AdaptPlan& plan, AdaptedTable& table) {
  return table.write([&](EmbeddingTable& w, LoraAdapter& a, HotIndexFilter& f) {
    if (a.rank() != plan.old_rank) throw std::logic_error("adapter rank changed under a pending plan");
    const std::size_t d = w.dim();
    const std::size_t k = plan.old_rank;
    const std::size_t kn = plan.new_rank;
    const std::size_t old_capacity = a.capacity();

    if (kn != k) {
      LoraAdapter::RowMap rows;
      std::vector<float> b(kn * d, 0.0f);
      if (kn < k) {
        // P = B V (k x kn); A' = A P; B' = V^T.
        lowrank::Matrix bm(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < k; ++r) {
          for (std::size_t c = 0; c < d; ++c) bm(r, c) = a.b()[r * d + c];
        }
        const lowrank::Matrix p = bm * plan.subspace;
        for (const auto& [i, row] : a.rows()) {
          std::vector<float> out(kn);
          for (std::size_t c = 0; c < kn; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < k; ++r) acc += static_cast<double>(row[r]) * p(r, c);
            out[c] = static_cast<float>(acc);
          }
          rows.emplace(i, std::move(out));
        }
        for (std::size_t r = 0; r < kn; ++r) {
          for (std::size_t c = 0; c < d; ++c) b[r * d + c] = static_cast<float>(plan.subspace(c, r));
        }
      } else {
        for (const auto& [i, row] : a.rows()) {
          std::vector<float> out(kn, 0.0f);
          std::copy(row.begin(), row.end(), out.begin());
          rows.emplace(i, std::move(out));
        }
        std::copy(a.b().begin(), a.b().end(), b.begin());
        for (std::size_t r = 0; r < kn - k; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            b[(k + r) * d + c] = static_cast<float>(plan.growth(r, c));
          }
        }
      }
      a.reshape(kn, std::move(rows), std::move(b));
    }

    AdaptReport report;
    if (plan.prune) {
      std::vector<Index> added;
      for (Index i : a.sorted_indices()) {
        if (!std::binary_search(plan.snapshot_hot.begin(), plan.snapshot_hot.end(), i)) {
          added.push_back(i);
        }
      }
      report = prune_and_resize(plan.update_counts, plan.tau, plan.c_min, plan.c_max, w, a, f, added);
    } else {
      report.new_capacity = a.capacity();
    }
    report.step = plan.step;
    report.old_rank = k;
    report.new_rank = kn;
    report.old_capacity = old_capacity;
    report.tau = plan.tau;
    return report;
  });
}

AdaptReport run_adaptation_cycle(AdaptState& state, AdaptedTable& table, std::size_t step) {
  const AdaptSnapshot snap = take_snapshot(state, table, step);
  state.reservoir.clear_history();
  const AdaptPlan plan = plan_cycle(snap, state.config, derive_seed(state.seed, 100 + state.cycles));
  ++state.cycles;
  AdaptReport report = apply_plan(plan, table);
  state.tau = plan.tau;
  return report;
}

void BackgroundCycle::start(AdaptState& state, const AdaptedTable& table, std::size_t step) {
  if (pending()) throw std::logic_error("adaptation cycle already in flight");
  AdaptSnapshot snap = take_snapshot(state, table, step);
  state.reservoir.clear_history();
  const AdaptConfig config = state.config;
  const std::uint64_t seed = derive_seed(state.seed, 100 + state.cycles);
  ++state.cycles;
  future_ = std::async(std::launch::async, [snap = std::move(snap), config, seed] {
    return plan_cycle(snap, config, seed);
  });
}

bool BackgroundCycle::ready() const {
  return pending() && future_.wait_for(std::chrono::seconds(0)) == std::future_status::ready;
}

AdaptReport BackgroundCycle::finish(AdaptState& state, AdaptedTable& table) {
  if (!pending()) throw std::logic_error("no adaptation cycle in flight");
  const AdaptPlan plan = future_.get();
  AdaptReport report = apply_plan(plan, table);
  state.tau = plan.tau;
  return report;
}

double memory_proxy(std::size_t capacity, std::size_t rank, std::size_t vocab, std::size_t dim) {
  return static_cast<double>(capacity * rank + rank * dim) / static_cast<double>(vocab * dim);
}

void write_report_header(std::ostream& out) {
  out << "step,old_rank,new_rank,old_capacity,new_capacity,pruned_count\n";
}

void write_report_csv(std::ostream& out, const AdaptReport& r) {
  out << r.step << ',' << r.old_rank << ',' << r.new_rank << ',' << r.old_capacity << ','
      << r.new_capacity << ',' << r.pruned_count << '\n';
}

}  // namespace liveupdate::adapt
