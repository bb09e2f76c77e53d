// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "liveupdate/lowrank.hpp"
#include "liveupdate/random.hpp"
#include "liveupdate/trainer.hpp"

namespace liveupdate::harness {

namespace {

using trainer::ToyDlrm;

double transfer_seconds(std::uint64_t bytes, double gbps) {
  return static_cast<double>(bytes) * 8.0 / (gbps * 1e9);
}

// Rows the training cluster would ship at `minute`: the planted tables as of
// minute - lag, plus estimation noise.
std::vector<float> cluster_table(const workload::GroundTruth& truth, const ExperimentConfig& c,
                                 std::size_t t, double minute) {
  std::vector<float> w = truth.table_at(t, std::max(0.0, minute - c.cluster.lag_minutes));
  if (c.cluster.noise > 0.0) {
    const auto tick = static_cast<std::uint64_t>(std::llround(minute * 60.0));
    std::mt19937_64 rng(derive_seed(derive_seed(c.seed, 0xC1u + t), tick));
    std::normal_distribution<double> n(0.0, c.cluster.noise);
    for (float& v : w) v = static_cast<float>(static_cast<double>(v) + n(rng));
  }
  return w;
}

// Random orthonormal k x d matrix, row-major floats.
std::vector<float> random_b(std::size_t rank, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  lowrank::Matrix rows = lowrank::orthonormal_complement_rows(lowrank::Matrix(dim, 0), rank, dim, rng);
  std::vector<float> out(rank * dim);
  for (std::size_t r = 0; r < rank; ++r) {
    for (std::size_t j = 0; j < dim; ++j) {
      out[r * dim + j] = static_cast<float>(rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)));
    }
  }
  return out;
}

struct Node {
  std::unique_ptr<ToyDlrm> model;
  std::unique_ptr<workload::RingBuffer> buffer;
  std::vector<std::unique_ptr<adapt::AdaptState>> adapt;
  std::mt19937_64 rng;
  std::vector<std::set<Index>> support;
  bool trained = false;
  std::size_t fresh = 0;  // samples ingested since the last tick
};

struct CostEvent {
  double minute;
  double seconds;
  std::uint64_t bytes;
};

class Runner {
 public:
  Runner(const ExperimentConfig& config, const std::vector<Sample>& trace)
      : c_(config), truth_(config.workload), trace_(trace) {
    const auto& spec = c_.workload;
    const std::size_t nodes = c_.strategy == Strategy::kLiveUpdate ? c_.nodes : 1;
    std::vector<std::vector<float>> base;
    for (std::size_t t = 0; t < spec.table_count(); ++t) {
      base.push_back(cluster_table(truth_, c_, t, 0.0));
      capacities_.push_back(c_.adapt.initial_capacity(spec.table_rows[t]));
    }
    for (std::size_t r = 0; r < nodes; ++r) {
      Node n;
      n.model = std::make_unique<ToyDlrm>(ToyDlrm::create(base, spec.dim, truth_.tower(),
                                                          spec.dense_features, c_.adapt.initial_rank,
                                                          capacities_, c_.seed));
      n.buffer = std::make_unique<workload::RingBuffer>(c_.trainer.buffer_capacity,
                                                        c_.trainer.retention_minutes);
      for (std::size_t t = 0; t < spec.table_count(); ++t) {
        n.adapt.push_back(std::make_unique<adapt::AdaptState>(
            c_.adapt, spec.table_rows[t], spec.dim, derive_seed(c_.seed, 400 + t)));
      }
      n.rng.seed(derive_seed(c_.seed, 600 + r));
      n.support.resize(spec.table_count());
      nodes_.push_back(std::move(n));
    }
    touched_.resize(spec.table_count());
    baseline_.resize(spec.table_count());
  }

  ScenarioResult run() {
    ScenarioResult result;
    result.config = c_;
    const double horizon = c_.workload.horizon_minutes;
    const double w = c_.eval_window_minutes;
    const double cad = c_.cadence_minutes;
    std::size_t next_tick = 1;
    std::size_t window = 0;
    std::size_t event_cursor = 0;
    double cumulative = 0.0;
    std::vector<double> scores;
    std::vector<int> labels;
    double bce_sum = 0.0;

    auto close_window = [&] {
      MetricsRow row;
      row.time_minutes = static_cast<double>(window + 1) * w;
      std::uint64_t bytes = 0;
      for (; event_cursor < events_.size(); ++event_cursor) {
        cumulative += events_[event_cursor].seconds;
        bytes += events_[event_cursor].bytes;
      }
      row.cost_seconds = cumulative;
      row.payload_bytes = bytes;
      row.memory_proxy = memory_proxy();
      row.samples = labels.size();
      if (!labels.empty()) {
        row.bce = bce_sum / static_cast<double>(labels.size());
        row.auroc = auroc(scores, labels);
        result.metrics.push_back(row);
      }
      scores.clear();
      labels.clear();
      bce_sum = 0.0;
      ++window;
    };

    std::size_t j = 0;
    for (const Sample& s : trace_) {
      if (s.timestamp >= horizon) break;
      for (;;) {
        const double wend = static_cast<double>(window + 1) * w;
        const double tick = static_cast<double>(next_tick) * cad;
        if (wend <= s.timestamp && wend <= tick) {
          close_window();
        } else if (tick <= s.timestamp) {
          run_tick(tick, result);
          ++next_tick;
        } else {
          break;
        }
      }
      Node& node = nodes_[j % nodes_.size()];
      const double z = trainer::logit(*node.model, s);
      scores.push_back(z);
      labels.push_back(s.label);
      bce_sum += bce_from_logit(z, s.label);
      for (std::size_t t = 0; t < s.ids.size(); ++t) {
        touched_[t].insert(s.ids[t].begin(), s.ids[t].end());
      }
      node.buffer->ingest(s);
      ++node.fresh;
      ++minute_counts_[static_cast<std::size_t>(s.timestamp)];
      ++j;
    }
    // Remaining windows and ticks. The tick at the horizon itself still runs
    // (and is charged to the last window) so every cadence trains on the
    // whole trace.
    constexpr double kEps = 1e-9;
    for (;;) {
      const double wend = static_cast<double>(window + 1) * w;
      const double tick = static_cast<double>(next_tick) * cad;
      const bool windows_left = static_cast<double>(window) * w < horizon - kEps;
      const bool ticks_left = tick <= horizon + kEps;
      if (!windows_left && !ticks_left) break;
      if (ticks_left &&
          (!windows_left || tick < wend || (tick <= wend && tick >= horizon - kEps))) {
        run_tick(tick, result);
        ++next_tick;
      } else {
        close_window();
      }
    }

    run_scheduler(result);
    result.cost = cost_;
    result.replicas_consistent = consistent_;
    return result;
  }

  const ToyDlrm& model() const { return *nodes_.front().model; }

 private:
  double memory_proxy() const {
    if (c_.strategy != Strategy::kLiveUpdate) return 0.0;
    const ToyDlrm& m = model();
    double sum = 0.0;
    for (std::size_t t = 0; t < m.table_count(); ++t) {
      const auto& tab = m.table(t);
      sum += adapt::memory_proxy(tab.capacity(), tab.rank(), tab.rows(), tab.dim());
    }
    return sum / static_cast<double>(m.table_count());
  }

  void charge(double minute, double seconds, std::uint64_t bytes) {
    events_.push_back({minute, seconds, bytes});
  }

  void charge_transfer(double minute, std::uint64_t bytes) {
    const double s = transfer_seconds(bytes, c_.bandwidth_gbps);
    cost_.transfer_seconds += s;
    cost_.payload_bytes += bytes;
    charge(minute, s, bytes);
  }

  bool full_sync_due(double minute) const {
    const double q = minute / c_.full_sync_minutes;
    return std::abs(q - std::round(q)) < 1e-9 && minute > 0.0;
  }

  void run_tick(double minute, ScenarioResult& result) {
    switch (c_.strategy) {
      case Strategy::kNoUpdate: break;
      case Strategy::kDeltaUpdate: delta_tick(minute); break;
      case Strategy::kQuickUpdate: quick_tick(minute); break;
      case Strategy::kLiveUpdate: live_tick(minute, result); break;
    }
    for (auto& set : touched_) set.clear();
    for (auto& n : nodes_) n.fresh = 0;
  }

  std::uint64_t row_bytes() const { return 8 + 4 * c_.workload.dim; }

  void full_sync(double minute) {
    std::uint64_t bytes = 0;
    for (std::size_t t = 0; t < c_.workload.table_count(); ++t) {
      const auto w = cluster_table(truth_, c_, t, minute);
      bytes += 4 * w.size();
      for (auto& n : nodes_) n.model->table(t).full_update(w);
    }
    charge_transfer(minute, bytes);
  }

  void delta_tick(double minute) {
    const std::size_t d = c_.workload.dim;
    std::uint64_t rows = 0;
    for (std::size_t t = 0; t < touched_.size(); ++t) {
      if (touched_[t].empty()) continue;
      const auto w = cluster_table(truth_, c_, t, minute);
      nodes_.front().model->table(t).write([&](EmbeddingTable& tab, LoraAdapter&, HotIndexFilter&) {
        for (Index i : touched_[t]) {
          auto dst = tab.mutable_row(i);
          std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(i * d), d, dst.begin());
        }
      });
      rows += touched_[t].size();
    }
    charge_transfer(minute, rows * row_bytes());
  }

  void quick_tick(double minute) {
    if (full_sync_due(minute)) {
      full_sync(minute);
      return;
    }
    const std::size_t d = c_.workload.dim;
    std::uint64_t rows = 0;
    for (std::size_t t = 0; t < touched_.size(); ++t) {
      if (touched_[t].empty()) continue;
      const auto w = cluster_table(truth_, c_, t, minute);
      nodes_.front().model->table(t).write([&](EmbeddingTable& tab, LoraAdapter&, HotIndexFilter&) {
        std::vector<std::pair<double, Index>> ranked;
        ranked.reserve(touched_[t].size());
        for (Index i : touched_[t]) {
          const auto cur = tab.row(i);
          double sq = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(w[i * d + k]) - cur[k];
            sq += diff * diff;
          }
          ranked.emplace_back(-sq, i);
        }
        const auto take = static_cast<std::size_t>(
            std::ceil(c_.quick_fraction * static_cast<double>(ranked.size())));
        std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take),
                          ranked.end());
        for (std::size_t r = 0; r < take; ++r) {
          const Index i = ranked[r].second;
          auto dst = tab.mutable_row(i);
          std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(i * d), d, dst.begin());
        }
        rows += take;
      });
    }
    charge_transfer(minute, rows * row_bytes());
  }

  // ---- live_update ----

  void live_full_sync(double minute) {
    full_sync(minute);
    ++full_syncs_;
    for (std::size_t t = 0; t < c_.workload.table_count(); ++t) {
      const std::size_t rank = nodes_.front().model->table(t).rank();
      const auto b = random_b(rank, c_.workload.dim, derive_seed(c_.seed, 1000 * full_syncs_ + t));
      for (auto& n : nodes_) {
        n.model->table(t).publish_b(b);
        n.support[t].clear();
        n.adapt[t]->reservoir.clear_history();
      }
      baseline_[t].clear();
    }
    for (auto& n : nodes_) n.trained = false;
    pending_.reset();
    adapt_due_ = false;
  }

  void live_tick(double minute, ScenarioResult& result) {
    if (full_sync_due(minute)) live_full_sync(minute);
    std::size_t fresh = 0;
    for (const auto& n : nodes_) fresh = std::max(fresh, n.fresh);
    const auto steps = static_cast<std::size_t>(
        std::ceil(c_.trainer.epochs * static_cast<double>(fresh) /
                  static_cast<double>(c_.trainer.batch_size)));
    const double window = std::min(std::max(c_.trainer.window_minutes, c_.cadence_minutes),
                                   c_.trainer.retention_minutes);
    std::uint64_t trained = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t g = step_++;
      for (auto& n : nodes_) {
        const auto batch = trainer::sample_batch(*n.buffer, c_.trainer.batch_size, window, minute, n.rng);
        if (batch.empty()) continue;
        trainer::TrainHooks hooks;
        for (auto& a : n.adapt) hooks.adapt.push_back(a.get());
        const auto stats = trainer::train_step(*n.model, batch, c_.trainer.learning_rate, g, &hooks);
        trained += batch.size();
        if (stats.aborted) continue;
        for (std::size_t t = 0; t < stats.modified.size(); ++t) {
          n.support[t].insert(stats.modified[t].begin(), stats.modified[t].end());
          if (stats.b_modified[t]) n.trained = true;
        }
      }
      bool due = false;
      for (auto& n : nodes_) {
        for (auto& a : n.adapt) due = a->end_step(g) || due;
      }
      if (due && (c_.adapt.adapt_rank || c_.adapt.prune)) adapt_due_ = true;
      if ((g + 1) % c_.sync.interval_steps == 0 || s + 1 == steps) sync_round(minute, g, result);
    }
    cost_.trained_samples += trained;
    const double secs = static_cast<double>(trained) * c_.trainer.seconds_per_sample;
    cost_.training_seconds += secs;
    charge(minute, secs, 0);
  }

  void sync_round(double minute, std::size_t step, ScenarioResult& result) {
    const std::size_t tables = c_.workload.table_count();
    std::vector<sync::Message> contributions;
    for (std::size_t r = 0; r < nodes_.size(); ++r) {
      Node& n = nodes_[r];
      sync::RankState st;
      st.rank_id = static_cast<std::uint16_t>(r);
      st.trained = n.trained;
      st.support = n.support;
      for (std::size_t t = 0; t < tables; ++t) {
        sync::LoraParams p;
        n.model->table(t).read([&](const EmbeddingTable& tab, const LoraAdapter& a, const HotIndexFilter&) {
          p.rank = a.rank();
          p.dim = tab.dim();
          for (Index i : n.support[t]) {
            const auto row = a.row(i);
            if (!row.empty()) p.rows[i] = std::vector<float>(row.begin(), row.end());
          }
          p.b.assign(a.b().begin(), a.b().end());
        });
        st.theta.push_back(std::move(p));
      }
      contributions.push_back(sync::contribution(st, round_));
    }
    sync::NetConfig net_cfg = c_.net;
    net_cfg.seed = derive_seed(c_.seed, 0x5EEDull + round_);
    sync::SimNet net(net_cfg);
    const auto rr = sync::run_round(contributions, net, round_);
    ++round_;
    ++cost_.sync_rounds;
    result.sync_latency_us.push_back(rr.latency_us);
    SyncRecord rec;
    rec.ranks = nodes_.size();
    rec.tables = tables;
    for (const auto& m : contributions) {
      rec.support_rows += m.entries.size();
      rec.b_entries += m.bs.size();
      for (const auto& sh : m.shapes) rec.rank = std::max<std::size_t>(rec.rank, sh.rank);
    }
    rec.payload_bytes = rr.payload_bytes;
    result.sync_records.push_back(rec);
    charge_transfer(minute, rr.payload_bytes);

    for (auto& n : nodes_) {
      for (std::size_t t = 0; t < tables; ++t) {
        sync::apply_to_table(rr.outcome, t, n.model->table(t), baseline_[t]);
        n.support[t].clear();
      }
      n.trained = false;
    }

    if (pending_) {
      if (pending_->valid()) {
        auto plans = pending_->get();
        for (std::size_t t = 0; t < tables; ++t) {
          std::optional<adapt::AdaptReport> first;
          for (auto& n : nodes_) {
            auto rep = adapt::apply_plan(plans[t], n.model->table(t));
            n.adapt[t]->tau = plans[t].tau;
            ++n.adapt[t]->cycles;
            if (!first) first = rep;
          }
          result.adapt_reports.push_back(*first);
          result.adapt_tables.push_back(t);
        }
      }
      pending_.reset();
    }

    for (std::size_t t = 0; t < tables; ++t) {
      baseline_[t] = nodes_.front().model->table(t).read(
          [](const EmbeddingTable&, const LoraAdapter& a, const HotIndexFilter&) { return a.sorted_indices(); });
    }
    check_replicas();

    if (adapt_due_) {
      adapt_due_ = false;
      Node& last = nodes_.back();
      std::vector<adapt::AdaptSnapshot> snaps;
      std::vector<adapt::AdaptConfig> cfgs;
      std::vector<std::uint64_t> seeds;
      for (std::size_t t = 0; t < tables; ++t) {
        snaps.push_back(adapt::take_snapshot(*last.adapt[t], last.model->table(t), step));
        cfgs.push_back(last.adapt[t]->config);
        seeds.push_back(derive_seed(last.adapt[t]->seed, 100 + last.adapt[t]->cycles));
        for (auto& n : nodes_) n.adapt[t]->reservoir.clear_history();
      }
      pending_ = std::make_unique<std::future<std::vector<adapt::AdaptPlan>>>(std::async(
          std::launch::async, [snaps = std::move(snaps), cfgs = std::move(cfgs), seeds = std::move(seeds)] {
            std::vector<adapt::AdaptPlan> plans;
            for (std::size_t t = 0; t < snaps.size(); ++t) {
              plans.push_back(adapt::plan_cycle(snaps[t], cfgs[t], seeds[t]));
            }
            return plans;
          }));
    }
  }

  void check_replicas() {
    if (nodes_.size() < 2) return;
    for (std::size_t t = 0; t < c_.workload.table_count(); ++t) {
      auto grab = [&](const Node& n) {
        return n.model->table(t).read([](const EmbeddingTable& tab, const LoraAdapter& a, const HotIndexFilter&) {
          std::map<Index, std::vector<float>> rows(a.rows().begin(), a.rows().end());
          std::vector<float> b(a.b().begin(), a.b().end());
          return std::make_tuple(tab.version(), a.rank(), a.capacity(), std::move(rows), std::move(b));
        });
      };
      const auto ref = grab(nodes_.front());
      for (std::size_t r = 1; r < nodes_.size(); ++r) {
        if (grab(nodes_[r]) != ref) consistent_ = false;
      }
    }
  }

  void run_scheduler(ScenarioResult& result) {
    const auto per_minute = static_cast<std::size_t>(std::llround(60000.0 / c_.scheduler.t_cycle_ms));
    const auto minutes = static_cast<std::size_t>(std::ceil(c_.workload.horizon_minutes));
    const std::size_t horizon = std::max<std::size_t>(1, per_minute * minutes);
    const double rate = c_.workload.rate_per_minute;
    auto load = [&](std::size_t cycle) {
      const auto it = minute_counts_.find(cycle / std::max<std::size_t>(per_minute, 1));
      return it == minute_counts_.end() ? 0.0 : static_cast<double>(it->second) / rate;
    };
    const bool live = c_.strategy == Strategy::kLiveUpdate;
    const auto lat = c_.latency;
    sched::LatencyModel model = [lat, live](const sched::LatencyInput& in, std::mt19937_64& rng,
                                            std::vector<double>& out) {
      sched::LatencyInput x = in;
      if (!live) x.n_training = 0;
      lat(x, rng, out);
    };
    result.sched_trace =
        sched::run_control_loop(model, c_.scheduler, load, horizon, derive_seed(c_.seed, 0x5C)) ;
    for (auto& row : result.metrics) {
      const double end = row.time_minutes;
      const double start = end - c_.eval_window_minutes;
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& tr : result.sched_trace) {
        const double m = static_cast<double>(tr.cycle) / static_cast<double>(per_minute);
        if (m >= start && m < end) {
          sum += tr.p99_ms;
          ++n;
        }
      }
      row.p99_ms = n ? sum / static_cast<double>(n) : 0.0;
    }
  }

  ExperimentConfig c_;
  workload::GroundTruth truth_;
  const std::vector<Sample>& trace_;
  std::vector<std::size_t> capacities_;
  std::vector<Node> nodes_;
  std::vector<std::set<Index>> touched_;
  std::vector<std::vector<Index>> baseline_;
  std::vector<CostEvent> events_;
  std::map<std::size_t, std::size_t> minute_counts_;
  CostBreakdown cost_;
  bool consistent_ = true;
  std::size_t step_ = 0;
  std::uint64_t round_ = 0;
  std::uint64_t full_syncs_ = 0;
  bool adapt_due_ = false;
  std::unique_ptr<std::future<std::vector<adapt::AdaptPlan>>> pending_;
};

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw std::runtime_error("bad number '" + s + "' in metrics csv");
  }
  return v;
}

template <typename T>
T parse_uint(const std::string& s) {
  T v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw std::runtime_error("bad integer '" + s + "' in metrics csv");
  }
  return v;
}

constexpr const char* kMetricsHeader = "time_min,bce,auroc,cost_s,memory_proxy,payload_bytes,p99_ms,samples";

}  // namespace

double ScenarioResult::final_hour_bce() const {
  const double horizon = config.workload.horizon_minutes;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : metrics) {
    if (r.time_minutes > horizon - 60.0 + 1e-9) {
      sum += r.bce;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

ScenarioResult run_scenario(const ExperimentConfig& config, const std::vector<Sample>& trace) {
  config.validate();
  std::vector<Sample> generated;
  const std::vector<Sample>* samples = &trace;
  if (trace.empty()) {
    generated = workload::generate_stream(config.workload);
    samples = &generated;
  }
  Runner runner(config, *samples);
  ScenarioResult result = runner.run();
  if (!config.output_dir.empty()) {
    write_outputs(config.output_dir, result);
    const std::filesystem::path dir = std::filesystem::path(config.output_dir) / "checkpoints";
    std::filesystem::create_directories(dir);
    const ToyDlrm& m = runner.model();
    for (std::size_t t = 0; t < m.table_count(); ++t) {
      const std::string path = (dir / ("table_" + std::to_string(t) + ".lupd")).string();
      m.table(t).read([&](const EmbeddingTable& tab, const LoraAdapter& a, const HotIndexFilter&) {
        save_checkpoint(path, tab, a);
      });
    }
  }
  return result;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t k = i;
    while (k < n && scores[order[k]] == scores[order[i]]) ++k;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(k)) / 2.0;
    for (std::size_t q = i; q < k; ++q) {
      if (labels[order[q]]) {
        rank_sum += mid;
        ++pos;
      }
    }
    i = k;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return 0.5;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << fmt(r.time_minutes) << ',' << fmt(r.bce) << ',' << fmt(r.auroc) << ','
        << fmt(r.cost_seconds) << ',' << fmt(r.memory_proxy) << ',' << r.payload_bytes << ','
        << fmt(r.p99_ms) << ',' << r.samples << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("metrics csv: missing or unexpected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw std::runtime_error("metrics csv: expected 8 fields in '" + line + "'");
    MetricsRow r;
    r.time_minutes = parse_double(f[0]);
    r.bce = parse_double(f[1]);
    r.auroc = parse_double(f[2]);
    r.cost_seconds = parse_double(f[3]);
    r.memory_proxy = parse_double(f[4]);
    r.payload_bytes = parse_uint<std::uint64_t>(f[5]);
    r.p99_ms = parse_double(f[6]);
    r.samples = parse_uint<std::size_t>(f[7]);
    rows.push_back(r);
  }
  return rows;
}

void check_comparable(const std::vector<CostSummaryRow>& rows) {
  for (const auto& r : rows) {
    if (std::abs(r.horizon_minutes - rows.front().horizon_minutes) > 1e-9) {
      throw std::invalid_argument("runs cover different horizons");
    }
  }
}

std::vector<CostSummaryRow> compare_update_cost(const std::vector<ScenarioResult>& runs) {
  std::vector<CostSummaryRow> rows;
  for (const auto& r : runs) {
    rows.push_back({r.config.scenario, r.config.strategy, r.config.cadence_minutes,
                    r.config.workload.horizon_minutes, r.cost});
  }
  check_comparable(rows);
  return rows;
}

std::vector<CostShape> cost_shape(const std::vector<CostSummaryRow>& rows) {
  std::vector<CostShape> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const CostShape& s) { return s.strategy == r.strategy; });
    if (it == out.end()) {
      out.push_back({r.strategy, r.cost.total(), r.cost.total(), 1});
    } else {
      it->min_total = std::min(it->min_total, r.cost.total());
      it->max_total = std::max(it->max_total, r.cost.total());
      ++it->runs;
    }
  }
  return out;
}

void write_cost_summary(std::ostream& out, const std::vector<CostSummaryRow>& rows) {
  out << "label,strategy,cadence_min,horizon_min,transfer_s,training_s,total_s,payload_bytes,"
         "trained_samples,sync_rounds\n";
  for (const auto& r : rows) {
    out << r.label << ',' << to_string(r.strategy) << ',' << fmt(r.cadence_minutes) << ','
        << fmt(r.horizon_minutes) << ',' << fmt(r.cost.transfer_seconds) << ','
        << fmt(r.cost.training_seconds) << ',' << fmt(r.cost.total()) << ',' << r.cost.payload_bytes
        << ',' << r.cost.trained_samples << ',' << r.cost.sync_rounds << '\n';
  }
}

nlohmann::json summary_json(const ScenarioResult& r) {
  return {{"scenario", r.config.scenario},
          {"strategy", to_string(r.config.strategy)},
          {"cadence_minutes", r.config.cadence_minutes},
          {"horizon_minutes", r.config.workload.horizon_minutes},
          {"transfer_seconds", r.cost.transfer_seconds},
          {"training_seconds", r.cost.training_seconds},
          {"payload_bytes", r.cost.payload_bytes},
          {"trained_samples", r.cost.trained_samples},
          {"sync_rounds", r.cost.sync_rounds},
          {"final_hour_bce", r.final_hour_bce()},
          {"replicas_consistent", r.replicas_consistent}};
}

CostSummaryRow read_run_summary(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "summary.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    CostSummaryRow r;
    r.label = j.at("scenario").get<std::string>();
    r.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    r.cadence_minutes = j.at("cadence_minutes").get<double>();
    r.horizon_minutes = j.at("horizon_minutes").get<double>();
    r.cost.transfer_seconds = j.at("transfer_seconds").get<double>();
    r.cost.training_seconds = j.at("training_seconds").get<double>();
    r.cost.payload_bytes = j.at("payload_bytes").get<std::uint64_t>();
    r.cost.trained_samples = j.at("trained_samples").get<std::uint64_t>();
    r.cost.sync_rounds = j.at("sync_rounds").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_outputs(const std::string& dir, const ScenarioResult& result) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  auto open = [&](const char* name) {
    std::ofstream f(p / name);
    if (!f) throw std::runtime_error("cannot write " + (p / name).string());
    return f;
  };
  {
    auto f = open("metrics.csv");
    write_metrics_csv(f, result.metrics);
  }
  {
    auto f = open("adapt.csv");
    f << "table,";
    adapt::write_report_header(f);
    for (std::size_t i = 0; i < result.adapt_reports.size(); ++i) {
      f << result.adapt_tables[i] << ',';
      adapt::write_report_csv(f, result.adapt_reports[i]);
    }
  }
  {
    auto f = open("sched.csv");
    sched::write_trace_header(f);
    for (const auto& row : result.sched_trace) sched::write_trace_csv(f, row);
  }
  {
    auto f = open("summary.json");
    nlohmann::json j = summary_json(result);
    j["config"] = to_json(result.config);
    f << j.dump(2) << '\n';
  }
}

}  // namespace liveupdate::harness
