// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#include "liveupdate/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "liveupdate/config_error.hpp"
#include "liveupdate/random.hpp"
#include "liveupdate/workload_json.hpp"

namespace liveupdate::workload {

// ---------------------------------------------------------------------------
// Zipf

ZipfSampler::ZipfSampler(std::size_t n, double exponent) : exponent_(exponent) {
  if (n == 0) throw std::invalid_argument("zipf support must be non-empty");
  if (!(exponent > 0.0)) throw std::invalid_argument("zipf exponent must be > 0");
  cdf_.resize(n);
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -exponent);
    cdf_[r] = acc;
  }
  for (double& c : cdf_) c /= acc;
  cdf_.back() = 1.0;
}

std::size_t ZipfSampler::sample(std::mt19937_64& rng) const {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<std::size_t>(it - cdf_.begin());
}

double top_share(std::size_t n, double exponent, double fraction) {
  const auto top = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  double head = 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double p = std::pow(static_cast<double>(r + 1), -exponent);
    total += p;
    if (r < top) head += p;
  }
  return head / total;
}

double calibrate_zipf_exponent(std::size_t n, double fraction, double target_share) {
  double lo = 1e-6;
  double hi = 8.0;
  if (top_share(n, lo, fraction) >= target_share) return lo;
  if (top_share(n, hi, fraction) <= target_share) return hi;
  for (int it = 0; it < 100 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    (top_share(n, mid, fraction) < target_share ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// WorkloadSpec

double WorkloadSpec::resolved_exponent(std::size_t table) const {
  if (zipf_exponent) return *zipf_exponent;
  return calibrate_zipf_exponent(table_rows.at(table));
}

void WorkloadSpec::validate() const {
  if (table_rows.empty()) throw ConfigError("workload.table_rows", "at least one table required");
  for (std::size_t t = 0; t < table_rows.size(); ++t) {
    if (table_rows[t] == 0) {
      throw ConfigError("workload.table_rows[" + std::to_string(t) + "]", "must be positive");
    }
  }
  if (dim == 0) throw ConfigError("workload.dim", "must be positive");
  if (max_ids_per_table == 0) throw ConfigError("workload.max_ids_per_table", "must be >= 1");
  if (zipf_exponent && !(*zipf_exponent > 0.0)) {
    throw ConfigError("workload.zipf_exponent", "must be > 0");
  }
  if (!(rate_per_minute > 0.0)) throw ConfigError("workload.rate_per_minute", "must be > 0");
  if (!(rate_jitter >= 0.0 && rate_jitter < 1.0)) {
    throw ConfigError("workload.rate_jitter", "must be in [0, 1)");
  }
  if (!(horizon_minutes > 0.0)) throw ConfigError("workload.horizon_minutes", "must be > 0");
  if (drift_rank == 0 || drift_rank > dim) {
    throw ConfigError("workload.drift_rank", "must be in [1, dim]");
  }
  if (!(drift_fraction >= 0.0 && drift_fraction <= 1.0)) {
    throw ConfigError("workload.drift_fraction", "must be in [0, 1]");
  }
  if (!std::is_sorted(drift_minutes.begin(), drift_minutes.end())) {
    throw ConfigError("workload.drift_minutes", "must be sorted");
  }
  if (tower_hidden == 0) throw ConfigError("workload.tower_hidden", "must be positive");
}

// ---------------------------------------------------------------------------
// GroundTruth

namespace {

std::vector<float> orthonormal_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> m(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double* v = m.data() + r * dim;
    for (;;) {
      for (std::size_t j = 0; j < dim; ++j) v[j] = n01(rng);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < r; ++p) {
          const double* u = m.data() + p * dim;
          double dot = 0.0;
          for (std::size_t j = 0; j < dim; ++j) dot += u[j] * v[j];
          for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * u[j];
        }
      }
      double norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += v[j] * v[j];
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t j = 0; j < dim; ++j) v[j] /= norm;
        break;
      }
    }
  }
  return {m.begin(), m.end()};
}

}  // namespace

GroundTruth::GroundTruth(const WorkloadSpec& spec) : spec_(spec) {
  spec_.validate();
  const std::size_t d = spec_.dim;
  const std::size_t input = spec_.table_count() * d + spec_.dense_features;
  tower_ = DenseTower::random(input, spec_.tower_hidden, derive_seed(spec_.seed, 1));

  std::mt19937_64 rng(derive_seed(spec_.seed, 2));
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t t = 0; t < spec_.table_count(); ++t) {
    std::vector<float> w(spec_.table_rows[t] * d);
    for (auto& x : w) x = static_cast<float>(spec_.embedding_scale * n01(rng));
    initial_.push_back(std::move(w));
  }

  std::mt19937_64 drift_rng(derive_seed(spec_.seed, 3));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double loading_sd = spec_.drift_magnitude / std::sqrt(static_cast<double>(spec_.drift_rank));
  for (double minute : spec_.drift_minutes) {
    for (std::size_t t = 0; t < spec_.table_count(); ++t) {
      Shift s;
      s.minute = minute;
      s.table = t;
      s.directions = orthonormal_rows(spec_.drift_rank, d, drift_rng);
      s.loadings.assign(spec_.table_rows[t] * spec_.drift_rank, 0.0f);
      for (std::size_t i = 0; i < spec_.table_rows[t]; ++i) {
        const bool affected = u01(drift_rng) < spec_.drift_fraction;
        for (std::size_t r = 0; r < spec_.drift_rank; ++r) {
          const double l = loading_sd * n01(drift_rng);
          if (affected) s.loadings[i * spec_.drift_rank + r] = static_cast<float>(l);
        }
      }
      shifts_.push_back(std::move(s));
    }
  }
}

void GroundTruth::apply_shift(const Shift& shift, std::vector<float>& table) const {
  const std::size_t d = spec_.dim;
  const std::size_t k = spec_.drift_rank;
  const std::size_t rows = spec_.table_rows[shift.table];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double delta = 0.0;
      for (std::size_t r = 0; r < k; ++r) {
        delta += static_cast<double>(shift.loadings[i * k + r]) * shift.directions[r * d + j];
      }
      table[i * d + j] = static_cast<float>(table[i * d + j] + delta);
    }
  }
}

std::vector<float> GroundTruth::table_at(std::size_t t, double minute) const {
  std::vector<float> w = initial_.at(t);
  for (const Shift& s : shifts_) {
    if (s.table == t && s.minute <= minute) apply_shift(s, w);
  }
  return w;
}

double GroundTruth::logit(const Sample& s, std::span<const std::vector<float>> tables) const {
  const std::size_t d = spec_.dim;
  std::vector<double> z(tower_.input_dim, 0.0);
  for (std::size_t t = 0; t < s.ids.size(); ++t) {
    const auto& ids = s.ids[t];
    for (Index i : ids) {
      for (std::size_t j = 0; j < d; ++j) z[t * d + j] += tables[t][i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) z[t * d + j] /= static_cast<double>(ids.size());
  }
  for (std::size_t f = 0; f < s.dense.size(); ++f) z[s.ids.size() * d + f] = s.dense[f];
  return tower_.logit(z);
}

// ---------------------------------------------------------------------------
// StreamGenerator

StreamGenerator::StreamGenerator(const WorkloadSpec& spec)
    : spec_(spec), truth_(spec), rng_(derive_seed(spec.seed, 4)) {
  std::mt19937_64 perm_rng(derive_seed(spec_.seed, 5));
  for (std::size_t t = 0; t < spec_.table_count(); ++t) {
    samplers_.emplace_back(spec_.table_rows[t], spec_.resolved_exponent(t));
    std::vector<Index> perm(spec_.table_rows[t]);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), perm_rng);
    perms_.push_back(std::move(perm));
    current_.push_back(truth_.initial_[t]);
  }
}

void StreamGenerator::start_minute() {
  ++minute_;
  in_minute_ = 0;
  const double jitter =
      std::uniform_real_distribution<double>(-spec_.rate_jitter, spec_.rate_jitter)(rng_);
  minute_count_ = static_cast<std::size_t>(std::llround(spec_.rate_per_minute * (1.0 + jitter)));
}

std::optional<Sample> StreamGenerator::next() {
  while (minute_ < 0 || in_minute_ >= minute_count_) {
    if (static_cast<double>(minute_ + 1) >= spec_.horizon_minutes) return std::nullopt;
    start_minute();
  }
  Sample s;
  const double slot = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  s.timestamp = static_cast<double>(minute_) +
                (static_cast<double>(in_minute_) + slot) / static_cast<double>(minute_count_);
  ++in_minute_;

  while (next_shift_ < truth_.shifts_.size() && truth_.shifts_[next_shift_].minute <= s.timestamp) {
    const auto& shift = truth_.shifts_[next_shift_];
    truth_.apply_shift(shift, current_[shift.table]);
    ++next_shift_;
  }

  s.ids.resize(spec_.table_count());
  for (std::size_t t = 0; t < spec_.table_count(); ++t) {
    const std::size_t count =
        spec_.max_ids_per_table == 1
            ? 1
            : std::uniform_int_distribution<std::size_t>(1, spec_.max_ids_per_table)(rng_);
    for (std::size_t c = 0; c < count; ++c) s.ids[t].push_back(perms_[t][samplers_[t].sample(rng_)]);
  }
  std::normal_distribution<double> n01(0.0, 1.0);
  s.dense.resize(spec_.dense_features);
  for (auto& x : s.dense) x = static_cast<float>(n01(rng_));
  const double p = sigmoid(truth_.logit(s, current_));
  s.label = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p ? 1 : 0;
  return s;
}

std::vector<Sample> generate_stream(const WorkloadSpec& spec) {
  StreamGenerator gen(spec);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.rate_per_minute * spec.horizon_minutes * 1.06));
  while (auto s = gen.next()) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// RingBuffer

RingBuffer::RingBuffer(std::size_t capacity, double retention_minutes)
    : slots_(capacity), retention_(retention_minutes) {
  if (capacity == 0) throw std::invalid_argument("ring buffer capacity must be positive");
  if (!(retention_minutes > 0.0)) throw std::invalid_argument("retention must be positive");
}

void RingBuffer::pop_front() {
  slots_[head_] = Sample{};
  head_ = (head_ + 1) % slots_.size();
  --size_;
}

void RingBuffer::ingest(Sample s) {
  if (size_ > 0 && s.timestamp < (*this)[size_ - 1].timestamp) {
    throw std::invalid_argument("ring buffer timestamps must be non-decreasing");
  }
  evict_expired(s.timestamp);
  if (size_ == slots_.size()) pop_front();
  slots_[(head_ + size_) % slots_.size()] = std::move(s);
  ++size_;
}

std::size_t RingBuffer::evict_expired(double now) {
  std::size_t evicted = 0;
  while (size_ > 0 && now - (*this)[0].timestamp > retention_) {
    pop_front();
    ++evicted;
  }
  return evicted;
}

std::size_t RingBuffer::first_after(double t) const {
  std::size_t lo = 0;
  std::size_t hi = size_;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if ((*this)[mid].timestamp > t) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const WorkloadSpec& spec) {
  nlohmann::json j;
  j["table_rows"] = spec.table_rows;
  j["dim"] = spec.dim;
  j["dense_features"] = spec.dense_features;
  j["max_ids_per_table"] = spec.max_ids_per_table;
  if (spec.zipf_exponent) {
    j["zipf_exponent"] = *spec.zipf_exponent;
  } else {
    j["zipf_exponent"] = "auto";
  }
  j["rate_per_minute"] = spec.rate_per_minute;
  j["rate_jitter"] = spec.rate_jitter;
  j["horizon_minutes"] = spec.horizon_minutes;
  j["drift_minutes"] = spec.drift_minutes;
  j["drift_magnitude"] = spec.drift_magnitude;
  j["drift_fraction"] = spec.drift_fraction;
  j["drift_rank"] = spec.drift_rank;
  j["embedding_scale"] = spec.embedding_scale;
  j["tower_hidden"] = spec.tower_hidden;
  j["seed"] = spec.seed;
  return j;
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& prefix, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(prefix + "." + key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

WorkloadSpec spec_from_json(const nlohmann::json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix, "expected an object");
  WorkloadSpec s;
  read_field(j, prefix, "table_rows", s.table_rows);
  read_field(j, prefix, "dim", s.dim);
  read_field(j, prefix, "dense_features", s.dense_features);
  read_field(j, prefix, "max_ids_per_table", s.max_ids_per_table);
  if (j.contains("zipf_exponent")) {
    const auto& z = j["zipf_exponent"];
    if (z.is_string() && z.get<std::string>() == "auto") {
      s.zipf_exponent.reset();
    } else if (z.is_number()) {
      s.zipf_exponent = z.get<double>();
    } else {
      throw ConfigError(prefix + ".zipf_exponent", "expected a number or \"auto\"");
    }
  }
  read_field(j, prefix, "rate_per_minute", s.rate_per_minute);
  read_field(j, prefix, "rate_jitter", s.rate_jitter);
  read_field(j, prefix, "horizon_minutes", s.horizon_minutes);
  read_field(j, prefix, "drift_minutes", s.drift_minutes);
  read_field(j, prefix, "drift_magnitude", s.drift_magnitude);
  read_field(j, prefix, "drift_fraction", s.drift_fraction);
  read_field(j, prefix, "drift_rank", s.drift_rank);
  read_field(j, prefix, "embedding_scale", s.embedding_scale);
  read_field(j, prefix, "tower_hidden", s.tower_hidden);
  read_field(j, prefix, "seed", s.seed);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    // Re-root the field path under the caller's prefix.
    std::string field = e.field();
    if (field.rfind("workload.", 0) == 0) field = prefix + field.substr(8);
    throw ConfigError(field, std::string(e.what()).substr(e.field().size() + 2));
  }
  return s;
}

void write_trace(std::ostream& out, std::span<const Sample> samples, const WorkloadSpec* spec) {
  if (spec) out << nlohmann::json{{"workload_spec", to_json(*spec)}}.dump() << '\n';
  for (const Sample& s : samples) {
    nlohmann::json ids = nlohmann::json::array();
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      for (Index i : s.ids[t]) ids.push_back({t, i});
    }
    nlohmann::json rec{{"ts", s.timestamp}, {"ids", ids}, {"dense", s.dense}, {"label", s.label}};
    out << rec.dump() << '\n';
  }
  if (!out) throw std::runtime_error("trace write failed");
}

void write_trace(const std::string& path, std::span<const Sample> samples, const WorkloadSpec* spec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_trace(out, samples, spec);
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    if (rec.contains("workload_spec")) {
      trace.spec = spec_from_json(rec["workload_spec"]);
      continue;
    }
    try {
      Sample s;
      s.timestamp = rec.at("ts").get<double>();
      for (const auto& pair : rec.at("ids")) {
        const auto t = pair.at(0).get<std::size_t>();
        if (s.ids.size() <= t) s.ids.resize(t + 1);
        s.ids[t].push_back(pair.at(1).get<Index>());
      }
      s.dense = rec.at("dense").get<std::vector<float>>();
      s.label = rec.at("label").get<int>();
      if (s.label != 0 && s.label != 1) throw std::runtime_error("label must be 0 or 1");
      if (!trace.samples.empty() && s.timestamp < trace.samples.back().timestamp) {
        throw std::runtime_error("timestamps must be non-decreasing");
      }
      trace.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trace;
}

Trace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_trace(in);
}

}  // namespace liveupdate::workload
