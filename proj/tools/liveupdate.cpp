// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

// liveupdate: scenario runner, cost comparison, trace tools and acceptance.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "liveupdate/config_error.hpp"
#include "liveupdate/harness.hpp"
#include "liveupdate/verify.hpp"
#include "liveupdate/workload.hpp"
#include "liveupdate/workload_json.hpp"

namespace lu = liveupdate;
namespace hx = liveupdate::harness;

namespace {

struct Overrides {
  std::optional<std::string> scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> nodes;
  std::optional<std::string> out;
  std::optional<std::string> strategy;
  std::optional<double> cadence;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--scenario", o.scenario, "Scenario name");
  cmd->add_option("--seed", o.seed, "Seed for the workload and every component");
  cmd->add_option("--nodes", o.nodes, "Replica count R");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--strategy", o.strategy, "no_update | delta_update | quick_update | live_update");
  cmd->add_option("--cadence", o.cadence, "Update cadence in simulated minutes");
}

hx::ExperimentConfig resolve_config(nlohmann::json j, const Overrides& o) {
  if (o.scenario) j["scenario"] = *o.scenario;
  if (o.seed) {
    j["seed"] = *o.seed;
    if (j.contains("workload") && j["workload"].is_object()) j["workload"]["seed"] = *o.seed;
  }
  if (o.nodes) j["nodes"] = *o.nodes;
  if (o.out) j["output_dir"] = *o.out;
  if (o.strategy) j["strategy"] = *o.strategy;
  if (o.cadence) j["cadence_minutes"] = *o.cadence;
  return hx::config_from_json(j);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return j;
}

void report(const hx::ScenarioResult& r) {
  std::cout << "scenario " << r.config.scenario << " strategy " << hx::to_string(r.config.strategy)
            << " cadence " << r.config.cadence_minutes << " min\n";
  std::cout << "  windows " << r.metrics.size() << "  final-hour bce " << r.final_hour_bce()
            << "\n  cost " << r.cost.total() << " s (transfer " << r.cost.transfer_seconds
            << " s, training " << r.cost.training_seconds << " s), payload " << r.cost.payload_bytes
            << " B, sync rounds " << r.cost.sync_rounds << ", adapt cycles "
            << r.adapt_reports.size() << "\n";
  if (r.config.strategy == hx::Strategy::kLiveUpdate) {
    std::cout << "  replicas consistent: " << (r.replicas_consistent ? "yes" : "NO") << "\n";
  }
  if (!r.config.output_dir.empty()) std::cout << "  wrote " << r.config.output_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"liveupdate: low-rank online updates for embedding tables"};
  app.require_subcommand(1);

  Overrides run_o;
  std::string run_config;
  auto* run = app.add_subcommand("run", "Run one scenario from a JSON config");
  run->add_option("config", run_config, "Config JSON")->required()->check(CLI::ExistingFile);
  add_overrides(run, run_o);

  std::vector<std::string> runs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "Compare update cost of finished runs");
  compare->add_option("runs", runs, "Run output directories")->required();
  compare->add_option("--out", compare_out, "Write the summary CSV here");

  Overrides replay_o;
  std::string replay_trace, replay_config;
  auto* replay = app.add_subcommand("replay", "Run a scenario over a recorded trace");
  replay->add_option("trace", replay_trace, "NDJSON trace")->required()->check(CLI::ExistingFile);
  replay->add_option("--config", replay_config, "Config JSON (workload taken from the trace)");
  add_overrides(replay, replay_o);

  std::string trace_config, trace_out;
  std::optional<std::uint64_t> trace_seed;
  auto* trace = app.add_subcommand("trace", "Export the generated request stream");
  trace->add_option("config", trace_config, "Config JSON")->required()->check(CLI::ExistingFile);
  trace->add_option("--out", trace_out, "Output NDJSON path")->required();
  trace->add_option("--seed", trace_seed, "Workload seed");

  std::vector<int> only;
  bool quick = false;
  auto* accept = app.add_subcommand("acceptance", "Run the acceptance criteria");
  accept->add_option("--only", only, "Criterion numbers to run (default all)");
  accept->add_flag("--quick", quick, "Reduced trial counts for smoke runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = resolve_config(read_json(run_config), run_o);
      report(hx::run_scenario(cfg));
    } else if (*compare) {
      std::vector<hx::CostSummaryRow> rows;
      for (const auto& dir : runs) rows.push_back(hx::read_run_summary(dir));
      hx::check_comparable(rows);
      hx::write_cost_summary(std::cout, rows);
      for (const auto& s : hx::cost_shape(rows)) {
        std::cout << "# " << hx::to_string(s.strategy) << ": " << s.runs << " runs, max/min total "
                  << s.ratio() << "\n";
      }
      if (!compare_out.empty()) {
        std::ofstream f(compare_out);
        if (!f) throw std::runtime_error("cannot write " + compare_out);
        hx::write_cost_summary(f, rows);
      }
    } else if (*replay) {
      auto tr = lu::workload::read_trace(replay_trace);
      nlohmann::json j = replay_config.empty() ? nlohmann::json::object() : read_json(replay_config);
      if (tr.spec) j["workload"] = lu::workload::to_json(*tr.spec);
      const auto cfg = resolve_config(j, replay_o);
      report(hx::run_scenario(cfg, tr.samples));
    } else if (*trace) {
      Overrides o;
      o.seed = trace_seed;
      const auto cfg = resolve_config(read_json(trace_config), o);
      const auto samples = lu::workload::generate_stream(cfg.workload);
      lu::workload::write_trace(trace_out, samples, &cfg.workload);
      std::cout << "wrote " << samples.size() << " samples to " << trace_out << "\n";
    } else if (*accept) {
      lu::verify::Options opt;
      opt.only = only;
      opt.quick = quick;
      const auto results = lu::verify::run_acceptance(opt, std::cout);
      for (const auto& r : results) {
        if (!r.passed) return 1;
      }
    }
  } catch (const lu::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
