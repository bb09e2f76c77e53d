// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "liveupdate/harness.hpp"

namespace liveupdate::verify {

struct Options {
  // Criterion ids to run; empty runs all.
  std::vector<int> only;
  // Fewer trials. Smoke runs only; thresholds are unchanged.
  bool quick = false;
};

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

CriterionResult check_eckart_young(const Options& o);       // 1
CriterionResult check_rank_selection(const Options& o);     // 2
CriterionResult check_memory_proxy(const Options& o);       // 3
CriterionResult check_gradients(const Options& o);          // 4
CriterionResult check_serving_invariance(const Options& o); // 5
CriterionResult check_sync_consistency(const Options& o);   // 6
CriterionResult check_payload_bound(const Options& o);      // 7
CriterionResult check_scheduler(const Options& o);          // 8
CriterionResult check_update_cost(const Options& o);        // 9
CriterionResult check_accuracy_order(const Options& o);     // 10
CriterionResult check_sync_scaling(const Options& o);       // 11

// Runs the selected criteria and prints one PASS/FAIL line per criterion.
std::vector<CriterionResult> run_acceptance(const Options& o, std::ostream& out);

// Scenario configs shared by the acceptance run and the CLI examples.
harness::ExperimentConfig cost_scenario(harness::Strategy s, double cadence_minutes);
harness::ExperimentConfig drift_scenario(harness::Strategy s, std::uint64_t seed);

// Least-squares fit y = c1 + c2 x; returns {c1, c2, r_squared}.
struct LineFit {
  double c1;
  double c2;
  double r_squared;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace liveupdate::verify
