// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

// Full-strength acceptance run: every criterion at its stated tolerance.

#include <iostream>

#include "liveupdate/verify.hpp"

int main() {
  liveupdate::verify::Options opt;
  const auto results = liveupdate::verify::run_acceptance(opt, std::cout);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
