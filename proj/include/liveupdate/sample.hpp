// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "liveupdate/model_core.hpp"

namespace liveupdate {

// One logged request: sparse ids per table (multi-hot allowed), dense
// features and the observed click label. Timestamps are simulated minutes.
struct Sample {
  double timestamp = 0.0;
  std::vector<std::vector<Index>> ids;
  std::vector<float> dense;
  int label = 0;

  bool operator==(const Sample&) const = default;
};

}  // namespace liveupdate
