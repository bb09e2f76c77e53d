// Copyright 2026 The liveupdate Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "json.hpp"
#include "liveupdate/workload.hpp"

namespace liveupdate::workload {

nlohmann::json to_json(const WorkloadSpec& spec);
// Missing keys keep their defaults. Throws ConfigError with `prefix`-qualified
// field paths.
WorkloadSpec spec_from_json(const nlohmann::json& j,
                            const std::string& prefix = "workload");

}  // namespace liveupdate::workload
