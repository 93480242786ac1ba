// Copyright (c) 2026, The NVE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nve::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 2;

/// Runs one invocation; args excludes the program name. JSON goes to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nve::cli
