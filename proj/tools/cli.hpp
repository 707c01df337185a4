// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace diag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

/// Runs one command line (without the program name). Errors are reported as
/// one line on `err`: "error kind=<usage|numeric> msg=<text>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace diag::cli
