// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gaitssl::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the process
/// exit code: 0 success, 1 unexpected failure, 2 config, 3 data, 4 numerical.
/// Failures print a single JSON line to `err` and leave no partial outputs.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `sweep` expands the grid in key order, last axis varying fastest.
std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid_labels(const std::string& grid_json);

}  // namespace gaitssl::cli
