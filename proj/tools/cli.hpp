// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. run_cli returns the process exit code:
// 0 success, 1 invalid input, 2 runtime failure.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace icefm::cli {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icefm::cli
