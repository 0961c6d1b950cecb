#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace panel_dml {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumerical = 4 };

/// Entry point of the panel-dml command line tool. argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace panel_dml
