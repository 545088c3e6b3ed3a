#pragma once

#include <string>
#include <vector>

namespace igam {

// Full command-line entry (subcommand dispatch, config resolution, run,
// artifact writing). Exposed as a function so tests can drive subcommands
// in-process; tools/igam_cli.cpp is a thin wrapper.
int run_cli(const std::vector<std::string>& args);

}  // namespace igam
