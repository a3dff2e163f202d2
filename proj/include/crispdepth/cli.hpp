#pragma once

#include <string>
#include <vector>

namespace crisp::cli {

// Command-line entry point; also callable in-process from tests. Returns the
// process exit code: 0 on success, nonzero on any error path.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace crisp::cli
