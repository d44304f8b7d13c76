#pragma once

#include <string>
#include <vector>

namespace ddrb::cli {

// Exit codes: 0 success, 1 flag/validation errors, 2 runtime errors
// (unreadable files, malformed formats, diverged training).
int cli_main(int argc, char** argv);

// Same thing for in-process callers; args exclude the program name.
int run(const std::vector<std::string>& args);

}  // namespace ddrb::cli
