#pragma once

namespace entikit {

// Full command-line front end; returns the process exit code
// (0 success, 2 input/validation error, 3 empty result).
int run_cli(int argc, char** argv);

}  // namespace entikit
