#pragma once

namespace specfuse {

// Parses argv and dispatches. Exit codes: 0 ok, 2 config error, 3 data
// error, 4 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace specfuse
