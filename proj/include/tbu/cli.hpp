#pragma once

namespace tbu {

/// Entry point for the `tbu` executable. Returns 0 on success, 2 for
/// configuration/parse errors and 3 for runtime failures.
int run_cli(int argc, const char* const* argv);

}  // namespace tbu
