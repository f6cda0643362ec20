#pragma once

#include <ostream>

namespace addd {

/// Entry point of the `addd` tool. Returns 0 on success, 1 on validation or
/// runtime failures and 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace addd
