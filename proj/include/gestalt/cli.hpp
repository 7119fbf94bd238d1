#pragma once

#include <iosfwd>

namespace gestalt {

/// Exit codes: 0 success, 1 computation or I/O error, 2 usage error or
/// unknown chart.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gestalt
