#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace centerface::cli {

/// Entry point behind the `centerface` executable. Returns the process exit
/// status; output goes to `out`, diagnostics and usage to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace centerface::cli
