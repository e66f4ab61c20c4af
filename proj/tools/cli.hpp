#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dysurv::cli {

/// Runs one command line. Errors are reported on `err` as a single line
/// "error: E_CODE: message" with a nonzero return value.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dysurv::cli
