#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bcrec::cli {

// Runs one command line (args[0] is the program name) and returns the exit
// code: 0 success, 1 runtime failure, 2 usage or configuration error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bcrec::cli
