#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace omnibot::cli {

/// Exit codes: 0 success, 1 failure (I/O, replay mismatch, bind error),
/// 2 invalid scenario or usage.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace omnibot::cli
