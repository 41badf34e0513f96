#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace slv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitConfigError = 2;

// Entry point of the `slvid` executable: gen | train | report.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace slv::cli
