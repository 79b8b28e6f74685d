#ifndef DCFF_CLI_HPP
#define DCFF_CLI_HPP

#include <string>
#include <vector>

namespace dcff {

/// Dispatch one command-line invocation (args include the program name).
/// Exit codes: 0 success, 1 usage/config error, 2 I/O or format error,
/// 3 training divergence.
int run_cli(const std::vector<std::string>& args);

}  // namespace dcff

#endif  // DCFF_CLI_HPP
