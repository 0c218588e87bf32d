#ifndef ZHANG_CLI_HPP
#define ZHANG_CLI_HPP

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace zhang {

/// A run finished but violated an invariant it checks (exit code 2).
class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitParameter = 1;
inline constexpr int kExitInvariant = 2;

/// Runs the command line `args` (without the program name). Results go to
/// `out` unless --out names a file; diagnostics and timing go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace zhang

#endif
