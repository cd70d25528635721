#ifndef LFAT_CLI_HPP_
#define LFAT_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace lfat::cli {

enum ExitCode : int {
  kOk = 0,
  kOperationalError = 1,
  kUsageError = 2,
  kAnomalous = 3,
  kProtocolReject = 4,
};

/// Runs one subcommand: gen-data, train, run-prover, attest, evaluate or
/// report. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, char** argv);

}  // namespace lfat::cli

#endif  // LFAT_CLI_HPP_
