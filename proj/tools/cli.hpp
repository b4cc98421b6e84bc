#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fuscore::cli {

/// Runs one subcommand. `args` excludes the program name. Reports go to
/// `--report` (or `out` when absent); errors go to `err` as a JSON object.
///
/// Exit codes: 0 ok, 1 check failed, 2 usage, 3 bad input, 4 numerical.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GradcheckSummary {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// Analytic tripartite gradients against central differences on random
/// group-structured batches. Per component the error is
/// |g - g_fd| / max(|g|, |g_fd|, 1e-8 * (1 + max_batch |g|)).
GradcheckSummary gradcheck(std::size_t trials, double h, double tol, std::uint64_t seed);

}  // namespace fuscore::cli
