#pragma once

#include <cstdint>
#include <ostream>

namespace usd {

// Runs the built-in oracle suites (solver residuals, finite-difference
// gradient checks, discrepancy inequalities) on seeds derived from `seed`.
// Prints one [PASS]/[FAIL] line per check; returns true iff all pass.
bool self_check(std::uint64_t seed, std::ostream& out);

}  // namespace usd
