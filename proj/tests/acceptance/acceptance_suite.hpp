#pragma once

#include <iosfwd>

namespace mlmcvi::acceptance {

/// Runs every acceptance criterion, prints one PASS/FAIL line per criterion to
/// `out`, and returns 0 iff all pass.
int run_acceptance_suite(std::ostream& out);
int run_acceptance_suite();

}  // namespace mlmcvi::acceptance
