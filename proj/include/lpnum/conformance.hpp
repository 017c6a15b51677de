#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpnum/format.hpp"

namespace lpnum {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Formats the rounding checks sweep: the 12-bit grids, their scaled and
// relative-bias variants, and the pure power-of-two grid.
std::vector<Repr> conformance_formats();

// Exhaustive: every codepoint survives every rounding mode unchanged,
// midpoints of neighbors resolve to the even enumeration index (mirrored
// around zero), off-grid points land on the bracketing neighbors, and
// out-of-range input saturates.
CheckResult check_codepoints(const Repr& r);

// Empirical stochastic-rounding frequencies against exact probabilities,
// `points` random targets with `draws` samples each, gated at `nsigma`
// binomial standard deviations.
CheckResult check_stochastic_unbiased(const Repr& r, int points, int draws,
                                      double nsigma, uint64_t seed);

// Bit-identity of the shift path against the multiply path on random
// vectors with power-of-two second operands.
CheckResult check_shift_identity(int pairs, int maxlen, uint64_t seed);

// Central-difference check of the analytic gradients on a small network
// with every class left wide.
CheckResult check_gradients(uint64_t seed);

// level 0 trims the stochastic draw counts for unit-test budgets; level 1
// runs the full sweep.
std::vector<CheckResult> run_conformance(int level);

}  // namespace lpnum
