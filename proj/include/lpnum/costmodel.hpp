#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpnum/net.hpp"

namespace lpnum {

// Per-operation prices. Units are hours for the reference workload; the
// builtin table comes from an exact fit (scripts/fit_cost_table.py).
struct CostTable {
  double mul32 = 0.0;
  double add32 = 0.0;
  double mul12 = 0.0;
  double add12 = 0.0;
  double shift = 0.0;
  double scale_adjust = 0.0;
  // Narrow lanes per wide lane: every 12-bit op price divides by this.
  double simd_ratio = 8.0 / 3.0;

  static CostTable builtin();
};
CostTable load_cost_table(const std::string& path);
void save_cost_table(const std::string& path, const CostTable& t);

// Pricing bucket of a multiply-accumulate phase, from its operand formats.
enum class MacClass { Wide, Fixed, FloatLike };
MacClass mac_class(const ClassFormat& a, const ClassFormat& b);

// Closed-form per-layer tallies for one training iteration at this batch
// size. Matches the instrumented counts exactly for multiply kernels and
// bounds them from above for shift kernels, whose zero operands are skipped.
std::vector<PhaseTally> count_ops(const Network& net, int batch);

struct TimeEstimate {
  double total = 0.0;
  std::vector<double> per_layer;  // indexed by layer id
};
TimeEstimate estimate_time(const Network& net, int batch, int64_t iters,
                           const CostTable& table);

struct MemoryEstimate {
  int param_bits = 0;
  int act_bits = 0;
  double calibrated_param_bytes = 0.0;
  double calibrated_act_bytes = 0.0;
  double calibrated_bytes = 0.0;
  int64_t param_count = 0;     // stored weights and biases
  int64_t momentum_count = 0;  // update history, same shapes
  int64_t act_count_per_image = 0;
  int64_t grad_count_per_image = 0;
};
MemoryEstimate estimate_memory(const Network& net);

}  // namespace lpnum
