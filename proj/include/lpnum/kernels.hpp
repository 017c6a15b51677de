#pragma once

#include <cstdint>

#include "lpnum/format.hpp"
#include "lpnum/tensor.hpp"

namespace lpnum {

// Semantic operation tallies. Counts follow the op's term structure (a dot of
// length n books n muls and n-1 adds), not micro-ops of the host CPU.
struct OpTally {
  uint64_t mul = 0;
  uint64_t add = 0;
  uint64_t shift = 0;
  uint64_t cmp = 0;
  uint64_t scale_adjust = 0;

  OpTally& operator+=(const OpTally& o) {
    mul += o.mul;
    add += o.add;
    shift += o.shift;
    cmp += o.cmp;
    scale_adjust += o.scale_adjust;
    return *this;
  }
  uint64_t total() const { return mul + add + shift + cmp + scale_adjust; }
  friend bool operator==(const OpTally&, const OpTally&) = default;
};

// Wide dot product with a fixed 8-lane reduction. The lane structure is part
// of the kernel's definition, so results are bit-identical across runs,
// builds with the same flags, and any amount of outer parallelism. The
// accumulator starts at `init` (used for bias terms) and is never quantized
// mid-reduction.
double dot_wide(const double* a, const double* b, int64_t n, double init = 0.0);

// a * y for y = ±2^k, computed by exponent arithmetic on a's binary
// representation instead of a multiply. Exact, and bit-identical to a * y.
// Requires a != 0 and y = ±2^k.
double shift_apply(double a, double y);

// Shift-based dot for power-of-two y: bit-identical value to
// dot_wide(a, y, n, init); zero terms are skipped. *nnz gets the count of
// terms that produced a shift.
double shift_dot_wide(const double* a, const double* y, int64_t n,
                      double init = 0.0, int64_t* nnz = nullptr);

bool is_pot_value(double y);  // y == 0 or y == ±2^k

// Elementwise quantization; stochastic draws come from (key, element index).
void quantize_buf(const double* in, double* out, int64_t n, const Repr& r,
                  Rounding mode, uint64_t key);

// ---- Checked tensor-level operations ----------------------------------

// Rank-1 dot: wide reduction, one terminal rounding to out_fmt.
double dot(const Tensor& a, const Tensor& b, const Repr& out_fmt,
           Rounding mode, uint64_t key = 0, OpTally* tally = nullptr);

// As dot, but y must be power-of-two constrained; tallies shifts, not muls.
double shift_dot(const Tensor& a, const Tensor& y, const Repr& out_fmt,
                 Rounding mode, uint64_t key = 0, OpTally* tally = nullptr);

Tensor quantize_tensor(const Tensor& t, const Repr& r, Rounding mode,
                       uint64_t key = 0);

bool tensor_representable(const Tensor& t, const Repr& r);

enum class EwOp { Add, Sub, Mul, Max };

// Wide elementwise op, then quantization to out_fmt. Shapes must match, or b
// may be a scalar.
Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b,
                   const Repr& out_fmt, Rounding mode, uint64_t key = 0,
                   OpTally* tally = nullptr);

}  // namespace lpnum
