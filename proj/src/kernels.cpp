#include "lpnum/kernels.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "lpnum/rng.hpp"

namespace lpnum {

double dot_wide(const double* a, const double* b, int64_t n, double init) {
  double s0 = init, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i + 0] * b[i + 0];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  double* lanes[8] = {&s0, &s1, &s2, &s3, &s4, &s5, &s6, &s7};
  for (int l = 0; i < n; ++i, ++l) *lanes[l] += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

double shift_apply(double a, double y) {
  int e = std::ilogb(y);
  uint64_t bits = std::bit_cast<uint64_t>(a);
  bits += static_cast<uint64_t>(static_cast<int64_t>(e)) << 52;
  bits ^= std::bit_cast<uint64_t>(y) & 0x8000000000000000ULL;
  return std::bit_cast<double>(bits);
}

double shift_dot_wide(const double* a, const double* y, int64_t n, double init,
                      int64_t* nnz) {
  double s0 = init, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  double* lanes[8] = {&s0, &s1, &s2, &s3, &s4, &s5, &s6, &s7};
  int64_t count = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) {
      double yv = y[i + l];
      if (yv == 0.0) continue;
      ++count;
      double av = a[i + l];
      if (av == 0.0) continue;
      *lanes[l] += shift_apply(av, yv);
    }
  }
  for (int l = 0; i < n; ++i, ++l) {
    double yv = y[i];
    if (yv == 0.0) continue;
    ++count;
    double av = a[i];
    if (av == 0.0) continue;
    *lanes[l] += shift_apply(av, yv);
  }
  if (nnz) *nnz = count;
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

bool is_pot_value(double y) {
  if (y == 0.0) return true;
  if (!std::isfinite(y)) return false;
  int e;
  double m = std::frexp(y, &e);
  return m == 0.5 || m == -0.5;
}

void quantize_buf(const double* in, double* out, int64_t n, const Repr& r,
                  Rounding mode, uint64_t key) {
  if (r.is_wide()) {
    if (out != in)
      for (int64_t i = 0; i < n; ++i) out[i] = in[i];
    return;
  }
  if (mode == Rounding::Stochastic) {
    for (int64_t i = 0; i < n; ++i)
      out[i] = quantize(in[i], r, mode, u01_at(key, static_cast<uint64_t>(i)));
  } else {
    for (int64_t i = 0; i < n; ++i) out[i] = quantize(in[i], r, mode);
  }
}

namespace {

void check_same_length(const Tensor& a, const Tensor& b, const char* op) {
  if (a.numel() != b.numel())
    throw std::invalid_argument(std::string(op) + ": length mismatch (" +
                                std::to_string(a.numel()) + " vs " +
                                std::to_string(b.numel()) + ")");
}

}  // namespace

double dot(const Tensor& a, const Tensor& b, const Repr& out_fmt,
           Rounding mode, uint64_t key, OpTally* tally) {
  check_same_length(a, b, "dot");
  int64_t n = a.numel();
  if (tally) {
    tally->mul += static_cast<uint64_t>(n);
    if (n > 0) tally->add += static_cast<uint64_t>(n - 1);
  }
  double wide = dot_wide(a.ptr(), b.ptr(), n);
  return quantize(wide, out_fmt, mode, u01_at(key, 0));
}

double shift_dot(const Tensor& a, const Tensor& y, const Repr& out_fmt,
                 Rounding mode, uint64_t key, OpTally* tally) {
  check_same_length(a, y, "shift_dot");
  for (int64_t i = 0; i < y.numel(); ++i)
    if (!is_pot_value(y[i]))
      throw std::invalid_argument(
          "shift_dot: operand not power-of-two constrained at index " +
          std::to_string(i));
  int64_t nnz = 0;
  double wide = shift_dot_wide(a.ptr(), y.ptr(), a.numel(), 0.0, &nnz);
  if (tally) {
    tally->shift += static_cast<uint64_t>(nnz);
    if (nnz > 0) tally->add += static_cast<uint64_t>(nnz - 1);
  }
  return quantize(wide, out_fmt, mode, u01_at(key, 0));
}

Tensor quantize_tensor(const Tensor& t, const Repr& r, Rounding mode,
                       uint64_t key) {
  Tensor out(t.shape);
  quantize_buf(t.ptr(), out.ptr(), t.numel(), r, mode, key);
  return out;
}

bool tensor_representable(const Tensor& t, const Repr& r) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!representable(t[i], r)) return false;
  return true;
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b,
                   const Repr& out_fmt, Rounding mode, uint64_t key,
                   OpTally* tally) {
  bool scalar_b = b.numel() == 1;
  if (!scalar_b) check_same_length(a, b, "elementwise");
  int64_t n = a.numel();
  Tensor wide(a.shape);
  for (int64_t i = 0; i < n; ++i) {
    double x = a[i];
    double y = scalar_b ? b[0] : b[i];
    switch (op) {
      case EwOp::Add: wide[i] = x + y; break;
      case EwOp::Sub: wide[i] = x - y; break;
      case EwOp::Mul: wide[i] = x * y; break;
      case EwOp::Max: wide[i] = x > y ? x : y; break;
    }
  }
  if (tally) {
    auto un = static_cast<uint64_t>(n);
    switch (op) {
      case EwOp::Add:
      case EwOp::Sub: tally->add += un; break;
      case EwOp::Mul: tally->mul += un; break;
      case EwOp::Max: tally->cmp += un; break;
    }
  }
  quantize_buf(wide.ptr(), wide.ptr(), n, out_fmt, mode, key);
  return wide;
}

}  // namespace lpnum
