#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "lpnum/kernels.hpp"
#include "lpnum/rng.hpp"

using namespace lpnum;

TEST_CASE("dot_wide is exact on integer-valued inputs") {
  // Integer products and sums stay below 2^53, so any summation order gives
  // the same exact result; this pins correctness without pinning the order.
  uint64_t ka = derive(11, 1), kb = derive(11, 2);
  for (int64_t n : {1, 3, 7, 8, 9, 57, 200}) {
    std::vector<double> a(n), b(n);
    int64_t expect = 0;
    for (int64_t i = 0; i < n; ++i) {
      int64_t ai = static_cast<int64_t>(bounded_at(ka, (uint64_t)(n * 31 + i), 201)) - 100;
      int64_t bi = static_cast<int64_t>(bounded_at(kb, (uint64_t)(n * 31 + i), 201)) - 100;
      a[i] = static_cast<double>(ai);
      b[i] = static_cast<double>(bi);
      expect += ai * bi;
    }
    CHECK(dot_wide(a.data(), b.data(), n) == static_cast<double>(expect));
    CHECK(dot_wide(a.data(), b.data(), n, 5.0) ==
          static_cast<double>(expect + 5));
  }
}

TEST_CASE("shift_apply multiplies by signed powers of two exactly") {
  CHECK(shift_apply(3.0, 32.0) == 96.0);
  CHECK(shift_apply(-3.0, 0.0625) == -0.1875);
  CHECK(shift_apply(3.0, -8.0) == -24.0);
  CHECK(shift_apply(-1.5, -1.0) == 1.5);
  CHECK(shift_apply(0.3, 1.0) == 0.3);
  // Bit-identical to the FPU product for every pot scale.
  for (int e = -30; e <= 32; ++e) {
    double y = std::ldexp(1.0, e);
    double a = 1234.0 / 4096.0;
    CHECK(std::bit_cast<uint64_t>(shift_apply(a, y)) ==
          std::bit_cast<uint64_t>(a * y));
    CHECK(std::bit_cast<uint64_t>(shift_apply(-a, -y)) ==
          std::bit_cast<uint64_t>(-a * -y));
  }
}

TEST_CASE("is_pot_value accepts zero and signed powers of two only") {
  for (double v : {0.0, 1.0, 2.0, 0.5, -4.0, 1024.0, -0.03125})
    CHECK(is_pot_value(v));
  for (double v : {3.0, 0.75, -5.0, HUGE_VAL})
    CHECK_FALSE(is_pot_value(v));
}

TEST_CASE("shift_dot_wide matches dot_wide bit for bit on pot operands") {
  uint64_t key = derive(99, 7);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t n = 1 + (int64_t)bounded_at(key, (uint64_t)trial, 70);
    std::vector<double> a(n), y(n);
    uint64_t ka = derive(key, (uint64_t)(trial * 2));
    uint64_t ky = derive(key, (uint64_t)(trial * 2 + 1));
    for (int64_t i = 0; i < n; ++i) {
      a[i] = (static_cast<double>(bounded_at(ka, (uint64_t)i, 4096)) - 2048) / 4096.0;
      uint64_t pick = bounded_at(ky, (uint64_t)i, 8);
      y[i] = pick == 0 ? 0.0
                       : std::ldexp(pick % 2 ? 1.0 : -1.0,
                                    (int)(pick % 7) - 3);
    }
    double init = trial * 0.125;
    int64_t nnz = 0;
    double s = shift_dot_wide(a.data(), y.data(), n, init, &nnz);
    double d = dot_wide(a.data(), y.data(), n, init);
    CHECK(std::bit_cast<uint64_t>(s) == std::bit_cast<uint64_t>(d));
    int64_t expect_nnz = 0;
    for (int64_t i = 0; i < n; ++i)
      if (y[i] != 0.0) ++expect_nnz;
    CHECK(nnz == expect_nnz);
  }
}

TEST_CASE("checked tensor kernels validate and tally") {
  Tensor a({4}), b({4});
  a.data = {1.0, 2.0, 3.0, 4.0};
  b.data = {0.5, 0.25, 1.0, 2.0};
  OpTally t;
  double r = dot(a, b, Repr::wide(), Rounding::Nearest, 0, &t);
  CHECK(r == 1 * 0.5 + 2 * 0.25 + 3 * 1.0 + 4 * 2.0);
  CHECK(t.mul == 4);
  CHECK(t.add == 3);

  OpTally ts;
  double s = shift_dot(a, b, Repr::wide(), Rounding::Nearest, 0, &ts);
  CHECK(s == r);
  CHECK(ts.shift == 4);
  CHECK(ts.add == 3);

  Tensor bad({4});
  bad.data = {0.5, 0.3, 1.0, 2.0};
  CHECK_THROWS_AS(shift_dot(a, bad, Repr::wide(), Rounding::Nearest, 0, nullptr),
                  std::invalid_argument);
  Tensor short3({3});
  CHECK_THROWS_AS(dot(a, short3, Repr::wide(), Rounding::Nearest, 0, nullptr),
                  std::invalid_argument);
}

TEST_CASE("shift_dot counts skipped zero operands out of the tally") {
  Tensor a({3}), y({3});
  a.data = {1.0, 2.0, 3.0};
  y.data = {0.0, 4.0, 0.0};
  OpTally t;
  double r = shift_dot(a, y, Repr::wide(), Rounding::Nearest, 0, &t);
  CHECK(r == 8.0);
  CHECK(t.shift == 1);
  CHECK(t.add == 0);
}

TEST_CASE("quantize_buf draws one independent stream element per slot") {
  Repr r = Repr::fixed(0, 12);
  uint64_t key = derive(5, 55);
  std::vector<double> in = {0.3, -0.3, 0.1234, 0.4999, -0.25};
  std::vector<double> full(in.size());
  quantize_buf(in.data(), full.data(), (int64_t)in.size(), r,
               Rounding::Stochastic, key);
  for (size_t i = 0; i < in.size(); ++i) {
    double one = quantize(in[i], r, Rounding::Stochastic, u01_at(key, i));
    CHECK(one == full[i]);
  }
  // In-place operation gives the same answer.
  std::vector<double> inplace = in;
  quantize_buf(inplace.data(), inplace.data(), (int64_t)in.size(), r,
               Rounding::Stochastic, key);
  CHECK(inplace == full);
}

TEST_CASE("elementwise helper applies the op then the format") {
  Tensor a({3}), b({3});
  a.data = {1.0, 2.0, 3.0};
  b.data = {0.125, 0.125, 0.125};
  OpTally t;
  Tensor s = elementwise(EwOp::Mul, a, b, Repr::fixed(6, 6),
                         Rounding::Nearest, 0, &t);
  CHECK(s.data == std::vector<double>{0.125, 0.25, 0.375});
  CHECK(t.mul == 3);

  Tensor scalar({1});
  scalar.data = {10.0};
  Tensor m = elementwise(EwOp::Max, a, scalar, Repr::wide(),
                         Rounding::Nearest, 0, nullptr);
  CHECK(m.data == std::vector<double>{10.0, 10.0, 10.0});
}

TEST_CASE("tally accumulation") {
  OpTally a{1, 2, 3, 4, 5}, b{10, 20, 30, 40, 50};
  a += b;
  CHECK(a.mul == 11);
  CHECK(a.add == 22);
  CHECK(a.shift == 33);
  CHECK(a.cmp == 44);
  CHECK(a.scale_adjust == 55);
  CHECK(a.total() == 11 + 22 + 33 + 44 + 55);
}

TEST_CASE("counter rng reproduces and separates streams") {
  CHECK(rng_at(1, 0) == rng_at(1, 0));
  CHECK(rng_at(1, 0) != rng_at(1, 1));
  CHECK(derive(1, 2) != derive(1, 3));
  CHECK(derive(1, 2) != derive(2, 2));
  double u = u01_at(42, 7);
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
  for (uint64_t bound : {1ull, 2ull, 10ull, 4096ull}) {
    uint64_t v = bounded_at(3, 9, bound);
    CHECK(v < bound);
  }
  // Box-Muller draws have sane scale.
  double acc = 0;
  for (int i = 0; i < 1000; ++i) acc += gauss_at(7, (uint64_t)i);
  CHECK(std::fabs(acc / 1000.0) < 0.15);
}
