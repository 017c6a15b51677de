#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace lpnum {

enum class Rounding { Nearest, Stochastic, Truncate };

Rounding parse_rounding(const std::string& s);
std::string to_string(Rounding mode);

// Two's-complement fixed point: codes k in [-2^(I+F-1), 2^(I+F-1)-1],
// value = k * 2^-F. I+F <= 16.
struct FixedFormat {
  int ibits = 0;
  int fbits = 0;

  int total_bits() const { return ibits + fbits; }
  double eps() const;
  double max_value() const;
  double min_value() const;

  friend bool operator==(const FixedFormat&, const FixedFormat&) = default;
};

// Minifloat: 1 sign bit, E exponent bits, M mantissa bits. No inf/NaN: the
// top exponent code is an ordinary normal binade and overflow saturates.
// Exponent code 0 holds zero and (when M > 0) subnormals. M = 0 is legal and
// leaves only zero and pure powers of two.
struct FloatFormat {
  int ebits = 0;
  int mbits = 0;
  int bias = 0;

  static FloatFormat make(int ebits, int mbits);          // bias 2^(E-1) - 1
  static FloatFormat make_relative(int ebits, int mbits); // bias 2^(E-1)

  int total_bits() const { return 1 + ebits + mbits; }
  int emin() const { return 1 - bias; }
  int emax() const { return (1 << ebits) - 1 - bias; }
  double max_value() const;
  double min_positive() const;
  bool is_pot() const { return mbits == 0; }

  friend bool operator==(const FloatFormat&, const FloatFormat&) = default;
};

struct WideFormat {
  friend bool operator==(const WideFormat&, const WideFormat&) = default;
};

// A representation: a base grid optionally translated by a global power-of-two
// scale. value = 2^scale_exp * (base grid point).
struct Repr {
  std::variant<WideFormat, FixedFormat, FloatFormat> base;
  int scale_exp = 0;

  bool is_wide() const { return std::holds_alternative<WideFormat>(base); }
  const FixedFormat* fixed() const { return std::get_if<FixedFormat>(&base); }
  const FloatFormat* flt() const { return std::get_if<FloatFormat>(&base); }
  bool is_pot() const { return flt() && flt()->is_pot(); }

  // Storage width per element; the simulator books wide values as 32-bit.
  int storage_bits() const;
  double max_value() const;

  static Repr wide() { return Repr{WideFormat{}, 0}; }
  static Repr fixed(int i, int f, int scale = 0) {
    return Repr{FixedFormat{i, f}, scale};
  }
  static Repr flt(int e, int m, int scale = 0) {
    return Repr{FloatFormat::make(e, m), scale};
  }

  friend bool operator==(const Repr&, const Repr&) = default;
};

// Bracketing grid points with saturation already applied: for |v| beyond the
// representable range lo == hi == sign * max. On-grid v gives lo == hi == v.
struct Neighbors {
  double lo = 0.0;
  double hi = 0.0;
};

Neighbors grid_neighbors(double v, const Repr& r);

// Quantize one wide value. Saturates first, then rounds on the local grid.
// `u01` feeds stochastic rounding (probability of the upper neighbor equals
// (v-lo)/(hi-lo)); ignored by the deterministic modes.
double quantize(double v, const Repr& r, Rounding mode, double u01 = 0.0);

bool representable(double v, const Repr& r);

// All representable values, ascending. Rejects wide and payloads over 16 bits.
std::vector<double> enumerate_codepoints(const Repr& r);

// Format literals: "wide", "fixed[I,F]", "float[E,M]", "pot[E]" with an
// optional "*2^k" suffix. Throws std::invalid_argument with a diagnostic.
Repr parse_repr(const std::string& s);
std::string format_name(const Repr& r);

void validate(const FixedFormat& f);
void validate(const FloatFormat& f);

}  // namespace lpnum
