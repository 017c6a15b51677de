#include "lpnum/format.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace lpnum {

namespace {

double canon_zero(double v) { return v == 0.0 ? 0.0 : v; }

[[noreturn]] void bad_format(const std::string& what) {
  throw std::invalid_argument("format: " + what);
}

}  // namespace

Rounding parse_rounding(const std::string& s) {
  if (s == "nearest") return Rounding::Nearest;
  if (s == "stochastic") return Rounding::Stochastic;
  if (s == "truncate") return Rounding::Truncate;
  bad_format("unknown rounding mode '" + s +
             "' (expected nearest|stochastic|truncate)");
}

std::string to_string(Rounding mode) {
  switch (mode) {
    case Rounding::Nearest: return "nearest";
    case Rounding::Stochastic: return "stochastic";
    case Rounding::Truncate: return "truncate";
  }
  return "?";
}

void validate(const FixedFormat& f) {
  if (f.ibits < 0 || f.fbits < 0) bad_format("fixed bit counts must be >= 0");
  int total = f.ibits + f.fbits;
  if (total < 1 || total > 16)
    bad_format("fixed[" + std::to_string(f.ibits) + "," +
               std::to_string(f.fbits) + "]: payload must be 1..16 bits");
}

void validate(const FloatFormat& f) {
  if (f.ebits < 1) bad_format("float needs at least 1 exponent bit");
  if (f.mbits < 0) bad_format("float mantissa bits must be >= 0");
  if (1 + f.ebits + f.mbits > 16)
    bad_format("float[" + std::to_string(f.ebits) + "," +
               std::to_string(f.mbits) + "]: payload must be <= 16 bits");
}

double FixedFormat::eps() const { return std::ldexp(1.0, -fbits); }

double FixedFormat::max_value() const {
  return std::ldexp(1.0, ibits - 1) - eps();
}

double FixedFormat::min_value() const { return -std::ldexp(1.0, ibits - 1); }

FloatFormat FloatFormat::make(int ebits, int mbits) {
  FloatFormat f{ebits, mbits, (1 << (ebits - 1)) - 1};
  validate(f);
  return f;
}

FloatFormat FloatFormat::make_relative(int ebits, int mbits) {
  FloatFormat f{ebits, mbits, 1 << (ebits - 1)};
  validate(f);
  return f;
}

double FloatFormat::max_value() const {
  // (2 - 2^-M) * 2^emax; for M = 0 just 2^emax.
  return std::ldexp(2.0 - std::ldexp(1.0, -mbits), emax());
}

double FloatFormat::min_positive() const {
  return std::ldexp(1.0, emin() - mbits);
}

int Repr::storage_bits() const {
  if (is_wide()) return 32;
  if (const auto* f = fixed()) return f->total_bits();
  return flt()->total_bits();
}

double Repr::max_value() const {
  double m = is_wide()        ? HUGE_VAL
             : fixed() != nullptr ? fixed()->max_value()
                                  : flt()->max_value();
  return std::ldexp(m, scale_exp);
}

namespace {

struct BaseNeighbors {
  double lo, hi;
  int64_t lo_index;  // signed enumeration index of lo (0 at value 0)
};

BaseNeighbors fixed_neighbors(double x, const FixedFormat& f) {
  double mx = f.max_value();
  double mn = f.min_value();
  if (x >= mx) return {mx, mx, 0};
  if (x <= mn) return {mn, mn, 0};
  double k = std::floor(std::ldexp(x, f.fbits));
  double lo = std::ldexp(k, -f.fbits);
  if (lo == x) return {x, x, 0};
  return {lo, lo + f.eps(), static_cast<int64_t>(k)};
}

// Enumeration index of a positive on-grid magnitude (1 = smallest positive).
int64_t float_index(double a, const FloatFormat& f) {
  if (a == 0.0) return 0;
  int e2;
  std::frexp(a, &e2);
  int be = e2 - 1;
  int re = be < f.emin() ? f.emin() : be;
  auto k = static_cast<int64_t>(std::ldexp(a, f.mbits - re));
  if (re == f.emin() && k < (int64_t{1} << f.mbits)) return k;  // subnormal
  int ecode = re - f.emin() + 1;
  return (int64_t{ecode} << f.mbits) + (k - (int64_t{1} << f.mbits));
}

BaseNeighbors float_neighbors(double x, const FloatFormat& f) {
  double mx = f.max_value();
  bool neg = std::signbit(x);
  double a = std::fabs(x);
  if (a == 0.0) return {0.0, 0.0, 0};
  if (a >= mx) {
    double s = neg ? -mx : mx;
    return {s, s, 0};
  }
  int e2;
  std::frexp(a, &e2);
  int be = e2 - 1;
  int re = be < f.emin() ? f.emin() : be;
  double step = std::ldexp(1.0, re - f.mbits);
  double k = std::floor(std::ldexp(a, f.mbits - re));
  double lo_a = std::ldexp(k, re - f.mbits);
  if (lo_a == a) return {x, x, 0};
  double hi_a = lo_a + step;
  int64_t idx = float_index(lo_a, f);
  if (neg) return {-hi_a, canon_zero(-lo_a), -(idx + 1)};
  return {lo_a, hi_a, idx};
}

BaseNeighbors base_neighbors(double x, const Repr& r) {
  if (const auto* f = r.fixed()) return fixed_neighbors(x, *f);
  return float_neighbors(x, *r.flt());
}

}  // namespace

Neighbors grid_neighbors(double v, const Repr& r) {
  if (r.is_wide()) return {v, v};
  double x = std::ldexp(v, -r.scale_exp);
  BaseNeighbors nb = base_neighbors(x, r);
  return {canon_zero(std::ldexp(nb.lo, r.scale_exp)),
          canon_zero(std::ldexp(nb.hi, r.scale_exp))};
}

double quantize(double v, const Repr& r, Rounding mode, double u01) {
  if (r.is_wide()) return v;
  double x = std::ldexp(v, -r.scale_exp);
  BaseNeighbors nb = base_neighbors(x, r);
  double q;
  if (nb.lo == nb.hi) {
    q = nb.lo;
  } else if (mode == Rounding::Truncate) {
    q = nb.lo;
  } else if (mode == Rounding::Nearest) {
    double mid = 0.5 * (nb.lo + nb.hi);
    if (x < mid)
      q = nb.lo;
    else if (x > mid)
      q = nb.hi;
    else
      q = (nb.lo_index & 1) == 0 ? nb.lo : nb.hi;
  } else {
    double p = (x - nb.lo) / (nb.hi - nb.lo);
    q = u01 < p ? nb.hi : nb.lo;
  }
  return canon_zero(std::ldexp(q, r.scale_exp));
}

bool representable(double v, const Repr& r) {
  if (!std::isfinite(v)) return false;
  if (r.is_wide()) return true;
  double x = std::ldexp(v, -r.scale_exp);
  if (x == 0.0) return true;
  if (const auto* f = r.fixed()) {
    if (x > f->max_value() || x < f->min_value()) return false;
  } else if (std::fabs(x) > r.flt()->max_value()) {
    return false;
  }
  BaseNeighbors nb = base_neighbors(x, r);
  return nb.lo == nb.hi;
}

std::vector<double> enumerate_codepoints(const Repr& r) {
  if (r.is_wide()) bad_format("cannot enumerate the wide format");
  std::vector<double> pos;
  std::vector<double> out;
  if (const auto* f = r.fixed()) {
    int64_t half = int64_t{1} << (f->total_bits() - 1);
    out.reserve(2 * half);
    for (int64_t k = -half; k < half; ++k)
      out.push_back(std::ldexp(static_cast<double>(k), -f->fbits + r.scale_exp));
    return out;
  }
  const FloatFormat& f = *r.flt();
  int64_t mcount = int64_t{1} << f.mbits;
  for (int64_t m = 1; m < mcount; ++m)  // subnormals
    pos.push_back(std::ldexp(static_cast<double>(m), f.emin() - f.mbits));
  for (int e = f.emin(); e <= f.emax(); ++e)
    for (int64_t m = 0; m < mcount; ++m)
      pos.push_back(std::ldexp(static_cast<double>(mcount + m), e - f.mbits));
  out.reserve(2 * pos.size() + 1);
  for (auto it = pos.rbegin(); it != pos.rend(); ++it)
    out.push_back(std::ldexp(-*it, r.scale_exp));
  out.push_back(0.0);
  for (double p : pos) out.push_back(std::ldexp(p, r.scale_exp));
  return out;
}

namespace {

int parse_int(const std::string& s, const std::string& ctx) {
  if (s.empty()) bad_format(ctx + ": missing integer");
  size_t pos = 0;
  int v;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    bad_format(ctx + ": bad integer '" + s + "'");
  }
  if (pos != s.size()) bad_format(ctx + ": bad integer '" + s + "'");
  return v;
}

}  // namespace

Repr parse_repr(const std::string& spec) {
  std::string s = spec;
  int scale = 0;
  if (auto star = s.find("*2^"); star != std::string::npos) {
    scale = parse_int(s.substr(star + 3), spec);
    if (scale < -64 || scale > 64) bad_format(spec + ": scale out of range");
    s = s.substr(0, star);
  }
  if (s == "wide") return Repr{WideFormat{}, scale};

  bool has_bias = false;
  int bias = 0;
  if (auto brace = s.find("{bias="); brace != std::string::npos) {
    if (s.back() != '}') bad_format("'" + spec + "': unterminated bias suffix");
    bias = parse_int(s.substr(brace + 6, s.size() - brace - 7), spec);
    has_bias = true;
    s = s.substr(0, brace);
  }

  auto bracket = s.find('[');
  if (bracket == std::string::npos || s.back() != ']')
    bad_format("'" + spec +
               "' (expected wide, fixed[I,F], float[E,M] or pot[E])");
  std::string head = s.substr(0, bracket);
  std::string args = s.substr(bracket + 1, s.size() - bracket - 2);

  if (head == "pot") {
    FloatFormat f = FloatFormat::make(parse_int(args, spec), 0);
    if (has_bias) f.bias = bias;
    return Repr{f, scale};
  }
  auto comma = args.find(',');
  if (comma == std::string::npos) bad_format("'" + spec + "': expected two arguments");
  int a = parse_int(args.substr(0, comma), spec);
  int b = parse_int(args.substr(comma + 1), spec);
  if (head == "fixed") {
    if (has_bias) bad_format("'" + spec + "': bias only applies to floats");
    FixedFormat f{a, b};
    validate(f);
    return Repr{f, scale};
  }
  if (head == "float") {
    FloatFormat f = FloatFormat::make(a, b);
    if (has_bias) f.bias = bias;
    return Repr{f, scale};
  }
  bad_format("unknown format '" + spec + "'");
}

std::string format_name(const Repr& r) {
  std::string base;
  if (r.is_wide()) {
    base = "wide";
  } else if (const auto* f = r.fixed()) {
    base = "fixed[" + std::to_string(f->ibits) + "," +
           std::to_string(f->fbits) + "]";
  } else {
    const FloatFormat& ff = *r.flt();
    int std_bias = (1 << (ff.ebits - 1)) - 1;
    if (ff.mbits == 0 && ff.bias == std_bias) {
      base = "pot[" + std::to_string(ff.ebits) + "]";
    } else {
      base = "float[" + std::to_string(ff.ebits) + "," +
             std::to_string(ff.mbits) + "]";
      if (ff.bias != std_bias)
        base += "{bias=" + std::to_string(ff.bias) + "}";
    }
  }
  if (r.scale_exp != 0) base += "*2^" + std::to_string(r.scale_exp);
  return base;
}

}  // namespace lpnum
