#include "lpnum/context.hpp"

#include <cmath>
#include <stdexcept>

namespace lpnum {

namespace {

// Round half to even, independent of the FP environment.
int round_even(double m) {
  double r = std::floor(m + 0.5);
  if (m + 0.5 == r && std::fmod(r, 2.0) != 0.0) r -= 1.0;
  return static_cast<int>(r);
}

}  // namespace

int context_scale_exponent(const double* x, int64_t n) {
  if (n <= 0) throw std::invalid_argument("context: empty collection");
  double sum = 0.0;
  int64_t nonzero = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] == 0.0) continue;
    sum += std::log2(std::fabs(x[i]));
    ++nonzero;
  }
  if (nonzero == 0) return 0;
  return round_even(sum / static_cast<double>(nonzero));
}

ClassFormat parse_class_format(const std::string& s) {
  std::string body;
  if (s.rfind("ctx-", 0) == 0)
    body = s.substr(4);
  else if (s.rfind("context-", 0) == 0)
    body = s.substr(8);
  else
    return ClassFormat{false, parse_repr(s)};

  Repr base = parse_repr(body);
  if (base.is_wide())
    throw std::invalid_argument("format: '" + s + "' cannot be a context format");
  if (const auto* f = base.flt()) {
    // Context floats use a relative two's-complement exponent: bias 2^(E-1).
    base.base = FloatFormat::make_relative(f->ebits, f->mbits);
  }
  return ClassFormat{true, base};
}

std::string class_format_name(const ClassFormat& cf) {
  if (!cf.context) return format_name(cf.repr);
  Repr printable = cf.repr;
  if (const auto* f = printable.flt())
    printable.base = FloatFormat::make(f->ebits, f->mbits);
  return "ctx-" + format_name(printable);
}

}  // namespace lpnum
