#pragma once

#include <cstdint>
#include <string>

#include "lpnum/format.hpp"

namespace lpnum {

// A context is a group of same-layer, same-class values sharing one exact
// power-of-two scale factor 2^scale_exp.
struct Context {
  std::string id;
  int scale_exp = 0;
  int64_t member_count = 0;
};

// Nearest-integer (ties to even) of the mean log2 magnitude over nonzero
// members. All-zero collections get exponent 0. Throws on empty input.
int context_scale_exponent(const double* x, int64_t n);

// Per-parameter-class format: either a static representation or a context
// format whose live scale comes from the owning context.
struct ClassFormat {
  bool context = false;
  Repr repr;  // for context formats: the base grid, relative to the scale

  Repr with_scale(int scale_exp) const {
    Repr r = repr;
    r.scale_exp += context ? scale_exp : 0;
    return r;
  }

  friend bool operator==(const ClassFormat&, const ClassFormat&) = default;
};

// Accepts the static format literals plus "ctx-fixed[I,F]" / "ctx-float[E,M]"
// (a "context-" prefix is accepted as a synonym).
ClassFormat parse_class_format(const std::string& s);
std::string class_format_name(const ClassFormat& cf);

}  // namespace lpnum
