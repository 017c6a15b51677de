#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lpnum/context.hpp"

using namespace lpnum;

TEST_CASE("scale exponent is the rounded mean log2 magnitude") {
  std::vector<double> a = {2.0, 2.0};
  CHECK(context_scale_exponent(a.data(), 2) == 1);
  std::vector<double> b = {1.5};
  CHECK(context_scale_exponent(b.data(), 1) == 1);  // log2 1.5 = 0.585
  std::vector<double> c = {4.0, 16.0};              // mean log2 = 3
  CHECK(context_scale_exponent(c.data(), 2) == 3);
  std::vector<double> d = {-4.0};                   // magnitudes only
  CHECK(context_scale_exponent(d.data(), 1) == 2);
  std::vector<double> e = {0.25, 0.25, 0.25};
  CHECK(context_scale_exponent(e.data(), 3) == -2);
}

TEST_CASE("half-way means round to even") {
  std::vector<double> a = {1.0, 2.0};  // mean log2 = 0.5
  CHECK(context_scale_exponent(a.data(), 2) == 0);
  std::vector<double> b = {2.0, 4.0};  // mean log2 = 1.5
  CHECK(context_scale_exponent(b.data(), 2) == 2);
  std::vector<double> c = {0.5, 0.25};  // mean log2 = -1.5
  CHECK(context_scale_exponent(c.data(), 2) == -2);
}

TEST_CASE("zeros leave the mean and all-zero collections scale to zero") {
  std::vector<double> a = {0.0, 8.0};
  CHECK(context_scale_exponent(a.data(), 2) == 3);
  std::vector<double> z = {0.0, 0.0, 0.0};
  CHECK(context_scale_exponent(z.data(), 3) == 0);
  CHECK_THROWS_AS(context_scale_exponent(nullptr, 0), std::invalid_argument);
}

TEST_CASE("context formats translate their base grid by the live scale") {
  ClassFormat cf = parse_class_format("ctx-fixed[6,6]");
  CHECK(cf.context);
  CHECK(cf.with_scale(-4).scale_exp == -4);
  CHECK(cf.with_scale(3).scale_exp == 3);

  ClassFormat st = parse_class_format("fixed[6,6]");
  CHECK_FALSE(st.context);
  CHECK(st.with_scale(-4).scale_exp == 0);  // static formats ignore contexts
}

TEST_CASE("context floats carry the relative exponent bias") {
  ClassFormat cf = parse_class_format("ctx-float[4,7]");
  CHECK(cf.context);
  REQUIRE(cf.repr.flt() != nullptr);
  CHECK(cf.repr.flt()->bias == 8);  // 2^(E-1), not the standard 2^(E-1)-1
  ClassFormat plain = parse_class_format("float[4,7]");
  CHECK(plain.repr.flt()->bias == 7);
}

TEST_CASE("class format names round-trip") {
  const char* names[] = {"wide", "fixed[0,12]", "ctx-fixed[6,6]",
                         "ctx-float[4,7]", "pot[6]"};
  for (const char* n : names) {
    ClassFormat cf = parse_class_format(n);
    CHECK(class_format_name(cf) == n);
    CHECK(parse_class_format(class_format_name(cf)) == cf);
  }
  CHECK(parse_class_format("context-fixed[6,6]") ==
        parse_class_format("ctx-fixed[6,6]"));
  CHECK_THROWS_AS(parse_class_format("ctx-wide"), std::invalid_argument);
}
