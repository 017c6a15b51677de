#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace lpnum {

// Dense row-major tensor of wide (binary64) values. Quantized tensors hold
// values that are exactly representable under their format; the format itself
// is tracked by the owning structure, not the buffer.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

}  // namespace lpnum
