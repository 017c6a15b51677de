#pragma once

#include <cmath>
#include <cstdint>

namespace lpnum {

// Counter-based RNG built on the SplitMix64 finalizer. Streams are stateless:
// a draw is a pure function of (key, index), so any element of any tensor can
// be quantized independently and reproducibly regardless of evaluation order.

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// SplitMix64 output at position `index` of the stream identified by `key`.
constexpr uint64_t rng_at(uint64_t key, uint64_t index) {
  return mix64(key + kGolden * (index + 1));
}

// Derives a child stream key; chain to mix in seed, purpose, iteration, layer.
constexpr uint64_t derive(uint64_t key, uint64_t tweak) {
  return mix64((key ^ 0xa0761d6478bd642fULL) + kGolden * tweak);
}

inline double u01_from_bits(uint64_t r) {
  return static_cast<double>(r >> 11) * 0x1.0p-53;
}

inline double u01_at(uint64_t key, uint64_t index) {
  return u01_from_bits(rng_at(key, index));
}

// Uniform integer in [0, bound) without modulo bias.
inline uint64_t bounded_at(uint64_t key, uint64_t index, uint64_t bound) {
  return static_cast<uint64_t>(
      (static_cast<unsigned __int128>(rng_at(key, index)) * bound) >> 64);
}

// Standard normal via Box-Muller; element i of a stream consumes draws 2i, 2i+1.
inline double gauss_at(uint64_t key, uint64_t element) {
  double u1 = u01_at(key, 2 * element);
  double u2 = u01_at(key, 2 * element + 1);
  double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

struct RngStream {
  uint64_t key = 0;
  uint64_t ctr = 0;

  explicit RngStream(uint64_t k = 0) : key(k) {}
  uint64_t next_u64() { return rng_at(key, ctr++); }
  double next_u01() { return u01_from_bits(next_u64()); }
};

// Stream purposes; combine as derive(derive(derive(seed, tag), iteration), layer).
namespace rng_tag {
constexpr uint64_t weight_init = 1;
constexpr uint64_t dropout = 2;
constexpr uint64_t quant_outputs = 3;
constexpr uint64_t quant_gradients = 4;
constexpr uint64_t quant_updates = 5;
constexpr uint64_t quant_params = 6;
constexpr uint64_t shuffle = 7;
constexpr uint64_t synth = 8;
constexpr uint64_t subset = 9;
constexpr uint64_t quant_input = 10;
}  // namespace rng_tag

}  // namespace lpnum
