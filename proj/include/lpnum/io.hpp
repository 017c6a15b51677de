#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lpnum/net.hpp"
#include "lpnum/tensor.hpp"

namespace lpnum {

// One JSON object per line. No timestamps: identical runs must produce
// identical bytes.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path);
  bool is_open() const { return out_.is_open(); }
  void line(const std::string& json);

 private:
  std::ofstream out_;
};

// Occupancy of log2 magnitudes: bins[k] counts values v with
// floor(log2|v|) == lo + k; zeros live in their own bucket.
struct Histogram {
  int lo = 0;
  std::vector<uint64_t> bins;
  uint64_t zeros = 0;
  uint64_t total = 0;
};
Histogram log2_histogram(const double* x, int64_t n);
std::string histogram_json(const Histogram& h);

void save_checkpoint(const std::string& path, const Network& net,
                     uint64_t iter, int epoch);

struct CheckpointMeta {
  std::string scheme;
  uint64_t seed = 0;
  uint64_t iter = 0;
  int epoch = 0;
};

// Rebuilds the stored network. The kernel mode is a runtime choice and is
// not persisted.
CheckpointMeta load_checkpoint(const std::string& path, Network* out,
                               KernelMode kernel = KernelMode::Auto);

// Same parameter values under a different scheme: copies tensors and
// momentum, refreshes parameter contexts, re-rounds to the new formats.
Network convert_scheme(const Network& src, const SchemeConfig& scheme,
                       KernelMode kernel);

// Flat little-endian binary doubles plus a `<path>.json` sidecar carrying
// shape and format metadata.
void dump_tensor(const std::string& path, const Tensor& t,
                 const std::string& format_name);
Tensor load_tensor_dump(const std::string& path);

}  // namespace lpnum
