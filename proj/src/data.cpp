#include "lpnum/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "lpnum/rng.hpp"

namespace lpnum {

namespace {
constexpr int64_t kCifarRecord = 3073;
constexpr int64_t kCifarImage = 3072;
}  // namespace

void Dataset::fill_batch(const int64_t* indices, int count, double* out_images,
                         int* out_labels) const {
  const int64_t elems = image_elems();
  for (int b = 0; b < count; ++b) {
    const int64_t i = indices[b];
    if (i < 0 || i >= size())
      throw std::out_of_range("dataset: index " + std::to_string(i) +
                              " outside [0," + std::to_string(size()) + ")");
    const uint8_t* src = pixels.data() + i * elems;
    double* dst = out_images + (int64_t)b * elems;
    for (int64_t j = 0; j < elems; ++j) dst[j] = src[j] / 255.0;
    out_labels[b] = labels[i];
  }
}

Dataset load_cifar10(const std::vector<std::string>& files) {
  Dataset d;
  d.source = "cifar10";
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cifar: cannot open " + path);
    in.seekg(0, std::ios::end);
    const int64_t bytes = (int64_t)in.tellg();
    in.seekg(0, std::ios::beg);
    if (bytes <= 0 || bytes % kCifarRecord != 0)
      throw std::runtime_error(
          "cifar: " + path + " holds " + std::to_string(bytes) +
          " bytes, expected a positive multiple of " +
          std::to_string(kCifarRecord));
    const int64_t n = bytes / kCifarRecord;
    std::vector<uint8_t> buf((size_t)bytes);
    in.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (in.gcount() != bytes)
      throw std::runtime_error("cifar: " + path + " truncated at " +
                               std::to_string(in.gcount()) + " of " +
                               std::to_string(bytes) + " bytes");
    d.pixels.reserve(d.pixels.size() + (size_t)(n * kCifarImage));
    d.labels.reserve(d.labels.size() + (size_t)n);
    for (int64_t r = 0; r < n; ++r) {
      const uint8_t* rec = buf.data() + r * kCifarRecord;
      if (rec[0] >= 10)
        throw std::runtime_error("cifar: " + path + " record " +
                                 std::to_string(r) + " has label " +
                                 std::to_string(rec[0]));
      d.labels.push_back(rec[0]);
      d.pixels.insert(d.pixels.end(), rec + 1, rec + kCifarRecord);
    }
  }
  return d;
}

Dataset load_cifar10_dir(const std::string& dir, bool train) {
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  return load_cifar10(files);
}

Dataset stratified_subset(const Dataset& d, int64_t n) {
  if (n <= 0 || n % d.num_classes != 0)
    throw std::invalid_argument("subset: size " + std::to_string(n) +
                                " is not a positive multiple of " +
                                std::to_string(d.num_classes) + " classes");
  const int64_t per_class = n / d.num_classes;
  std::vector<int64_t> quota((size_t)d.num_classes, per_class);
  Dataset out;
  out.channels = d.channels;
  out.height = d.height;
  out.width = d.width;
  out.num_classes = d.num_classes;
  out.source = d.source + " subset[" + std::to_string(n) + "]";
  const int64_t elems = d.image_elems();
  out.pixels.reserve((size_t)(n * elems));
  out.labels.reserve((size_t)n);
  for (int64_t i = 0; i < d.size() && out.size() < n; ++i) {
    const int c = d.labels[i];
    if (quota[c] == 0) continue;
    --quota[c];
    out.labels.push_back(c);
    const uint8_t* src = d.pixels.data() + i * elems;
    out.pixels.insert(out.pixels.end(), src, src + elems);
  }
  if (out.size() < n)
    throw std::runtime_error("subset: only " + std::to_string(out.size()) +
                             " of " + std::to_string(n) +
                             " examples available with balanced classes");
  return out;
}

Dataset synthesize_dataset(int64_t n, int num_classes, int channels,
                           int height, int width, double separation,
                           uint64_t seed) {
  if (n <= 0 || num_classes <= 0)
    throw std::invalid_argument("synthesize: need positive size and classes");
  Dataset d;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.num_classes = num_classes;
  d.source = "synthetic";
  const int64_t elems = d.image_elems();
  std::vector<std::vector<double>> proto((size_t)num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const uint64_t ck = derive(derive(seed, rng_tag::synth), (uint64_t)c);
    proto[c].resize((size_t)elems);
    for (int64_t j = 0; j < elems; ++j)
      proto[c][j] = gauss_at(ck, (uint64_t)j);
  }
  d.pixels.resize((size_t)(n * elems));
  d.labels.resize((size_t)n);
  for (int64_t i = 0; i < n; ++i) {
    const int c = (int)(i % num_classes);
    d.labels[i] = c;
    const uint64_t nk =
        derive(derive(seed, rng_tag::synth), 0x100000 + (uint64_t)i);
    uint8_t* dst = d.pixels.data() + i * elems;
    for (int64_t j = 0; j < elems; ++j) {
      const double v =
          0.5 + separation * proto[c][j] + 0.25 * gauss_at(nk, (uint64_t)j);
      const double clamped = std::min(1.0, std::max(0.0, v));
      dst[j] = (uint8_t)std::lround(clamped * 255.0);
    }
  }
  return d;
}

}  // namespace lpnum
