#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lpnum {

// Labeled image set. Channel values live as raw bytes; pixels materialize as
// byte / 255.0 in double at batch assembly.
struct Dataset {
  int channels = 3;
  int height = 32;
  int width = 32;
  int num_classes = 10;
  std::vector<uint8_t> pixels;  // [n][channels*height*width]
  std::vector<int> labels;
  std::string source;  // provenance shown in reports

  int64_t size() const { return (int64_t)labels.size(); }
  int64_t image_elems() const { return (int64_t)channels * height * width; }
  void fill_batch(const int64_t* indices, int count, double* out_images,
                  int* out_labels) const;
};

// CIFAR-10 binary batches: 3073-byte records, one label byte then 3072
// channel bytes. Errors name the offending file and the byte counts.
Dataset load_cifar10(const std::vector<std::string>& files);

// data_batch_1..5.bin for training, test_batch.bin otherwise.
Dataset load_cifar10_dir(const std::string& dir, bool train);

// First n/k examples of each class in file order; n must be a multiple of
// the class count.
Dataset stratified_subset(const Dataset& d, int64_t n);

// Class-prototype blobs with additive noise:
//   pixel = clamp01(0.5 + separation * proto + 0.25 * noise)
// proto depends on (seed, class, position), noise on (seed, image, position),
// both standard normal. Labels cycle through the classes.
Dataset synthesize_dataset(int64_t n, int num_classes, int channels,
                           int height, int width, double separation,
                           uint64_t seed);

}  // namespace lpnum
