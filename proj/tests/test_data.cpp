#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lpnum/data.hpp"
#include "lpnum/rng.hpp"

using namespace lpnum;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
  fs::path p = fs::temp_directory_path() / "lpnum_data_tests";
  fs::create_directories(p);
  return p;
}

void write_cifar_batch(const fs::path& path, int n, uint8_t label_base,
                       uint8_t pixel_base) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (int r = 0; r < n; ++r) {
    uint8_t label = (uint8_t)((label_base + r) % 10);
    out.put((char)label);
    for (int j = 0; j < 3072; ++j)
      out.put((char)((pixel_base + r + j) & 0xff));
  }
}

}  // namespace

TEST_CASE("synthetic images follow the documented recipe") {
  const uint64_t seed = 555;
  const double sep = 0.12;
  Dataset d = synthesize_dataset(9, 4, 2, 3, 3, sep, seed);
  CHECK(d.size() == 9);
  CHECK(d.num_classes == 4);
  CHECK(d.image_elems() == 18);
  CHECK(d.source == "synthetic");
  for (int64_t i = 0; i < 9; ++i) CHECK(d.labels[i] == (int)(i % 4));

  for (int64_t i : {int64_t{0}, int64_t{5}, int64_t{8}}) {
    const int c = (int)(i % 4);
    const uint64_t ck = derive(derive(seed, rng_tag::synth), (uint64_t)c);
    const uint64_t nk =
        derive(derive(seed, rng_tag::synth), 0x100000 + (uint64_t)i);
    for (int64_t j = 0; j < 18; ++j) {
      double v = 0.5 + sep * gauss_at(ck, (uint64_t)j) +
                 0.25 * gauss_at(nk, (uint64_t)j);
      v = std::min(1.0, std::max(0.0, v));
      const uint8_t expect = (uint8_t)std::lround(v * 255.0);
      CHECK(d.pixels[(size_t)(i * 18 + j)] == expect);
    }
  }

  // Same class, different images: shared prototype, distinct noise.
  Dataset again = synthesize_dataset(9, 4, 2, 3, 3, sep, seed);
  CHECK(again.pixels == d.pixels);
  bool differs = false;
  for (int64_t j = 0; j < 18; ++j)
    if (d.pixels[(size_t)j] != d.pixels[(size_t)(4 * 18 + j)]) differs = true;
  CHECK(differs);

  CHECK_THROWS_AS(synthesize_dataset(0, 4, 2, 3, 3, sep, seed),
                  std::invalid_argument);
  CHECK_THROWS_AS(synthesize_dataset(9, 0, 2, 3, 3, sep, seed),
                  std::invalid_argument);
}

TEST_CASE("batch assembly scales bytes to unit range") {
  Dataset d;
  d.channels = 1;
  d.height = 1;
  d.width = 4;
  d.num_classes = 2;
  d.pixels = {0, 51, 255, 128, 10, 20, 30, 40};
  d.labels = {1, 0};

  int64_t idx[3] = {1, 0, 1};
  std::vector<double> img(12);
  int lab[3];
  d.fill_batch(idx, 3, img.data(), lab);
  CHECK(lab[0] == 0);
  CHECK(lab[1] == 1);
  CHECK(lab[2] == 0);
  CHECK(img[0] == 10.0 / 255.0);
  CHECK(img[4] == 0.0);
  CHECK(img[6] == 1.0);
  CHECK(img[7] == 128.0 / 255.0);
  CHECK(img[8] == img[0]);

  int64_t bad = 2;
  CHECK_THROWS_AS(d.fill_batch(&bad, 1, img.data(), lab), std::out_of_range);
  bad = -1;
  CHECK_THROWS_AS(d.fill_batch(&bad, 1, img.data(), lab), std::out_of_range);
}

TEST_CASE("cifar batches parse record by record") {
  fs::path dir = tmpdir();
  write_cifar_batch(dir / "ok.bin", 4, 3, 7);
  Dataset d = load_cifar10({(dir / "ok.bin").string()});
  CHECK(d.size() == 4);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.width == 32);
  CHECK(d.labels == std::vector<int>{3, 4, 5, 6});
  CHECK(d.pixels.size() == 4 * 3072);
  CHECK(d.pixels[0] == 7);           // record 0, first channel byte
  CHECK(d.pixels[3072] == 8);        // record 1 starts one higher
  CHECK(d.source == "cifar10");

  // Concatenation keeps file order.
  write_cifar_batch(dir / "ok2.bin", 2, 0, 0);
  Dataset two =
      load_cifar10({(dir / "ok.bin").string(), (dir / "ok2.bin").string()});
  CHECK(two.size() == 6);
  CHECK(two.labels[4] == 0);

  // Errors carry the file name.
  std::ofstream trunc(dir / "short.bin", std::ios::binary | std::ios::trunc);
  trunc << "abc";
  trunc.close();
  try {
    load_cifar10({(dir / "short.bin").string()});
    FAIL("expected a size error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("short.bin") != std::string::npos);
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }

  fs::path badlab = dir / "badlabel.bin";
  {
    std::ofstream out(badlab, std::ios::binary | std::ios::trunc);
    out.put((char)11);
    for (int j = 0; j < 3072; ++j) out.put((char)0);
  }
  try {
    load_cifar10({badlab.string()});
    FAIL("expected a label error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("badlabel.bin") != std::string::npos);
    CHECK(std::string(e.what()).find("11") != std::string::npos);
  }

  CHECK_THROWS_AS(load_cifar10({(dir / "absent.bin").string()}),
                  std::runtime_error);
}

TEST_CASE("directory loader picks the standard file names") {
  fs::path dir = tmpdir() / "cifar_dir";
  fs::create_directories(dir);
  for (int i = 1; i <= 5; ++i)
    write_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"), 2,
                      (uint8_t)i, 0);
  write_cifar_batch(dir / "test_batch.bin", 3, 0, 0);
  Dataset train = load_cifar10_dir(dir.string(), true);
  CHECK(train.size() == 10);
  CHECK(train.labels[0] == 1);  // data_batch_1 first record
  CHECK(train.labels[8] == 5);  // data_batch_5 first record
  Dataset test = load_cifar10_dir(dir.string(), false);
  CHECK(test.size() == 3);
  CHECK_THROWS_AS(load_cifar10_dir((dir / "missing").string(), true),
                  std::runtime_error);
}

TEST_CASE("stratified subsets take the first examples of each class") {
  Dataset d;
  d.channels = 1;
  d.height = 1;
  d.width = 2;
  d.num_classes = 2;
  d.labels = {0, 0, 0, 1, 0, 1, 1};
  for (int i = 0; i < 7; ++i) {
    d.pixels.push_back((uint8_t)(10 * i));
    d.pixels.push_back((uint8_t)(10 * i + 1));
  }
  Dataset s = stratified_subset(d, 4);
  CHECK(s.size() == 4);
  CHECK(s.labels == std::vector<int>{0, 0, 1, 1});
  CHECK(s.pixels == std::vector<uint8_t>{0, 1, 10, 11, 30, 31, 50, 51});
  CHECK(s.source.find("subset[4]") != std::string::npos);

  CHECK_THROWS_AS(stratified_subset(d, 3), std::invalid_argument);
  CHECK_THROWS_AS(stratified_subset(d, 0), std::invalid_argument);
  CHECK_THROWS_AS(stratified_subset(d, 10), std::runtime_error);
}
