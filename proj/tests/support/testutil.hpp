#pragma once
// Shared fixtures for the unit suites: a tiny synthetic two-class dataset
// (no external corpus needed) and a few file/bit-equality helpers.
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "hedge/checkpoint.hpp"
#include "hedge/dataset.hpp"
#include "hedge/rng.hpp"

namespace testutil {

// Single-digit-frame dataset with two synthetic "digit" classes: class 0
// lights the left half of the frame, class 1 the right half, with small
// deterministic per-image jitter. Separable enough that a tiny encoder
// learns it in a couple thousand steps.
inline hedge::NDigitImage toy_image(uint32_t cls, hedge::Rng& rng) {
  hedge::NDigitImage img;
  img.class_id = cls;
  img.provenance = {0};
  img.pixels.assign(784, 0);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) {
      const bool lit = cls == 0 ? c < 14 : c >= 14;
      const uint8_t base = lit ? 180 : 10;
      img.pixels[size_t(r) * 28 + c] =
          uint8_t(base + rng.uniform_int(40));
    }
  return img;
}

inline hedge::NDigitDataset toy_two_class(int per_class_train = 24,
                                          int per_class_test = 8,
                                          uint64_t seed = 7) {
  hedge::NDigitDataset ds;
  ds.split.n_digits = 1;
  ds.split.seed = seed;
  ds.split.training_classes = {0, 1};
  ds.split.seen_test_classes = {0, 1};
  ds.occlusion_prob = 0.0;
  hedge::Rng rng(seed);
  for (int i = 0; i < per_class_train; ++i)
    for (uint32_t cls : {0u, 1u}) ds.train.push_back(toy_image(cls, rng));
  for (int i = 0; i < per_class_test; ++i)
    for (uint32_t cls : {0u, 1u}) {
      hedge::NDigitImage img = toy_image(cls, rng);
      ds.test_clean.push_back(img);
      // corrupt twin: black out the middle third
      for (int r = 9; r < 19; ++r)
        for (int c = 9; c < 19; ++c) img.pixels[size_t(r) * 28 + c] = 0;
      img.corrupted_mask = 1;
      ds.test_corrupt.push_back(img);
    }
  return ds;
}

// Unique-enough scratch path in the test working directory.
inline std::string tmp_path(const std::string& stem) {
  static int counter = 0;
  return stem + "." + std::to_string(++counter) + ".tmp";
}

struct FileGuard {
  std::string path;
  explicit FileGuard(std::string p) : path(std::move(p)) {}
  ~FileGuard() { std::remove(path.c_str()); }
};

inline bool bit_equal(const hedge::Array& a, const hedge::Array& b) {
  return a.shape == b.shape && a.data == b.data;
}

inline bool bit_equal(const hedge::NamedArrays& a, const hedge::NamedArrays& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, arr] : a) {
    auto it = b.find(name);
    if (it == b.end() || !bit_equal(arr, it->second)) return false;
  }
  return true;
}

}  // namespace testutil
