#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hedge/errors.hpp"

namespace hedge {

// One source digit pool: 28x28 grayscale images in [0,1] plus labels 0..9.
struct RawDigitSet {
  std::vector<std::vector<double>> images;  // each 784 values, row-major
  std::vector<int> labels;
  std::string split_tag;  // "train" or "test"

  size_t size() const { return images.size(); }
};

// IDX parsing. Images: magic 0x00000803, big-endian (n, rows, cols), then
// n*rows*cols bytes; byte b becomes pixel b/255. Labels: magic 0x00000801,
// big-endian n, then n bytes each in 0..9.
// require_rows/cols of 0 means "accept whatever the header says".
std::vector<std::vector<double>> parse_idx_images(std::span<const uint8_t> bytes,
                                                  int require_rows = 28,
                                                  int require_cols = 28);
std::vector<int> parse_idx_labels(std::span<const uint8_t> bytes);

// Inverse of the parsers (pixel -> round(v*255)); used for round-trip checks
// and for writing digit subsets back out.
std::vector<uint8_t> serialize_idx_images(const std::vector<std::vector<double>>& images,
                                          int rows = 28, int cols = 28);
std::vector<uint8_t> serialize_idx_labels(const std::vector<int>& labels);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes);

// Load and pair an images file with its labels file.
RawDigitSet load_digit_set(const std::string& images_path,
                           const std::string& labels_path,
                           const std::string& split_tag);

}  // namespace hedge
