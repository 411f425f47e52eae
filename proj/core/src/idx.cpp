#include "hedge/idx.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

namespace hedge {
namespace {

uint32_t read_be32(std::span<const uint8_t> bytes, size_t off) {
  return (uint32_t(bytes[off]) << 24) | (uint32_t(bytes[off + 1]) << 16) |
         (uint32_t(bytes[off + 2]) << 8) | uint32_t(bytes[off + 3]);
}

void write_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

}  // namespace

std::vector<std::vector<double>> parse_idx_images(std::span<const uint8_t> bytes,
                                                  int require_rows,
                                                  int require_cols) {
  if (bytes.size() < 16) throw Truncated("image file shorter than its header");
  if (read_be32(bytes, 0) != 0x00000803u)
    throw BadMagic("expected idx3-ubyte magic 0x00000803");
  uint64_t n = read_be32(bytes, 4);
  uint64_t rows = read_be32(bytes, 8);
  uint64_t cols = read_be32(bytes, 12);
  if ((require_rows && rows != uint64_t(require_rows)) ||
      (require_cols && cols != uint64_t(require_cols)))
    throw DimMismatch("got " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", need " + std::to_string(require_rows) + "x" +
                      std::to_string(require_cols));
  uint64_t need = 16 + n * rows * cols;
  if (bytes.size() < need)
    throw Truncated("need " + std::to_string(need) + " bytes, have " +
                    std::to_string(bytes.size()));
  std::vector<std::vector<double>> images(n);
  size_t off = 16;
  for (uint64_t i = 0; i < n; ++i) {
    auto& img = images[i];
    img.resize(rows * cols);
    for (uint64_t p = 0; p < rows * cols; ++p)
      img[p] = bytes[off + p] / 255.0;
    off += rows * cols;
  }
  return images;
}

std::vector<int> parse_idx_labels(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8) throw Truncated("label file shorter than its header");
  if (read_be32(bytes, 0) != 0x00000801u)
    throw BadMagic("expected idx1-ubyte magic 0x00000801");
  uint64_t n = read_be32(bytes, 4);
  if (bytes.size() < 8 + n)
    throw Truncated("need " + std::to_string(8 + n) + " bytes, have " +
                    std::to_string(bytes.size()));
  std::vector<int> labels(n);
  for (uint64_t i = 0; i < n; ++i) {
    int v = bytes[8 + i];
    if (v > 9) throw LabelOutOfRange("label " + std::to_string(v) + " at index " +
                                     std::to_string(i));
    labels[i] = v;
  }
  return labels;
}

std::vector<uint8_t> serialize_idx_images(const std::vector<std::vector<double>>& images,
                                          int rows, int cols) {
  std::vector<uint8_t> out;
  out.reserve(16 + images.size() * size_t(rows) * size_t(cols));
  write_be32(out, 0x00000803u);
  write_be32(out, uint32_t(images.size()));
  write_be32(out, uint32_t(rows));
  write_be32(out, uint32_t(cols));
  for (const auto& img : images) {
    if (img.size() != size_t(rows) * size_t(cols))
      throw DimMismatch("image has " + std::to_string(img.size()) + " pixels");
    for (double v : img) out.push_back(uint8_t(std::lround(v * 255.0)));
  }
  return out;
}

std::vector<uint8_t> serialize_idx_labels(const std::vector<int>& labels) {
  std::vector<uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, 0x00000801u);
  write_be32(out, uint32_t(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 9) throw LabelOutOfRange(std::to_string(l));
    out.push_back(uint8_t(l));
  }
  return out;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), std::fclose);
  if (!f) throw IoFailure("cannot open " + path);
  std::fseek(f.get(), 0, SEEK_END);
  long len = std::ftell(f.get());
  if (len < 0) throw IoFailure("cannot stat " + path);
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  if (len > 0 && std::fread(bytes.data(), 1, size_t(len), f.get()) != size_t(len))
    throw IoFailure("short read on " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, std::span<const uint8_t> bytes) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!f) throw IoFailure("cannot open " + path + " for writing");
  if (!bytes.empty() &&
      std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoFailure("short write on " + path);
  if (std::fflush(f.get()) != 0) throw IoFailure("flush failed on " + path);
}

RawDigitSet load_digit_set(const std::string& images_path,
                           const std::string& labels_path,
                           const std::string& split_tag) {
  RawDigitSet set;
  auto ibytes = read_file_bytes(images_path);
  auto lbytes = read_file_bytes(labels_path);
  set.images = parse_idx_images(ibytes);
  set.labels = parse_idx_labels(lbytes);
  set.split_tag = split_tag;
  if (set.images.size() != set.labels.size())
    throw DimMismatch("image count " + std::to_string(set.images.size()) +
                      " != label count " + std::to_string(set.labels.size()));
  return set;
}

}  // namespace hedge
