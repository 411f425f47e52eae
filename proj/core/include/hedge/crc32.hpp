#pragma once
#include <cstddef>
#include <cstdint>

namespace hedge {

// Plain CRC-32 (IEEE 802.3 polynomial, the zlib one). Used as the integrity
// trailer on dataset and checkpoint files.
class Crc32 {
 public:
  void update(const void* data, size_t len);
  uint32_t value() const { return state_ ^ 0xffffffffu; }

 private:
  uint32_t state_ = 0xffffffffu;
};

uint32_t crc32(const void* data, size_t len);

}  // namespace hedge
