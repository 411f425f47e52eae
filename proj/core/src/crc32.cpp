#include "hedge/crc32.hpp"

namespace hedge {
namespace {

struct Table {
  uint32_t t[256];
  Table() {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
  }
};
const Table kTable;

}  // namespace

void Crc32::update(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint32_t c = state_;
  for (size_t i = 0; i < len; ++i) c = kTable.t[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  state_ = c;
}

uint32_t crc32(const void* data, size_t len) {
  Crc32 c;
  c.update(data, len);
  return c.value();
}

}  // namespace hedge
