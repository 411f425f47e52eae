#pragma once
#include <map>
#include <string>

#include "hedge/array.hpp"

namespace hedge {

// Named-array container file ("HCKP"): u16 version, entry count, then
// (name, shape, raw little-endian doubles) per entry, trailing CRC-32.
// std::map keys keep the on-disk entry order deterministic.
using NamedArrays = std::map<std::string, Array>;

void write_named_arrays(const std::string& path, const NamedArrays& arrays);
NamedArrays read_named_arrays(const std::string& path);

// Strings ride along as one byte per element; used for RNG state blobs.
Array pack_string(const std::string& s);
std::string unpack_string(const Array& a);

}  // namespace hedge
