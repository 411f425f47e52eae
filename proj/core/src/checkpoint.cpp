#include "hedge/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "hedge/crc32.hpp"
#include "hedge/errors.hpp"
#include "hedge/idx.hpp"

namespace hedge {
namespace {

constexpr uint16_t kVersion = 1;

}  // namespace

void write_named_arrays(const std::string& path, const NamedArrays& arrays) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!f) throw IoFailure("cannot open " + path + " for writing");
  Crc32 crc;
  auto put = [&](const void* p, size_t len) {
    crc.update(p, len);
    if (len && std::fwrite(p, 1, len, f.get()) != len)
      throw IoFailure("short write on " + path);
  };
  auto put_pod = [&](auto v) { put(&v, sizeof v); };

  put("HCKP", 4);
  put_pod(kVersion);
  put_pod(uint32_t(arrays.size()));
  for (const auto& [name, arr] : arrays) {
    if (name.size() > 0xffff) throw Error("array name too long");
    put_pod(uint16_t(name.size()));
    put(name.data(), name.size());
    put_pod(uint8_t(arr.shape.size()));
    for (int64_t e : arr.shape) put_pod(uint32_t(e));
    put(arr.data.data(), arr.data.size() * sizeof(double));
  }
  uint32_t sum = crc.value();
  if (std::fwrite(&sum, 1, 4, f.get()) != 4) throw IoFailure("short write on " + path);
  if (std::fflush(f.get()) != 0) throw IoFailure("flush failed on " + path);
}

NamedArrays read_named_arrays(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 14) throw IoFailure(path + " too small for a checkpoint");
  if (std::memcmp(bytes.data(), "HCKP", 4) != 0)
    throw FormatVersionMismatch(path + " lacks the checkpoint magic");
  uint16_t version;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kVersion)
    throw FormatVersionMismatch("checkpoint version " + std::to_string(version) +
                                ", supported " + std::to_string(kVersion));
  uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32(bytes.data(), bytes.size() - 4) != stored)
    throw ChecksumMismatch(path + " is corrupt or truncated");

  size_t off = 6, end = bytes.size() - 4;
  auto need = [&](size_t n) {
    if (off + n > end) throw IoFailure(path + ": entry runs past end of file");
  };
  auto get = [&](void* p, size_t n) {
    need(n);
    std::memcpy(p, bytes.data() + off, n);
    off += n;
  };
  uint32_t count;
  get(&count, 4);
  NamedArrays out;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len;
    get(&name_len, 2);
    need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + off), name_len);
    off += name_len;
    uint8_t ndim;
    get(&ndim, 1);
    std::vector<int64_t> shape(ndim);
    for (auto& e : shape) {
      uint32_t v;
      get(&v, 4);
      e = v;
    }
    Array arr(shape);
    get(arr.data.data(), arr.data.size() * sizeof(double));
    out.emplace(std::move(name), std::move(arr));
  }
  if (off != end) throw ChecksumMismatch(path + " has trailing bytes");
  return out;
}

Array pack_string(const std::string& s) {
  Array a({int64_t(s.size())});
  for (size_t i = 0; i < s.size(); ++i) a[int64_t(i)] = double(uint8_t(s[i]));
  return a;
}

std::string unpack_string(const Array& a) {
  std::string s(size_t(a.size()), '\0');
  for (int64_t i = 0; i < a.size(); ++i) s[size_t(i)] = char(uint8_t(a[i]));
  return s;
}

}  // namespace hedge
