#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "hedge/checkpoint.hpp"
#include "hedge/errors.hpp"
#include "hedge/idx.hpp"
#include "hedge/rng.hpp"
#include "support/testutil.hpp"

using namespace hedge;

namespace {

NamedArrays sample_arrays() {
  Rng rng(51);
  NamedArrays out;
  for (const auto& [name, shape] :
       std::vector<std::pair<std::string, std::vector<int64_t>>>{
           {"alpha", {3, 2}}, {"beta", {1}}, {"z/deep.name", {2, 2, 2}}}) {
    Array a(shape);
    for (double& v : a.data) v = rng.uniform(-5.0, 5.0);
    out[name] = a;
  }
  // exact edge values must survive the trip
  out["beta"].data[0] = -0.0;
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("named arrays round-trip bit-exactly") {
  const NamedArrays arrays = sample_arrays();
  testutil::FileGuard f(testutil::tmp_path("arrays.hckp"));
  write_named_arrays(f.path, arrays);
  const NamedArrays back = read_named_arrays(f.path);
  CHECK(testutil::bit_equal(arrays, back));
  CHECK(std::signbit(back.at("beta").data[0]));
}

TEST_CASE("empty map is a valid file") {
  testutil::FileGuard f(testutil::tmp_path("arrays.hckp"));
  write_named_arrays(f.path, {});
  CHECK(read_named_arrays(f.path).empty());
}

TEST_CASE("corruption and version drift are caught") {
  testutil::FileGuard f(testutil::tmp_path("arrays.hckp"));
  write_named_arrays(f.path, sample_arrays());
  const std::vector<uint8_t> good = read_file_bytes(f.path);

  SUBCASE("payload flip") {
    std::vector<uint8_t> bad = good;
    bad[bad.size() / 2] ^= 0x01;
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), ChecksumMismatch);
  }
  SUBCASE("crc flip") {
    std::vector<uint8_t> bad = good;
    bad.back() ^= 0xff;
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), ChecksumMismatch);
  }
  SUBCASE("wrong magic") {
    std::vector<uint8_t> bad = good;
    bad[1] = 'X';
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), FormatVersionMismatch);
  }
  SUBCASE("future version") {
    std::vector<uint8_t> bad = good;
    bad[4] = 0x7f;
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), FormatVersionMismatch);
  }
  SUBCASE("truncation") {
    std::vector<uint8_t> bad = good;
    bad.resize(bad.size() - 12);
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), ChecksumMismatch);
  }
  SUBCASE("trailing garbage") {
    std::vector<uint8_t> bad = good;
    bad.insert(bad.end(), {1, 2, 3, 4});
    write_file_bytes(f.path, bad);
    CHECK_THROWS_AS(read_named_arrays(f.path), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_named_arrays("no/such/arrays.hckp"), IoFailure);
  }
}

TEST_CASE("string packing round-trips") {
  for (const std::string s : {std::string(""), std::string("hello"),
                              std::string("with\0byte", 9)}) {
    const Array a = pack_string(s);
    CHECK(a.data.size() == s.size());
    CHECK(unpack_string(a) == s);
  }
}

TEST_SUITE_END();
