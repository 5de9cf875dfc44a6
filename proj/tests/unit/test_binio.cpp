#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <string>

#include "imip/binio.hpp"

using namespace imip;

TEST_CASE("crc32 reproduces the standard check value", "[binio]") {
  const char* msg = "123456789";
  CHECK(crc32(reinterpret_cast<const std::uint8_t*>(msg), 9) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0u);
}

TEST_CASE("crc32 can be computed incrementally", "[binio]") {
  const char* msg = "123456789";
  const auto* p = reinterpret_cast<const std::uint8_t*>(msg);
  const std::uint32_t part = crc32(p, 4);
  CHECK(crc32(p + 4, 5, part) == 0xCBF43926u);
}

TEST_CASE("writer encodes little-endian", "[binio]") {
  ByteWriter w;
  w.u32(0x01020304u);
  REQUIRE(w.buf.size() == 4);
  CHECK(w.buf[0] == 0x04);
  CHECK(w.buf[1] == 0x03);
  CHECK(w.buf[2] == 0x02);
  CHECK(w.buf[3] == 0x01);
}

TEST_CASE("reader inverts the writer for every type", "[binio]") {
  ByteWriter w;
  w.u8(0xAB);
  w.u32(0xDEADBEEFu);
  w.u64(0x0123456789ABCDEFull);
  w.f32(3.25f);
  w.f64(-1.0e-12);
  const char raw[3] = {'x', 'y', 'z'};
  w.bytes(raw, 3);

  ByteReader r(w.buf.data(), w.buf.size());
  CHECK(r.u8() == 0xAB);
  CHECK(r.u32() == 0xDEADBEEFu);
  CHECK(r.u64() == 0x0123456789ABCDEFull);
  CHECK(r.f32() == 3.25f);
  CHECK(r.f64() == -1.0e-12);
  char out[3];
  r.bytes(out, 3);
  CHECK(std::string(out, 3) == "xyz");
  CHECK(r.remaining() == 0);
}

TEST_CASE("short reads raise TruncationError", "[binio]") {
  ByteWriter w;
  w.u32(7);
  ByteReader r(w.buf.data(), w.buf.size());
  r.u32();
  CHECK_THROWS_AS(r.u8(), TruncationError);
  ByteReader r2(w.buf.data(), 3);
  CHECK_THROWS_AS(r2.u32(), TruncationError);
}

TEST_CASE("error types are distinguishable but share a base", "[binio]") {
  CHECK_THROWS_AS(throw VersionError("v"), FormatError);
  CHECK_THROWS_AS(throw TruncationError("t"), FormatError);
  CHECK_THROWS_AS(throw ChecksumError("c"), FormatError);
  CHECK_THROWS_AS(throw FormatError("f"), std::runtime_error);
}

TEST_CASE("file bytes roundtrip", "[binio]") {
  const std::string path = "/tmp/imip_binio_test.bin";
  std::vector<std::uint8_t> data = {0, 1, 255, 42, 0, 9};
  write_file_bytes(path, data);
  CHECK(read_file_bytes(path) == data);
  std::remove(path.c_str());
  CHECK_THROWS(read_file_bytes(path));
}
