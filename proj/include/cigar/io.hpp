#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "cigar/error.hpp"

namespace cigar {

// Little-endian binary containers with a 4-byte magic and a u32 version.
// Loading a file with the wrong magic or version fails loudly.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::Io, "cannot open for writing: " + path);
  }

  void magic(const char tag[4], uint32_t version) {
    out_.write(tag, 4);
    u32(version);
  }

  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { put_le(v); }
  void u64(uint64_t v) { put_le(v); }
  void i64(int64_t v) { put_le(static_cast<uint64_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<uint64_t>(v)); }

  void u32_array(std::span<const uint32_t> v) {
    u64(v.size());
    for (uint32_t x : v) u32(x);
  }
  void u64_array(std::span<const uint64_t> v) {
    u64(v.size());
    for (uint64_t x : v) u64(x);
  }
  void i64_array(std::span<const int64_t> v) {
    u64(v.size());
    for (int64_t x : v) i64(x);
  }
  void f64_array(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorCode::Io, "write failed: " + path_);
  }

 private:
  template <typename T>
  void put_le(T v) {
    unsigned char buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(buf, sizeof(T));
  }

  void raw(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::Io, "cannot open for reading: " + path);
  }

  void expect_magic(const char tag[4], uint32_t version) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, tag, 4) != 0)
      throw Error(ErrorCode::Format,
                  "bad magic in " + path_ + " (expected " + std::string(tag, 4) + ")");
    uint32_t got_version = u32();
    if (got_version != version)
      throw Error(ErrorCode::Format, "unsupported version " + std::to_string(got_version) +
                                         " in " + path_ + " (expected " +
                                         std::to_string(version) + ")");
  }

  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() { return get_le<uint32_t>(); }
  uint64_t u64() { return get_le<uint64_t>(); }
  int64_t i64() { return static_cast<int64_t>(get_le<uint64_t>()); }
  double f64() { return std::bit_cast<double>(get_le<uint64_t>()); }

  std::vector<uint32_t> u32_array() { return array<uint32_t>([this] { return u32(); }); }
  std::vector<uint64_t> u64_array() { return array<uint64_t>([this] { return u64(); }); }
  std::vector<int64_t> i64_array() { return array<int64_t>([this] { return i64(); }); }
  std::vector<double> f64_array() { return array<double>([this] { return f64(); }); }

 private:
  template <typename T, typename F>
  std::vector<T> array(F read_one) {
    uint64_t n = u64();
    std::vector<T> v;
    v.reserve(n);
    for (uint64_t i = 0; i < n; ++i) v.push_back(read_one());
    return v;
  }

  template <typename T>
  T get_le() {
    unsigned char buf[sizeof(T)];
    raw(buf, sizeof(T));
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }

  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw Error(ErrorCode::Format, "truncated file: " + path_);
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace cigar
