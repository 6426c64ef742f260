#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace mdkt {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f64_array(std::span<const double> vs) { raw(vs.data(), vs.size() * 8); }
  void bytes(const char* p, std::size_t n) { raw(p, n); }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::string path_;
  std::ofstream out_;
};

// Reads little-endian scalars and tracks the byte offset so malformed files
// can be reported precisely.
class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  void f64_array(std::span<double> out) { raw(out.data(), out.size() * 8); }
  void bytes(char* p, std::size_t n) { raw(p, n); }

  std::uint64_t offset() const { return offset_; }

  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("format error in " + path_ + " at byte " + std::to_string(offset_) +
                      ": " + why);
  }

  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) fail("trailing bytes after payload");
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
    offset_ += n;
  }

  std::string path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace mdkt
