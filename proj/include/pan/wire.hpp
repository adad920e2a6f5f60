#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

#include <zlib.h>

#include "pan/error.hpp"

namespace pan::wire {

// Byte buffers are std::string so files can be written, read, and compared
// with the plain stream API. All multi-byte fields are little-endian on every
// platform.

inline void append_u8(std::string& buf, std::uint8_t v) {
  buf.push_back(static_cast<char>(v));
}

inline void append_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void append_u32(std::string& buf, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline void append_u64(std::string& buf, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) buf.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline void append_f32(std::string& buf, float v) {
  append_u32(buf, std::bit_cast<std::uint32_t>(v));
}

inline void append_f64(std::string& buf, double v) {
  append_u64(buf, std::bit_cast<std::uint64_t>(v));
}

/// Sequential reader over an in-memory file image. Every underrun reports the
/// byte offset where the data ran out.
class Reader {
 public:
  Reader(std::string_view buf, std::string origin) : buf_(buf), origin_(std::move(origin)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": " + what + " at byte " + std::to_string(pos_));
  }

  std::string_view bytes(std::size_t n, const char* what) {
    if (remaining() < n) {
      fail(std::string("truncated ") + what + " (need " + std::to_string(n) + " bytes, have " +
           std::to_string(remaining()) + ")");
    }
    std::string_view out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t u8(const char* what) {
    return static_cast<std::uint8_t>(bytes(1, what)[0]);
  }

  std::uint16_t u16(const char* what) {
    std::string_view b = bytes(2, what);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                      (static_cast<std::uint8_t>(b[1]) << 8));
  }

  std::uint32_t u32(const char* what) {
    std::string_view b = bytes(4, what);
    std::uint32_t v = 0;
    for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<std::uint8_t>(b[k]);
    return v;
  }

  std::uint64_t u64(const char* what) {
    std::string_view b = bytes(8, what);
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | static_cast<std::uint8_t>(b[k]);
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

 private:
  std::string_view buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on '" + path + "'");
  return data;
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw IoError("write failed on '" + path + "'");
}

}  // namespace pan::wire
