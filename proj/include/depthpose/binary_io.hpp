#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "depthpose/error.hpp"

namespace depthpose::detail {

static_assert(std::endian::native == std::endian::little,
              "container formats are little-endian; big-endian hosts need byte swapping");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
public:
  template <typename T> void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  template <typename T> void put_array(std::span<const T> values) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto *p = reinterpret_cast<const std::uint8_t *>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void put_string(const std::string &s) {
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  std::size_t size() const noexcept { return bytes_.size(); }
  std::vector<std::uint8_t> &bytes() noexcept { return bytes_; }
  const std::vector<std::uint8_t> &bytes() const noexcept { return bytes_; }

private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T> T get(const char *what) {
    T value;
    need(sizeof(T), what);
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T> void get_array(std::span<T> out, const char *what) {
    need(out.size_bytes(), what);
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::string get_string(std::size_t n, const char *what) {
    need(n, what);
    std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> span(std::size_t from, std::size_t to) const {
    return bytes_.subspan(from, to - from);
  }

private:
  void need(std::size_t n, const char *what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError(FormatErrorKind::Truncated, std::string("while reading ") + what);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad())
    throw IoError("error reading '" + path + "'");
  return data;
}

inline void write_file(const std::string &path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out)
    throw IoError("error writing '" + path + "'");
}

} // namespace depthpose::detail
