#pragma once

// Little-endian byte streams for the buffer and checkpoint formats. Files are
// built in memory, then written with a trailing CRC32 of everything before it.

#include "rar/geometry.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace rar {

class FormatError : public Error {
 public:
  using Error::Error;
};

std::uint32_t crc32_of(std::string_view bytes);

class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_raw(const void* data, std::size_t n) { bytes_.append(static_cast<const char*>(data), n); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.append(s);
  }
  void put_pose(const Pose& p);

  const std::string& bytes() const { return bytes_; }
  /// Appends the CRC32 and writes the file atomically (temp file + rename).
  void write_with_crc(const std::filesystem::path& path) const;

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  /// Reads a file, checks `magic` and the trailing CRC32.
  static ByteReader open_checked(const std::filesystem::path& path, std::string_view magic);

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  void get_raw(void* out, std::size_t n) { std::memcpy(out, take(n), n); }
  std::string get_string();
  Pose get_pose();

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const char* take(std::size_t n);
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace rar
