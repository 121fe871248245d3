#include "rar/binio.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rar {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::put_pose(const Pose& p) {
  for (int k = 0; k < 3; ++k) put<double>(p.position[k]);
  put<double>(p.orientation.w());
  put<double>(p.orientation.x());
  put<double>(p.orientation.y());
  put<double>(p.orientation.z());
  put<std::uint8_t>(static_cast<std::uint8_t>(p.frame));
  put<std::uint8_t>(static_cast<std::uint8_t>(p.child));
}

void ByteWriter::write_with_crc(const std::filesystem::path& path) const {
  const std::uint32_t crc = crc32_of(bytes_);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    if (!out) throw Error("failed writing '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ByteReader ByteReader::open_checked(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < magic.size() || std::string_view(bytes).substr(0, magic.size()) != magic) {
    throw FormatError("'" + path.string() + "' does not start with magic " + std::string(magic));
  }
  if (bytes.size() < magic.size() + sizeof(std::uint32_t)) throw FormatError("'" + path.string() + "' is truncated");
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
  bytes.resize(bytes.size() - sizeof(stored));
  if (crc32_of(bytes) != stored) throw FormatError("'" + path.string() + "' failed its CRC32 check");
  ByteReader r(std::move(bytes));
  r.pos_ = magic.size();
  return r;
}

const char* ByteReader::take(std::size_t n) {
  if (n > remaining()) throw FormatError("unexpected end of data");
  const char* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

std::string ByteReader::get_string() {
  const auto n = get<std::uint32_t>();
  const char* p = take(n);
  return {p, n};
}

Pose ByteReader::get_pose() {
  Pose p;
  for (int k = 0; k < 3; ++k) p.position[k] = get<double>();
  const double w = get<double>();
  const double x = get<double>();
  const double y = get<double>();
  const double z = get<double>();
  p.orientation = Quat(w, x, y, z);
  const auto f = get<std::uint8_t>();
  const auto c = get<std::uint8_t>();
  if (f > 3 || c > 3) throw FormatError("bad frame tag in pose");
  p.frame = static_cast<Frame>(f);
  p.child = static_cast<Frame>(c);
  return p;
}

}  // namespace rar
