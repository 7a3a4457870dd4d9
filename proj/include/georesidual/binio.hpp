#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace georesidual::binio {

/// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v);
  void f64s(std::span<const double> v);
  /// u32 length prefix followed by the raw bytes.
  void str(std::string_view s);

  const std::string& buffer() const noexcept { return buf_; }

 private:
  void put(std::uint64_t v, int n);
  std::string buf_;
};

/// Little-endian byte source over an in-memory buffer. Reads past the end
/// throw TruncatedFile.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n);
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64();
  void f64s(std::span<double> out);
  std::string str();

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::uint64_t get(int n);
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Whole-file read; IoError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a temporary sibling then renames over `path`. IoError on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// zlib CRC-32 of the bytes.
std::uint32_t crc32(std::string_view data);

}  // namespace georesidual::binio
