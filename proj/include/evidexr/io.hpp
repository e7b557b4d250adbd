#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evidexr {

/// Base error for everything the library throws on invalid input or I/O.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

// Every binary artifact starts with the same 16 bytes:
//   bytes 0..7   magic, e.g. "EVXSIG\0\0"
//   bytes 8..11  format version, little-endian u32
//   bytes 12..15 reserved, zero
constexpr std::size_t kHeaderBytes = 16;
using Magic = std::array<char, 8>;

inline constexpr Magic kSignalMagic{'E', 'V', 'X', 'S', 'I', 'G', '\0', '\0'};
inline constexpr Magic kParamsMagic{'E', 'V', 'X', 'P', 'R', 'M', '\0', '\0'};
inline constexpr Magic kIndexMagic{'E', 'V', 'X', 'I', 'D', 'X', '\0', '\0'};

/// Append-only little-endian byte buffer.
class Writer {
 public:
  void header(const Magic& magic, std::uint32_t version);
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);  // u32 length + bytes
  void f32s(std::span<const float> v);
  void f64s(std::span<const double> v);
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string what);
  /// Checks magic and returns the version.
  std::uint32_t header(const Magic& magic);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void f32s(std::span<float> out);
  void f64s(std::span<double> out);
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames over `path`, so readers never
/// observe a partially written artifact.
void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace io
}  // namespace evidexr
