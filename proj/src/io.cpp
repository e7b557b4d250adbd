#include "evidexr/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unistd.h>

namespace evidexr::io {

namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }
}

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  v = to_le(v);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

}  // namespace

void Writer::header(const Magic& magic, std::uint32_t version) {
  buf_.insert(buf_.end(), magic.begin(), magic.end());
  u32(version);
  u32(0);
}

void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::u64(std::uint64_t v) { put(buf_, v); }
void Writer::f32(float v) { put(buf_, std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put(buf_, std::bit_cast<std::uint64_t>(v)); }

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::f32s(std::span<const float> v) {
  buf_.reserve(buf_.size() + v.size() * 4);
  for (float x : v) f32(x);
}

void Writer::f64s(std::span<const double> v) {
  buf_.reserve(buf_.size() + v.size() * 8);
  for (double x : v) f64(x);
}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string what)
    : buf_(std::move(bytes)), what_(std::move(what)) {}

void Reader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) {
    throw Error(what_ + ": truncated file (need " + std::to_string(n) + " bytes at offset " +
                std::to_string(pos_) + ")");
  }
}

std::uint32_t Reader::header(const Magic& magic) {
  need(kHeaderBytes);
  if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw Error(what_ + ": bad magic");
  }
  pos_ += magic.size();
  const std::uint32_t version = u32();
  u32();  // reserved
  return version;
}

std::uint8_t Reader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return to_le(v);
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return to_le(v);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void Reader::f32s(std::span<float> out) {
  need(out.size() * 4);
  for (float& x : out) x = f32();
}

void Reader::f64s(std::span<double> out) {
  need(out.size() * 8);
  for (double& x : out) x = f64();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot write " + path.string());
  }
}

void write_atomic(const std::filesystem::path& path, std::string_view text) {
  write_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace evidexr::io
