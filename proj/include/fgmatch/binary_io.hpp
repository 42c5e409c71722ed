// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitives shared by the embedding table and checkpoint
// formats. Values are assembled byte by byte so the on-disk layout does not
// depend on host endianness.
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>

#include "fgmatch/errors.hpp"

namespace fgmatch::binary {

template <class UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& out, std::uint16_t v) { put_le(out, v); }
inline void put_u32(std::string& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::string& out, std::uint64_t v) { put_le(out, v); }
inline void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

/// Cursor over an in-memory byte buffer. Every read past the end raises a
/// LoadError(Truncated) mentioning `context`.
class Reader {
 public:
  Reader(std::string_view bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw LoadError(LoadErrorKind::Truncated, context_ + ": unexpected end of data while reading " + what);
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <class UInt>
  UInt get_le(const char* what) {
    const auto raw = take(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(raw[i])) << (8 * i);
    }
    return v;
  }

  std::uint8_t u8(const char* what) { return get_le<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return get_le<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return get_le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get_le<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(get_le<std::uint64_t>(what)); }

  const std::string& context() const noexcept { return context_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::Io, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes through a sibling temporary file and renames it into place so a
/// reader never observes a half-written file.
inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// FNV-1a 64-bit; used for content digests, not for security.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace fgmatch::binary
