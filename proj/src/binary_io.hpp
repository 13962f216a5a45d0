#pragma once

// Little-endian byte encoding used by the checkpoint and feature formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "lsa/error.hpp"

namespace lsa::detail {

class ByteWriter {
 public:
  void magic(std::string_view tag) { out_.append(tag); }

  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }

  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string_view what) : bytes_(bytes), what_(what) {}

  void expect_magic(std::string_view tag) {
    if (bytes_.substr(0, tag.size()) != tag) {
      throw FormatError(std::string(what_) + ": bad magic, expected '" + std::string(tag) + "'");
    }
    pos_ = tag.size();
  }

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  /// Throws unless at least `count` items of `width` bytes remain.
  void need_items(std::uint64_t count, std::size_t width) {
    if (count > remaining() / width) truncated();
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError(std::string(what_) + ": trailing bytes");
  }

 private:
  [[noreturn]] void truncated() const { throw FormatError(std::string(what_) + ": truncated payload"); }

  void need(std::size_t n) const {
    if (remaining() < n) truncated();
  }

  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string_view bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

}  // namespace lsa::detail
