#pragma once

// Little-endian primitives shared by the FSDS, FEAT and PCKP file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protonc/errors.hpp"

namespace protonc::binary {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline void write_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (auto& c : b) {
    c = static_cast<char>(bits & 0xff);
    bits >>= 8;
  }
  out.write(b.data(), 8);
}

inline void write_f64s(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) write_f64(out, v);
  }
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    read_raw(got.data(), got.size());
    if (got != magic) throw FormatError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  }

  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    read_raw(reinterpret_cast<char*>(b.data()), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  void f64s(std::span<double> out) {
    if constexpr (std::endian::native == std::endian::little) {
      read_raw(reinterpret_cast<char*>(out.data()), out.size() * sizeof(double));
    } else {
      for (auto& v : out) {
        std::array<unsigned char, 8> b{};
        read_raw(reinterpret_cast<char*>(b.data()), 8);
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
        v = std::bit_cast<double>(bits);
      }
    }
  }

  std::string string(std::size_t max_len = 1u << 20) {
    const auto n = u32();
    if (n > max_len) throw FormatError(what_ + ": string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes");
  }

  const std::string& what() const { return what_; }

 private:
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": truncated file");
  }

  std::istream& in_;
  std::string what_;
};

}  // namespace protonc::binary
