#include "cwkd/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "cwkd/errors.hpp"

namespace cwkd {

namespace {

constexpr std::uint8_t kMagic[4] = {0x43, 0x57, 0x54, 0x31};
constexpr std::size_t kHeader = 4 + 4 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{b[off + i]} << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_cwt1(const Tensor4& t) {
  const Shape4 s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("CWT1: dimension does not fit in u32");
    }
  }
  std::vector<std::uint8_t> out;
  out.reserve(kHeader + 8 * t.size());
  for (std::uint8_t b : kMagic) out.push_back(b);
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor4 decode_cwt1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("CWT1: bad magic or truncated header");
  }
  const Shape4 s{get_le(bytes, 4, 4), get_le(bytes, 8, 4), get_le(bytes, 12, 4),
                 get_le(bytes, 16, 4)};
  if (bytes.size() != kHeader + 8 * s.size()) {
    throw FormatError("CWT1: payload length does not match dims " + to_string(s));
  }
  std::vector<double> data(s.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<double>(get_le(bytes, kHeader + 8 * i, 8));
  }
  return Tensor4(s, std::move(data));
}

void write_cwt1(const std::filesystem::path& path, const Tensor4& t) {
  const auto bytes = encode_cwt1(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

Tensor4 read_cwt1(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_cwt1(bytes);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace cwkd
