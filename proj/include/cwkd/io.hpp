#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cwkd/tensor.hpp"

namespace cwkd {

// CWT1 tensor dump: bytes "CWT1", four little-endian u32 dims (n, c, h, w),
// then n*c*h*w little-endian IEEE-754 doubles in row-major order.
std::vector<std::uint8_t> encode_cwt1(const Tensor4& t);
Tensor4 decode_cwt1(std::span<const std::uint8_t> bytes);

void write_cwt1(const std::filesystem::path& path, const Tensor4& t);
Tensor4 read_cwt1(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cwkd
