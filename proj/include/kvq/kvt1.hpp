#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kvq/tensor.hpp"

namespace kvq {

// KVT1 layout, all little-endian, no padding, no trailing bytes:
//   "KVT1" | u32 ndim (= 2) | u64 rows | u64 cols | rows*cols f32, row-major

std::vector<std::uint8_t> encode_kvt1(const Tensor2D& t);
/// Throws FormatError with the offending byte offset.
Tensor2D decode_kvt1(std::span<const std::uint8_t> bytes);

Tensor2D read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor2D& t);

}  // namespace kvq
