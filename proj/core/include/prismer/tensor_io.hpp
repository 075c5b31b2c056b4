#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prismer/tensor.hpp"

namespace prismer {

// "PTEN" binary layout: magic, u8 rank, little-endian u32 extents, then
// little-endian IEEE-754 float32 values in row-major order.
std::vector<std::uint8_t> encode_pten(const Tensor& tensor);
Tensor decode_pten(std::span<const std::uint8_t> bytes);

void write_pten(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_pten(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
// Digest of the in-memory (double precision) values and shape.
std::string tensor_sha256(const Tensor& tensor);

}  // namespace prismer
