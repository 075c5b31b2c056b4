#include "prismer/tensor_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "prismer/error.hpp"

namespace prismer {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'E', 'N'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_pten(const Tensor& tensor) {
  const auto& shape = tensor.shape();
  if (shape.size() > 255) throw DimensionError("PTEN supports rank <= 255");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (auto e : shape) {
    if (e > UINT32_MAX) throw DimensionError("PTEN extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  out.reserve(out.size() + 4 * tensor.numel());
  for (double v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Tensor decode_pten(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a PTEN stream");
  const std::size_t rank = bytes[4];
  if (bytes.size() < 5 + 4 * rank) throw IoError("truncated PTEN header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) shape[i] = get_u32(bytes, 5 + 4 * i);
  const auto n = shape_numel(shape);
  const auto offset = 5 + 4 * rank;
  if (bytes.size() != offset + 4 * n) throw IoError("PTEN payload size does not match its shape");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
  return Tensor::from(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_pten(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_bytes(path, encode_pten(tensor));
}

Tensor read_pten(const std::filesystem::path& path) { return decode_pten(read_file_bytes(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

std::string tensor_sha256(const Tensor& tensor) {
  std::vector<std::uint8_t> bytes;
  for (auto e : tensor.shape()) put_u32(bytes, static_cast<std::uint32_t>(e));
  const auto values = tensor.data();
  const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
  bytes.insert(bytes.end(), raw, raw + values.size_bytes());
  return sha256_hex(bytes);
}

}  // namespace prismer
