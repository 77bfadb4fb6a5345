// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splitlstm {

/// Standard CRC-32 (IEEE 802.3, reflected, as used by zlib and PNG).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// CRC-32 of a container that ends in its own CRC-32, excluding that trailer.
/// CRC-32 over the whole container is useless as an identity: it always
/// equals the residue constant 0x2144df1c.
std::uint32_t payload_crc32(std::span<const std::uint8_t> container);

/// SHA-256 as 64 lowercase hex digits; the artifact content hash.
std::string hash_hex(std::span<const std::uint8_t> bytes);

/// Little-endian append-only encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void raw(std::span<const std::uint8_t> data);

  std::size_t size() const noexcept { return bytes_.size(); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian cursor over a byte span. Reading past `limit` throws
/// FormatError(Truncated).
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes), limit_(bytes.size()) {}
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t limit)
      : bytes_(bytes), limit_(limit < bytes.size() ? limit : bytes.size()) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::span<const std::uint8_t> raw(std::size_t n);

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return limit_ - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, std::string_view text);

}  // namespace splitlstm
