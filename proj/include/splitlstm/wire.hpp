// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "splitlstm/fixed_point.hpp"
#include "splitlstm/split.hpp"

namespace splitlstm {

// Frame layout (little-endian):
//   0x53 0x4C | u8 version | u8 msg_type | u8 dtype | u8 reserved | u32 payload_len
//   | payload | u32 CRC-32 of header + payload
// reserved carries the Q-format descriptor for q8 frames and is 0 otherwise.

inline constexpr std::array<std::uint8_t, 2> kFrameMagic{0x53, 0x4C};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 10;
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;
inline constexpr std::uint32_t kMaxPayload = 1u << 24;

enum class MsgType : std::uint8_t { Hello = 1, Intermediate = 2, Prediction = 3, Error = 4 };

std::string to_string(MsgType type);

struct Frame {
  MsgType type = MsgType::Hello;
  WireDtype dtype = WireDtype::Float32;
  std::uint8_t reserved = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Decodes exactly one frame. Errors are FormatError with kind BadMagic,
/// UnsupportedVersion, Truncated, ChecksumMismatch, UnknownType (msg_type or
/// dtype) or Malformed (length disagreement, trailing bytes).
Frame decode_frame(std::span<const std::uint8_t> bytes);

/// Validates magic and version of a header and returns payload_len, so a
/// stream reader knows how many bytes remain.
std::uint32_t frame_payload_length(std::span<const std::uint8_t, kFrameHeaderSize> header);

// ---------------------------------------------------------------------------
// Payloads

using Tensor = std::variant<std::vector<float>, std::vector<std::int8_t>>;

WireDtype dtype_of(const Tensor& z);
std::size_t element_count(const Tensor& z);

/// u32 count then float32 or int8 elements. Empty z throws ShapeError.
std::vector<std::uint8_t> serialize_intermediate(const Tensor& z);
Tensor deserialize_intermediate(std::span<const std::uint8_t> payload, WireDtype dtype);

std::size_t intermediate_payload_size(int elements, WireDtype dtype);
/// Frame overhead plus payload for one INTERMEDIATE frame.
std::size_t intermediate_frame_size(int elements, WireDtype dtype);

/// INTERMEDIATE frame; q8 frames carry the format descriptor.
Frame intermediate_frame(const Tensor& z, const std::optional<FixedPointFormat>& fmt);

/// PREDICTION payload: one float32 (4 bytes) or one int8 code (1 byte).
using Prediction = std::variant<float, std::int8_t>;
Frame prediction_frame(const Prediction& y, const std::optional<FixedPointFormat>& fmt);
Prediction parse_prediction(const Frame& frame);

enum class ErrorCode : std::uint8_t {
  ManifestMismatch = 1,
  MalformedFrame = 2,
  ProtocolViolation = 3,
  ShapeMismatch = 4,
  DtypeMismatch = 5,
  Internal = 6,
};

struct ErrorMessage {
  ErrorCode code = ErrorCode::Internal;
  std::string message;

  bool operator==(const ErrorMessage&) const = default;
};

/// ERROR payload: u8 reason code + UTF-8 message.
Frame error_frame(const ErrorMessage& error);
ErrorMessage parse_error(const Frame& frame);

/// HELLO from the edge carries the split manifest; the server acknowledges
/// with an empty HELLO.
Frame hello_frame(const SplitManifest& manifest);
SplitManifest parse_hello(const Frame& frame);

}  // namespace splitlstm
