// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/wire.hpp"

#include "splitlstm/binary.hpp"
#include "splitlstm/error.hpp"

namespace splitlstm {
namespace {

std::uint8_t reserved_for(WireDtype dtype, const std::optional<FixedPointFormat>& fmt) {
  if (dtype != WireDtype::Q8) return 0;
  if (!fmt) throw ConfigError("q8 frames need a fixed-point format");
  return fmt->descriptor();
}

void expect_type(const Frame& frame, MsgType type) {
  if (frame.type != type) {
    throw FormatError(FormatError::Kind::Malformed,
                      "expected " + to_string(type) + " frame, got " + to_string(frame.type));
  }
}

}  // namespace

std::string to_string(MsgType type) {
  switch (type) {
    case MsgType::Hello: return "HELLO";
    case MsgType::Intermediate: return "INTERMEDIATE";
    case MsgType::Prediction: return "PREDICTION";
    case MsgType::Error: return "ERROR";
  }
  return "UNKNOWN(" + std::to_string(static_cast<int>(type)) + ")";
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayload) throw ConfigError("frame payload exceeds " + std::to_string(kMaxPayload));
  ByteWriter w;
  w.raw(kFrameMagic);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.u8(static_cast<std::uint8_t>(frame.dtype));
  w.u8(frame.reserved);
  w.u32(static_cast<std::uint32_t>(frame.payload.size()));
  w.raw(frame.payload);
  w.u32(crc32(w.bytes()));
  return std::move(w).take();
}

std::uint32_t frame_payload_length(std::span<const std::uint8_t, kFrameHeaderSize> header) {
  if (header[0] != kFrameMagic[0] || header[1] != kFrameMagic[1]) {
    throw FormatError(FormatError::Kind::BadMagic, "bad frame magic");
  }
  if (header[2] != kWireVersion) {
    throw FormatError(FormatError::Kind::UnsupportedVersion, "unsupported wire version " + std::to_string(header[2]));
  }
  ByteReader r(header.subspan(6));
  const std::uint32_t len = r.u32();
  if (len > kMaxPayload) throw FormatError(FormatError::Kind::Malformed, "payload length " + std::to_string(len));
  return len;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) throw FormatError(FormatError::Kind::Truncated, "truncated frame header");
  const std::uint32_t len = frame_payload_length(bytes.first<kFrameHeaderSize>());
  const std::size_t total = kFrameOverhead + len;
  if (bytes.size() < total) throw FormatError(FormatError::Kind::Truncated, "truncated frame");
  if (bytes.size() > total) {
    throw FormatError(FormatError::Kind::Malformed, std::to_string(bytes.size() - total) + " bytes after frame");
  }
  ByteReader r(bytes);
  r.raw(kFrameHeaderSize);
  Frame frame;
  const auto payload = r.raw(len);
  if (crc32(bytes.first(kFrameHeaderSize + len)) != r.u32()) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, "frame checksum mismatch");
  }
  const std::uint8_t type = bytes[3];
  const std::uint8_t dtype = bytes[4];
  if (type < 1 || type > 4) throw FormatError(FormatError::Kind::UnknownType, "unknown msg_type " + std::to_string(type));
  if (dtype > 1) throw FormatError(FormatError::Kind::UnknownType, "unknown dtype " + std::to_string(dtype));
  frame.type = static_cast<MsgType>(type);
  frame.dtype = static_cast<WireDtype>(dtype);
  frame.reserved = bytes[5];
  frame.payload.assign(payload.begin(), payload.end());
  return frame;
}

// ---------------------------------------------------------------------------

WireDtype dtype_of(const Tensor& z) {
  return std::holds_alternative<std::vector<float>>(z) ? WireDtype::Float32 : WireDtype::Q8;
}

std::size_t element_count(const Tensor& z) {
  return std::visit([](const auto& v) { return v.size(); }, z);
}

std::vector<std::uint8_t> serialize_intermediate(const Tensor& z) {
  const std::size_t m = element_count(z);
  if (m == 0) throw ShapeError("intermediate tensor is empty");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(m));
  if (const auto* f = std::get_if<std::vector<float>>(&z)) {
    for (float v : *f) w.f32(v);
  } else {
    for (std::int8_t v : std::get<std::vector<std::int8_t>>(z)) w.u8(static_cast<std::uint8_t>(v));
  }
  return std::move(w).take();
}

Tensor deserialize_intermediate(std::span<const std::uint8_t> payload, WireDtype dtype) {
  ByteReader r(payload);
  const std::uint32_t m = r.u32();
  if (m == 0) throw FormatError(FormatError::Kind::Malformed, "intermediate tensor is empty");
  const std::size_t width = dtype == WireDtype::Float32 ? 4 : 1;
  if (r.remaining() != width * m) {
    throw FormatError(FormatError::Kind::Malformed, "intermediate count " + std::to_string(m) + " disagrees with " +
                                                        std::to_string(r.remaining()) + " payload bytes");
  }
  if (dtype == WireDtype::Float32) {
    std::vector<float> out(m);
    for (auto& v : out) v = r.f32();
    return out;
  }
  std::vector<std::int8_t> out(m);
  for (auto& v : out) v = static_cast<std::int8_t>(r.u8());
  return out;
}

std::size_t intermediate_payload_size(int elements, WireDtype dtype) {
  if (elements < 1) throw ShapeError("intermediate tensor is empty");
  return 4 + static_cast<std::size_t>(elements) * (dtype == WireDtype::Float32 ? 4 : 1);
}

std::size_t intermediate_frame_size(int elements, WireDtype dtype) {
  return kFrameOverhead + intermediate_payload_size(elements, dtype);
}

Frame intermediate_frame(const Tensor& z, const std::optional<FixedPointFormat>& fmt) {
  const WireDtype dtype = dtype_of(z);
  return Frame{MsgType::Intermediate, dtype, reserved_for(dtype, fmt), serialize_intermediate(z)};
}

Frame prediction_frame(const Prediction& y, const std::optional<FixedPointFormat>& fmt) {
  ByteWriter w;
  WireDtype dtype = WireDtype::Float32;
  if (const auto* f = std::get_if<float>(&y)) {
    w.f32(*f);
  } else {
    dtype = WireDtype::Q8;
    w.u8(static_cast<std::uint8_t>(std::get<std::int8_t>(y)));
  }
  return Frame{MsgType::Prediction, dtype, reserved_for(dtype, fmt), std::move(w).take()};
}

Prediction parse_prediction(const Frame& frame) {
  expect_type(frame, MsgType::Prediction);
  ByteReader r(frame.payload);
  Prediction y;
  if (frame.dtype == WireDtype::Float32) {
    y = r.f32();
  } else {
    y = static_cast<std::int8_t>(r.u8());
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::Malformed, "oversized prediction payload");
  return y;
}

Frame error_frame(const ErrorMessage& error) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(error.code));
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(error.message.data()), error.message.size()));
  return Frame{MsgType::Error, WireDtype::Float32, 0, std::move(w).take()};
}

ErrorMessage parse_error(const Frame& frame) {
  expect_type(frame, MsgType::Error);
  if (frame.payload.empty()) throw FormatError(FormatError::Kind::Malformed, "empty error payload");
  return ErrorMessage{static_cast<ErrorCode>(frame.payload[0]),
                      std::string(frame.payload.begin() + 1, frame.payload.end())};
}

Frame hello_frame(const SplitManifest& manifest) {
  const std::string text = manifest.to_json();
  return Frame{MsgType::Hello, manifest.dtype, reserved_for(manifest.dtype, manifest.format),
               std::vector<std::uint8_t>(text.begin(), text.end())};
}

SplitManifest parse_hello(const Frame& frame) {
  expect_type(frame, MsgType::Hello);
  try {
    return SplitManifest::from_json(std::string(frame.payload.begin(), frame.payload.end()));
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::Malformed, e.what());
  }
}

}  // namespace splitlstm
