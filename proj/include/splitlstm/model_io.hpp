// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitlstm/binary.hpp"
#include "splitlstm/model.hpp"

namespace splitlstm {

/// A float model as stored on disk.
struct Model {
  ModelSpec spec;
  Parameters params;
};

// Model container layout (little-endian):
//   "SLML" | u16 version | u16 layer count
//   per layer: u8 kind | u8 flags | u32 input_size | u32 output_size
//   per tensor in layer order (kernel, recurrent, bias): u64 count | count x f32
//   u32 CRC-32 of everything above
inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::uint8_t kFlagSequence = 0x01;  // return_sequences / time_distributed
inline constexpr std::uint8_t kFlagRelu = 0x02;
/// Widest layer a container may declare.
inline constexpr int kMaxLayerWidth = 1 << 16;

/// Serialized bytes of (spec, params); weights are rounded to 32-bit reals.
std::vector<std::uint8_t> encode_model(const ModelSpec& spec, const Parameters& params);
/// Inverse of encode_model. The file does not record the window length since
/// LSTM weights do not depend on it; the caller supplies it.
Model decode_model(std::span<const std::uint8_t> bytes, int window_length = kWindowLength);

void save_model(const ModelSpec& spec, const Parameters& params, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path, int window_length = kWindowLength);

/// Content hash of the serialized model.
std::string model_hash(const ModelSpec& spec, const Parameters& params);

namespace detail {

std::uint8_t layer_flags(const LayerSpec& layer);
void write_container_header(ByteWriter& w, std::uint16_t layer_count);
/// Reads magic + version + layer count.
std::uint16_t read_container_header(ByteReader& r);
/// Parses a trailing CRC at `payload_end` and compares it to the bytes before.
void verify_trailer(std::span<const std::uint8_t> bytes, ByteReader& r);
/// Rejects a layer stack whose tensors cannot fit in the remaining bytes, so
/// corrupt size fields never trigger huge allocations.
void check_payload_fits(const ModelSpec& spec, std::size_t remaining, std::size_t bytes_per_value);
/// Rebuilds the input description from the first layer.
ModelSpec spec_from_layers(std::vector<LayerSpec> layers, int window_length);

}  // namespace detail

}  // namespace splitlstm
