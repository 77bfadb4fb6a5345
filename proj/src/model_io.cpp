// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/model_io.hpp"

#include <array>
#include <cstring>

namespace splitlstm {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'S', 'L', 'M', 'L'};

void write_tensor(ByteWriter& w, std::span<const double> values) {
  w.u64(values.size());
  for (double v : values) w.f32(static_cast<float>(v));
}

void read_tensor(ByteReader& r, std::span<double> values) {
  const std::uint64_t n = r.u64();
  if (n != values.size()) {
    throw FormatError(FormatError::Kind::Malformed, "tensor holds " + std::to_string(n) + " values, layer expects " +
                                                        std::to_string(values.size()));
  }
  for (double& v : values) v = r.f32();
}

}  // namespace

namespace detail {

std::uint8_t layer_flags(const LayerSpec& layer) {
  std::uint8_t flags = 0;
  if (layer.emits_sequence()) flags |= kFlagSequence;
  if (!layer.is_lstm() && layer.activation == Activation::Relu) flags |= kFlagRelu;
  return flags;
}

void write_container_header(ByteWriter& w, std::uint16_t layer_count) {
  w.raw(kMagic);
  w.u16(kModelFormatVersion);
  w.u16(layer_count);
}

std::uint16_t read_container_header(ByteReader& r) {
  const auto magic = r.raw(kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw FormatError(FormatError::Kind::BadMagic, "not a model file (bad magic)");
  }
  const std::uint16_t version = r.u16();
  if (version != kModelFormatVersion) {
    throw FormatError(FormatError::Kind::UnsupportedVersion,
                      "model format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
  }
  return r.u16();
}

void verify_trailer(std::span<const std::uint8_t> bytes, ByteReader& r) {
  const std::size_t payload_end = r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) {
    throw FormatError(FormatError::Kind::Malformed, std::to_string(r.remaining()) + " trailing bytes after checksum");
  }
  if (crc32(bytes.first(payload_end)) != stored) {
    throw FormatError(FormatError::Kind::ChecksumMismatch, "checksum mismatch");
  }
}

void check_payload_fits(const ModelSpec& spec, std::size_t remaining, std::size_t bytes_per_value) {
  std::size_t tensors = 0;
  for (const auto& l : spec.layers) tensors += l.is_lstm() ? 3 : 2;
  const std::size_t needed = param_count(spec) * bytes_per_value + tensors * 8 + 4;
  if (needed > remaining) throw FormatError(FormatError::Kind::Truncated, "file too short for its layer stack");
}

ModelSpec spec_from_layers(std::vector<LayerSpec> layers, int window_length) {
  if (layers.empty()) throw FormatError(FormatError::Kind::Malformed, "model has no layers");
  for (const auto& l : layers) {
    if (l.input_size < 1 || l.output_size < 1 || l.input_size > kMaxLayerWidth || l.output_size > kMaxLayerWidth) {
      throw FormatError(FormatError::Kind::Malformed, "layer width out of range in " + l.describe());
    }
  }
  ModelSpec spec;
  spec.window_length = window_length;
  spec.feature_count = layers.front().input_size;
  spec.sequence_input = layers.front().is_lstm() || layers.front().time_distributed;
  spec.layers = std::move(layers);
  try {
    spec.validate();
  } catch (const ShapeError& e) {
    throw FormatError(FormatError::Kind::Malformed, std::string("inconsistent layer stack: ") + e.what());
  }
  return spec;
}

}  // namespace detail

std::vector<std::uint8_t> encode_model(const ModelSpec& spec, const Parameters& params) {
  spec.validate();
  check_params(spec, params);
  ByteWriter w;
  detail::write_container_header(w, static_cast<std::uint16_t>(spec.layers.size()));
  for (const auto& layer : spec.layers) {
    w.u8(static_cast<std::uint8_t>(layer.kind));
    w.u8(detail::layer_flags(layer));
    w.u32(static_cast<std::uint32_t>(layer.input_size));
    w.u32(static_cast<std::uint32_t>(layer.output_size));
  }
  for (const auto& t : tensors(params)) write_tensor(w, t.values);
  w.u32(crc32(w.bytes()));
  return std::move(w).take();
}

Model decode_model(std::span<const std::uint8_t> bytes, int window_length) {
  ByteReader r(bytes);
  const std::uint16_t count = detail::read_container_header(r);
  std::vector<LayerSpec> layers;
  for (std::uint16_t k = 0; k < count; ++k) {
    const std::uint8_t kind = r.u8();
    const std::uint8_t flags = r.u8();
    const auto in = static_cast<int>(r.u32());
    const auto out = static_cast<int>(r.u32());
    if (kind == static_cast<std::uint8_t>(LayerKind::Lstm) && (flags & ~kFlagSequence) == 0) {
      layers.push_back(LayerSpec::lstm(in, out, flags & kFlagSequence));
    } else if (kind == static_cast<std::uint8_t>(LayerKind::Dense) && (flags & ~(kFlagSequence | kFlagRelu)) == 0) {
      layers.push_back(LayerSpec::dense(in, out, (flags & kFlagRelu) ? Activation::Relu : Activation::Linear,
                                        flags & kFlagSequence));
    } else {
      throw FormatError(FormatError::Kind::Malformed,
                        "layer " + std::to_string(k) + ": unknown kind/flags " + std::to_string(kind) + "/" +
                            std::to_string(flags));
    }
  }
  Model model{detail::spec_from_layers(std::move(layers), window_length), {}};
  detail::check_payload_fits(model.spec, r.remaining(), 4);
  model.params = zero_params<double>(model.spec);
  for (auto& t : tensors(model.params)) read_tensor(r, t.values);
  detail::verify_trailer(bytes, r);
  return model;
}

void save_model(const ModelSpec& spec, const Parameters& params, const std::filesystem::path& path) {
  write_file(path, encode_model(spec, params));
}

Model load_model(const std::filesystem::path& path, int window_length) {
  return decode_model(read_file(path), window_length);
}

std::string model_hash(const ModelSpec& spec, const Parameters& params) {
  return hash_hex(encode_model(spec, params));
}

}  // namespace splitlstm
