// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splitlstm/fixed_point.hpp"
#include "splitlstm/model.hpp"

namespace splitlstm {

// ---------------------------------------------------------------------------
// Pruning

struct PruneReport {
  std::size_t total = 0;   // prunable weights (kernels and recurrent kernels)
  std::size_t zeroed = 0;
  double achieved_sparsity = 0.0;
  double threshold = 0.0;  // largest magnitude that was zeroed
};

/// Zeroes exactly round(target * n) of the smallest-magnitude weights across
/// all layers. Biases are never pruned. Ties go to the lower (layer, index)
/// position, where the index runs over the kernel then the recurrent kernel.
std::pair<Parameters, PruneReport> prune_global_magnitude(const Parameters& params, double target_sparsity);

// ---------------------------------------------------------------------------
// Quantized parameters

using CodeParameters = BasicParameters<std::int8_t>;

struct QuantizedParameters {
  CodeParameters codes;
  FixedPointFormat format;
  std::uint32_t source_hash = 0;  // payload_crc32 of the float model file

  bool operator==(const QuantizedParameters&) const = default;
};

struct QuantizedModel {
  ModelSpec spec;
  QuantizedParameters params;
};

QuantizedParameters quantize_params(const Parameters& params, const FixedPointFormat& fmt,
                                    std::uint32_t source_hash = 0);
Parameters dequantize_params(const QuantizedParameters& q);

/// Quantizes a float model and records the CRC of its serialized form.
QuantizedModel quantize_model(const ModelSpec& spec, const Parameters& params, const FixedPointFormat& fmt);

// ---------------------------------------------------------------------------
// Integer inference engine

/// Lookup tables shared by every layer of one format.
class QuantizedEngine {
 public:
  explicit QuantizedEngine(const FixedPointFormat& fmt);

  const FixedPointFormat& format() const noexcept { return fmt_; }

  /// One LSTM step on codes. h and c are updated in place.
  void lstm_step(const LstmWeights<std::int8_t>& w, std::span<const std::int8_t> x, std::vector<std::int8_t>& h,
                 std::vector<std::int8_t>& c) const;

  std::vector<std::int8_t> layer_forward(const LayerSpec& layer, const LayerWeights<std::int8_t>& w,
                                         std::span<const std::int8_t> input, const Shape& in) const;

  /// Outputs of every layer for a code input shaped as spec.input_shape().
  std::vector<std::vector<std::int8_t>> run_layers(const ModelSpec& spec, const QuantizedParameters& params,
                                                   std::span<const std::int8_t> input) const;

 private:
  FixedPointFormat fmt_;
  ActivationTable sigmoid_;
  ActivationTable tanh_;
};

std::vector<std::int8_t> quantize_input(std::span<const double> values, const FixedPointFormat& fmt);

struct QuantizedResult {
  std::int8_t prediction = 0;
  double value = 0.0;  // dequantized prediction
  std::vector<std::vector<std::int8_t>> taps;
};

/// Quantizes the window on entry, then runs the integer datapath.
QuantizedResult quantized_forward(const ModelSpec& spec, const QuantizedParameters& params,
                                  std::span<const double> window);

/// Ratio of the 2-decimal-rounded model sizes in KB.
double compression_ratio(std::size_t count_teacher, std::size_t count_student);

// ---------------------------------------------------------------------------
// Quantized model container
//
//   "SLML" | u16 version | u16 layer count | u8 integer_bits | u8 fractional_bits
//   | u32 source hash
//   per layer: u8 kind = 2 | u8 flags (bit0 sequence, bit1 relu, bit2 dense)
//              | u32 input_size | u32 output_size
//   per tensor: u64 count | count x int8
//   u32 CRC-32 of everything above

inline constexpr std::uint8_t kQuantizedLayerKind = 2;
inline constexpr std::uint8_t kFlagDense = 0x04;

std::vector<std::uint8_t> encode_quantized_model(const QuantizedModel& model);
QuantizedModel decode_quantized_model(std::span<const std::uint8_t> bytes, int window_length = kWindowLength);
void save_quantized_model(const QuantizedModel& model, const std::filesystem::path& path);
QuantizedModel load_quantized_model(const std::filesystem::path& path, int window_length = kWindowLength);
std::string quantized_model_hash(const QuantizedModel& model);

}  // namespace splitlstm
