// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace splitlstm {

/// Signed 8-bit fixed-point format: integer_bits (including sign) +
/// fractional_bits == 8. Rounding is half-to-even, overflow saturates.
struct FixedPointFormat {
  static constexpr int kTotalBits = 8;

  int integer_bits = 3;
  int fractional_bits = 5;

  static FixedPointFormat with_integer_bits(int integer_bits);
  /// Parses "I.F", e.g. "3.5".
  static FixedPointFormat parse(const std::string& text);
  /// High nibble integer_bits, low nibble fractional_bits.
  static FixedPointFormat from_descriptor(std::uint8_t descriptor);

  void validate() const;
  std::string to_string() const;
  std::uint8_t descriptor() const noexcept {
    return static_cast<std::uint8_t>((integer_bits << 4) | (fractional_bits & 0x0F));
  }
  double resolution() const noexcept;
  double min_value() const noexcept;
  double max_value() const noexcept;

  bool operator==(const FixedPointFormat&) const = default;
};

std::int8_t quantize_value(double x, const FixedPointFormat& fmt);
double dequantize(std::int8_t q, const FixedPointFormat& fmt);

/// acc / 2^shift, rounded half-to-even. shift >= 0.
std::int64_t shift_round_half_even(std::int64_t acc, int shift);
std::int8_t saturate_int8(std::int64_t v);
/// Rescales an accumulator at 2^(2f) back to f fractional bits.
inline std::int8_t requantize(std::int64_t acc, const FixedPointFormat& fmt) {
  return saturate_int8(shift_round_half_even(acc, fmt.fractional_bits));
}

enum class TableFunction { Sigmoid, Tanh };

/// 1024-entry lookup table over [-8, 8): entry k holds f(-8 + k/64) in the
/// output format. Inputs outside the domain clamp to the boundary entries.
class ActivationTable {
 public:
  static constexpr int kEntries = 1024;
  static constexpr double kDomain = 8.0;

  ActivationTable(TableFunction function, const FixedPointFormat& fmt);

  /// Table index for a code in `fmt` (the format the table was built for).
  int index_of(std::int8_t code) const noexcept;
  std::int8_t lookup(std::int8_t code) const noexcept { return entries_[static_cast<std::size_t>(index_of(code))]; }
  std::span<const std::int8_t> entries() const noexcept { return entries_; }
  TableFunction function() const noexcept { return function_; }

  static double input_at(int index) noexcept;

 private:
  TableFunction function_;
  FixedPointFormat fmt_;
  std::array<std::int8_t, kEntries> entries_{};
};

}  // namespace splitlstm
