// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/fixed_point.hpp"

#include <algorithm>
#include <cmath>

#include "splitlstm/error.hpp"
#include "splitlstm/model.hpp"

namespace splitlstm {

FixedPointFormat FixedPointFormat::with_integer_bits(int integer_bits) {
  FixedPointFormat fmt{integer_bits, kTotalBits - integer_bits};
  fmt.validate();
  return fmt;
}

FixedPointFormat FixedPointFormat::parse(const std::string& text) {
  const auto dot = text.find('.');
  if (dot == std::string::npos) throw ConfigError("fixed-point format must look like I.F, got '" + text + "'");
  FixedPointFormat fmt;
  try {
    std::size_t used_i = 0, used_f = 0;
    fmt.integer_bits = std::stoi(text.substr(0, dot), &used_i);
    fmt.fractional_bits = std::stoi(text.substr(dot + 1), &used_f);
    if (used_i != dot || used_f != text.size() - dot - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("fixed-point format must look like I.F, got '" + text + "'");
  }
  fmt.validate();
  return fmt;
}

FixedPointFormat FixedPointFormat::from_descriptor(std::uint8_t descriptor) {
  FixedPointFormat fmt{descriptor >> 4, descriptor & 0x0F};
  fmt.validate();
  return fmt;
}

void FixedPointFormat::validate() const {
  if (integer_bits < 1 || integer_bits > 7 || integer_bits + fractional_bits != kTotalBits) {
    throw ConfigError("invalid fixed-point format " + to_string() + " (need 1 <= I <= 7 and I + F = 8)");
  }
}

std::string FixedPointFormat::to_string() const {
  return std::to_string(integer_bits) + "." + std::to_string(fractional_bits);
}

double FixedPointFormat::resolution() const noexcept { return std::ldexp(1.0, -fractional_bits); }
double FixedPointFormat::min_value() const noexcept { return -std::ldexp(1.0, integer_bits - 1); }
double FixedPointFormat::max_value() const noexcept {
  return std::ldexp(1.0, integer_bits - 1) - resolution();
}

std::int8_t quantize_value(double x, const FixedPointFormat& fmt) {
  if (std::isnan(x)) return 0;
  const double scaled = std::ldexp(x, fmt.fractional_bits);
  if (scaled >= 127.0) return 127;
  if (scaled <= -128.0) return -128;
  const double floor = std::floor(scaled);
  const double frac = scaled - floor;
  auto q = static_cast<std::int64_t>(floor);
  if (frac > 0.5 || (frac == 0.5 && (q & 1) != 0)) ++q;
  return saturate_int8(q);
}

double dequantize(std::int8_t q, const FixedPointFormat& fmt) { return std::ldexp(static_cast<double>(q), -fmt.fractional_bits); }

std::int64_t shift_round_half_even(std::int64_t acc, int shift) {
  if (shift <= 0) return acc;
  const std::int64_t q = acc >> shift;  // floor
  const std::int64_t rem = acc - q * (std::int64_t{1} << shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1) != 0)) return q + 1;
  return q;
}

std::int8_t saturate_int8(std::int64_t v) { return static_cast<std::int8_t>(std::clamp<std::int64_t>(v, -128, 127)); }

ActivationTable::ActivationTable(TableFunction function, const FixedPointFormat& fmt) : function_(function), fmt_(fmt) {
  fmt_.validate();
  for (int k = 0; k < kEntries; ++k) {
    const double x = input_at(k);
    const double y = function == TableFunction::Sigmoid ? sigmoid(x) : std::tanh(x);
    entries_[static_cast<std::size_t>(k)] = quantize_value(y, fmt_);
  }
}

double ActivationTable::input_at(int index) noexcept {
  return -kDomain + static_cast<double>(index) * (2.0 * kDomain / kEntries);
}

int ActivationTable::index_of(std::int8_t code) const noexcept {
  // floor((code / 2^f + 8) * 64), computed exactly in integers.
  const std::int64_t shifted = (static_cast<std::int64_t>(code) + (std::int64_t{8} << fmt_.fractional_bits)) * 64;
  const std::int64_t index = shifted >> fmt_.fractional_bits;
  return static_cast<int>(std::clamp<std::int64_t>(index, 0, kEntries - 1));
}

}  // namespace splitlstm
