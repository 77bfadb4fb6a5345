// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/compression.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "splitlstm/binary.hpp"
#include "splitlstm/model_io.hpp"

namespace splitlstm {

std::pair<Parameters, PruneReport> prune_global_magnitude(const Parameters& params, double target_sparsity) {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) throw ConfigError("target sparsity must be in [0, 1)");

  struct Entry {
    double magnitude;
    std::size_t layer;
    std::size_t index;
    double* value;
  };

  Parameters pruned = params;
  std::vector<Entry> entries;
  std::size_t current_layer = 0, offset = 0;
  for (auto& t : tensors(pruned)) {
    if (t.role == TensorRole::Bias) continue;
    if (t.layer != current_layer) {
      current_layer = t.layer;
      offset = 0;
    }
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      entries.push_back({std::abs(t.values[i]), t.layer, offset + i, &t.values[i]});
    }
    offset += t.values.size();
  }

  const std::size_t n = entries.size();
  const auto k = static_cast<std::size_t>(std::llround(target_sparsity * static_cast<double>(n)));
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.magnitude, a.layer, a.index) < std::tie(b.magnitude, b.layer, b.index);
  });
  for (std::size_t i = 0; i < k; ++i) *entries[i].value = 0.0;

  PruneReport report;
  report.total = n;
  report.zeroed = k;
  report.achieved_sparsity = n ? static_cast<double>(k) / static_cast<double>(n) : 0.0;
  report.threshold = k ? entries[k - 1].magnitude : 0.0;
  return {std::move(pruned), report};
}

// ---------------------------------------------------------------------------

QuantizedParameters quantize_params(const Parameters& params, const FixedPointFormat& fmt, std::uint32_t source_hash) {
  fmt.validate();
  QuantizedParameters q;
  q.format = fmt;
  q.source_hash = source_hash;
  for (const auto& t : tensors(params)) {
    for (double v : t.values) {
      if (!std::isfinite(v)) throw ConfigError("cannot quantize non-finite parameter");
    }
  }
  q.codes = zeros_like<std::int8_t>(params);
  auto dst = tensors(q.codes);
  const auto src = tensors(params);
  for (std::size_t t = 0; t < src.size(); ++t) {
    std::transform(src[t].values.begin(), src[t].values.end(), dst[t].values.begin(),
                   [&](double v) { return quantize_value(v, fmt); });
  }
  return q;
}

Parameters dequantize_params(const QuantizedParameters& q) {
  Parameters out = q.codes.cast<double>();
  for (auto& t : tensors(out)) {
    for (double& v : t.values) v = std::ldexp(v, -q.format.fractional_bits);
  }
  return out;
}

QuantizedModel quantize_model(const ModelSpec& spec, const Parameters& params, const FixedPointFormat& fmt) {
  const auto bytes = encode_model(spec, params);
  return {spec, quantize_params(params, fmt, payload_crc32(bytes))};
}

// ---------------------------------------------------------------------------

QuantizedEngine::QuantizedEngine(const FixedPointFormat& fmt)
    : fmt_(fmt), sigmoid_(TableFunction::Sigmoid, fmt), tanh_(TableFunction::Tanh, fmt) {}

void QuantizedEngine::lstm_step(const LstmWeights<std::int8_t>& w, std::span<const std::int8_t> x,
                                std::vector<std::int8_t>& h, std::vector<std::int8_t>& c) const {
  const auto hidden = static_cast<Eigen::Index>(h.size());
  const Eigen::Index in = w.kernel.cols();
  if (static_cast<Eigen::Index>(x.size()) != in || w.recurrent.cols() != hidden || c.size() != h.size()) {
    throw ShapeError("quantized lstm_step: dimension mismatch");
  }
  const int f = fmt_.fractional_bits;
  std::vector<std::int8_t> pre(static_cast<std::size_t>(kGates * hidden));
  for (Eigen::Index r = 0; r < kGates * hidden; ++r) {
    std::int32_t acc = static_cast<std::int32_t>(w.bias(r)) * (std::int32_t{1} << f);
    for (Eigen::Index k = 0; k < in; ++k) acc += static_cast<std::int32_t>(w.kernel(r, k)) * x[static_cast<std::size_t>(k)];
    for (Eigen::Index k = 0; k < hidden; ++k) {
      acc += static_cast<std::int32_t>(w.recurrent(r, k)) * h[static_cast<std::size_t>(k)];
    }
    pre[static_cast<std::size_t>(r)] = requantize(acc, fmt_);
  }
  const auto hs = static_cast<std::size_t>(hidden);
  for (std::size_t j = 0; j < hs; ++j) {
    const std::int32_t i_gate = sigmoid_.lookup(pre[j]);
    const std::int32_t f_gate = sigmoid_.lookup(pre[hs + j]);
    const std::int32_t g_cand = tanh_.lookup(pre[2 * hs + j]);
    const std::int32_t o_gate = sigmoid_.lookup(pre[3 * hs + j]);
    c[j] = requantize(f_gate * c[j] + i_gate * g_cand, fmt_);
    h[j] = requantize(o_gate * static_cast<std::int32_t>(tanh_.lookup(c[j])), fmt_);
  }
}

std::vector<std::int8_t> QuantizedEngine::layer_forward(const LayerSpec& layer, const LayerWeights<std::int8_t>& weights,
                                                        std::span<const std::int8_t> input, const Shape& in) const {
  if (static_cast<int>(input.size()) != in.size() || in.width != layer.input_size) {
    throw ShapeError("quantized layer_forward: input does not fit " + layer.describe());
  }
  const auto width = static_cast<std::size_t>(in.width);
  if (layer.is_lstm()) {
    const auto& w = std::get<LstmWeights<std::int8_t>>(weights);
    const auto hidden = static_cast<std::size_t>(layer.output_size);
    std::vector<std::int8_t> h(hidden, 0), c(hidden, 0);
    std::vector<std::int8_t> out;
    out.reserve(layer.return_sequences ? hidden * static_cast<std::size_t>(in.steps) : hidden);
    for (int t = 0; t < in.steps; ++t) {
      lstm_step(w, input.subspan(static_cast<std::size_t>(t) * width, width), h, c);
      if (layer.return_sequences) out.insert(out.end(), h.begin(), h.end());
    }
    if (!layer.return_sequences) out = h;
    return out;
  }

  const auto& w = std::get<DenseWeights<std::int8_t>>(weights);
  const int f = fmt_.fractional_bits;
  const int steps = layer.time_distributed ? in.steps : 1;
  std::vector<std::int8_t> out;
  out.reserve(static_cast<std::size_t>(steps * layer.output_size));
  for (int t = 0; t < steps; ++t) {
    const auto x = input.subspan(static_cast<std::size_t>(t) * width, width);
    for (Eigen::Index r = 0; r < layer.output_size; ++r) {
      std::int32_t acc = static_cast<std::int32_t>(w.bias(r)) * (std::int32_t{1} << f);
      for (Eigen::Index k = 0; k < in.width; ++k) acc += static_cast<std::int32_t>(w.kernel(r, k)) * x[static_cast<std::size_t>(k)];
      std::int8_t v = requantize(acc, fmt_);
      if (layer.activation == Activation::Relu && v < 0) v = 0;
      out.push_back(v);
    }
  }
  return out;
}

std::vector<std::vector<std::int8_t>> QuantizedEngine::run_layers(const ModelSpec& spec,
                                                                  const QuantizedParameters& params,
                                                                  std::span<const std::int8_t> input) const {
  if (params.format != fmt_) throw ConfigError("parameters use format " + params.format.to_string() +
                                               ", engine expects " + fmt_.to_string());
  check_params(spec, params.codes);
  Shape shape = spec.input_shape();
  if (static_cast<int>(input.size()) != shape.size()) {
    throw ShapeError("input has " + std::to_string(input.size()) + " codes, model expects " +
                     std::to_string(shape.size()));
  }
  std::vector<std::vector<std::int8_t>> taps;
  std::vector<std::int8_t> current(input.begin(), input.end());
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    current = layer_forward(spec.layers[k], params.codes.layers[k], current, shape);
    shape = spec.output_shape(k);
    taps.push_back(current);
  }
  return taps;
}

std::vector<std::int8_t> quantize_input(std::span<const double> values, const FixedPointFormat& fmt) {
  std::vector<std::int8_t> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [&](double v) { return quantize_value(v, fmt); });
  return out;
}

QuantizedResult quantized_forward(const ModelSpec& spec, const QuantizedParameters& params,
                                  std::span<const double> window) {
  if (!spec.is_forecaster()) throw ShapeError("quantized_forward: final layer must emit a single scalar");
  const QuantizedEngine engine(params.format);
  QuantizedResult result;
  result.taps = engine.run_layers(spec, params, quantize_input(window, params.format));
  result.prediction = result.taps.back().front();
  result.value = dequantize(result.prediction, params.format);
  return result;
}

double compression_ratio(std::size_t count_teacher, std::size_t count_student) {
  if (count_teacher < 1 || count_student < 1) throw ConfigError("parameter counts must be >= 1");
  return round_decimals(model_size_kb(count_teacher), 2) / round_decimals(model_size_kb(count_student), 2);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_quantized_model(const QuantizedModel& model) {
  model.spec.validate();
  check_params(model.spec, model.params.codes);
  ByteWriter w;
  detail::write_container_header(w, static_cast<std::uint16_t>(model.spec.layers.size()));
  w.u8(static_cast<std::uint8_t>(model.params.format.integer_bits));
  w.u8(static_cast<std::uint8_t>(model.params.format.fractional_bits));
  w.u32(model.params.source_hash);
  for (const auto& layer : model.spec.layers) {
    w.u8(kQuantizedLayerKind);
    w.u8(static_cast<std::uint8_t>(detail::layer_flags(layer) | (layer.is_lstm() ? 0 : kFlagDense)));
    w.u32(static_cast<std::uint32_t>(layer.input_size));
    w.u32(static_cast<std::uint32_t>(layer.output_size));
  }
  for (const auto& t : tensors(model.params.codes)) {
    w.u64(t.values.size());
    for (std::int8_t v : t.values) w.u8(static_cast<std::uint8_t>(v));
  }
  w.u32(crc32(w.bytes()));
  return std::move(w).take();
}

QuantizedModel decode_quantized_model(std::span<const std::uint8_t> bytes, int window_length) {
  ByteReader r(bytes);
  const std::uint16_t count = detail::read_container_header(r);
  QuantizedParameters params;
  params.format.integer_bits = r.u8();
  params.format.fractional_bits = r.u8();
  try {
    params.format.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::Malformed, e.what());
  }
  params.source_hash = r.u32();

  std::vector<LayerSpec> layers;
  for (std::uint16_t k = 0; k < count; ++k) {
    const std::uint8_t kind = r.u8();
    const std::uint8_t flags = r.u8();
    const auto in = static_cast<int>(r.u32());
    const auto out = static_cast<int>(r.u32());
    if (kind != kQuantizedLayerKind || (flags & ~(kFlagSequence | kFlagRelu | kFlagDense)) != 0 ||
        ((flags & kFlagRelu) && !(flags & kFlagDense))) {
      throw FormatError(FormatError::Kind::Malformed, "layer " + std::to_string(k) + ": not a quantized layer record");
    }
    if (flags & kFlagDense) {
      layers.push_back(LayerSpec::dense(in, out, (flags & kFlagRelu) ? Activation::Relu : Activation::Linear,
                                        flags & kFlagSequence));
    } else {
      layers.push_back(LayerSpec::lstm(in, out, flags & kFlagSequence));
    }
  }
  QuantizedModel model{detail::spec_from_layers(std::move(layers), window_length), std::move(params)};
  detail::check_payload_fits(model.spec, r.remaining(), 1);
  model.params.codes = zero_params<std::int8_t>(model.spec);
  for (auto& t : tensors(model.params.codes)) {
    const std::uint64_t n = r.u64();
    if (n != t.values.size()) throw FormatError(FormatError::Kind::Malformed, "tensor size does not match layer");
    const auto raw = r.raw(t.values.size());
    std::transform(raw.begin(), raw.end(), t.values.begin(), [](std::uint8_t b) { return static_cast<std::int8_t>(b); });
  }
  detail::verify_trailer(bytes, r);
  return model;
}

void save_quantized_model(const QuantizedModel& model, const std::filesystem::path& path) {
  write_file(path, encode_quantized_model(model));
}

QuantizedModel load_quantized_model(const std::filesystem::path& path, int window_length) {
  return decode_quantized_model(read_file(path), window_length);
}

std::string quantized_model_hash(const QuantizedModel& model) { return hash_hex(encode_quantized_model(model)); }

}  // namespace splitlstm
