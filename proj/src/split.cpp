// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/split.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

#include "splitlstm/error.hpp"
#include "splitlstm/model_io.hpp"

namespace splitlstm {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Cut right after the n-th LSTM layer (1-based).
std::size_t cut_after_lstm(const ModelSpec& spec, std::size_t n) {
  std::size_t seen = 0;
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    if (spec.layers[k].is_lstm() && ++seen == n) return k + 1;
  }
  throw ConfigError("model has " + std::to_string(seen) + " LSTM layers, plan needs " + std::to_string(n));
}

template <typename P, typename Slice>
SplitModels<P> partition_impl(const ModelSpec& spec, const P& params, const SplitPlan& plan, Slice slice) {
  validate_plan(spec, plan);
  const std::size_t L = spec.layers.size();
  SplitModels<P> out;
  out.plan = plan;
  out.edge.spec = spec.slice(0, plan.cut_index);
  out.edge.params = slice(params, 0, plan.cut_index);
  out.edge.intermediate_size = intermediate_size(spec, plan);
  if (plan.cut_index < L) {
    out.server.spec = spec.slice(plan.cut_index, L);
    out.server.params = slice(params, plan.cut_index, L);
  } else {
    out.server.spec = passthrough_server_spec(spec.output_shape().width, spec.window_length);
    out.server.params = slice(params, L, L);
  }
  return out;
}

void check_server_input(const ModelSpec& spec, std::size_t got) {
  const auto want = static_cast<std::size_t>(spec.layers.empty() ? 1 : spec.input_shape().size());
  if (got != want) {
    throw ShapeError("server expects " + std::to_string(want) + " intermediate values, got " + std::to_string(got));
  }
}

}  // namespace

std::string preset_name(Preset preset) {
  switch (preset) {
    case Preset::LstmDoS: return "LSTM-DO-S";
    case Preset::SplitA: return "Split-A";
    case Preset::SplitB: return "Split-B";
  }
  return "?";
}

SplitPlan make_plan(const ModelSpec& spec, Preset preset) {
  spec.validate();
  switch (preset) {
    case Preset::LstmDoS: return {preset_name(preset), spec.layers.size()};
    case Preset::SplitA: return {preset_name(preset), cut_after_lstm(spec, 2)};
    case Preset::SplitB: return {preset_name(preset), cut_after_lstm(spec, 1)};
  }
  throw ConfigError("unknown preset");
}

SplitPlan parse_plan(const ModelSpec& spec, const std::string& text) {
  const std::string t = lower(text);
  SplitPlan plan;
  if (t == "lstm-do-s") {
    plan = make_plan(spec, Preset::LstmDoS);
  } else if (t == "split-a") {
    plan = make_plan(spec, Preset::SplitA);
  } else if (t == "split-b") {
    plan = make_plan(spec, Preset::SplitB);
  } else if (t.rfind("custom:", 0) == 0) {
    const std::string digits = t.substr(7);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
      throw ConfigError("custom plan needs a layer index, got '" + text + "'");
    }
    plan = {"custom", static_cast<std::size_t>(std::stoul(digits))};
  } else {
    throw ConfigError("unknown split plan '" + text + "' (expected lstm-do-s, split-a, split-b or custom:<cut>)");
  }
  validate_plan(spec, plan);
  return plan;
}

std::string plan_flag(const SplitPlan& plan) {
  if (plan.name == "custom") return "custom:" + std::to_string(plan.cut_index);
  return lower(plan.name);
}

void validate_plan(const ModelSpec& spec, const SplitPlan& plan) {
  spec.validate();
  if (plan.cut_index < 1 || plan.cut_index > spec.layers.size()) {
    throw ConfigError("cut index " + std::to_string(plan.cut_index) + " outside [1, " +
                      std::to_string(spec.layers.size()) + "]");
  }
  const auto edge_lstms = std::count_if(spec.layers.begin(), spec.layers.begin() + static_cast<std::ptrdiff_t>(plan.cut_index),
                                        [](const LayerSpec& l) { return l.is_lstm(); });
  if (edge_lstms == 0) throw ConfigError("the edge half must contain at least one LSTM layer");
  if (plan.cut_index < spec.layers.size() && spec.lstm_count() < 2) {
    throw ConfigError("splitting needs a model with at least two LSTM layers");
  }
}

int intermediate_size(const ModelSpec& spec, const SplitPlan& plan) {
  validate_plan(spec, plan);
  return spec.output_shape(plan.cut_index - 1).size();
}

ModelSpec passthrough_server_spec(int intermediate_size, int window_length) {
  ModelSpec out;
  out.window_length = window_length;
  out.feature_count = intermediate_size;
  out.sequence_input = false;
  return out;
}

SplitModels<FloatParameters> partition(const ModelSpec& spec, const FloatParameters& params, const SplitPlan& plan) {
  check_params(spec, params.cast<double>());
  return partition_impl(spec, params, plan, [](const FloatParameters& p, std::size_t a, std::size_t b) {
    return p.slice(a, b);
  });
}

SplitModels<QuantizedParameters> partition(const ModelSpec& spec, const QuantizedParameters& params,
                                           const SplitPlan& plan) {
  return partition_impl(spec, params, plan, [](const QuantizedParameters& p, std::size_t a, std::size_t b) {
    return QuantizedParameters{p.codes.slice(a, b), p.format, p.source_hash};
  });
}

std::vector<float> edge_forward(const EdgeModel<FloatParameters>& edge, std::span<const float> window) {
  auto taps = run_layers<float>(edge.spec, edge.params, window);
  const auto& z = taps.back();
  return {z.data(), z.data() + z.size()};
}

std::vector<std::int8_t> edge_forward(const EdgeModel<QuantizedParameters>& edge, std::span<const double> window) {
  if (static_cast<int>(window.size()) != edge.spec.input_shape().size()) {
    throw ShapeError("edge expects a window of " + std::to_string(edge.spec.input_shape().size()) + " values, got " +
                     std::to_string(window.size()));
  }
  const QuantizedEngine engine(edge.params.format);
  const auto codes = quantize_input(window, edge.params.format);
  return engine.run_layers(edge.spec, edge.params, codes).back();
}

float server_forward(const ServerModel<FloatParameters>& server, std::span<const float> z) {
  check_server_input(server.spec, z.size());
  if (server.spec.layers.empty()) return z[0];
  return run_layers<float>(server.spec, server.params, z).back()(0);
}

std::int8_t server_forward(const ServerModel<QuantizedParameters>& server, std::span<const std::int8_t> z) {
  check_server_input(server.spec, z.size());
  if (server.spec.layers.empty()) return z[0];
  const QuantizedEngine engine(server.params.format);
  return engine.run_layers(server.spec, server.params, z).back()[0];
}

std::string half_hash(const ModelSpec& spec, const FloatParameters& params) {
  if (spec.layers.empty()) return "none";
  return model_hash(spec, params.cast<double>());
}

std::string half_hash(const ModelSpec& spec, const QuantizedParameters& params) {
  if (spec.layers.empty()) return "none";
  return quantized_model_hash(QuantizedModel{spec, params});
}

float float_forward(const ModelSpec& spec, const FloatParameters& params, std::span<const float> window) {
  return model_forward<float>(spec, params, window).prediction;
}

std::vector<float> to_float(std::span<const double> values) {
  std::vector<float> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(WireDtype dtype) { return dtype == WireDtype::Float32 ? "float32" : "q8"; }

WireDtype parse_dtype(const std::string& text) {
  const std::string t = lower(text);
  if (t == "float32" || t == "f32") return WireDtype::Float32;
  if (t == "q8" || t == "int8") return WireDtype::Q8;
  throw ConfigError("unknown dtype '" + text + "' (expected float32 or q8)");
}

std::string SplitManifest::to_json() const {
  nlohmann::ordered_json j;
  j["model_hash"] = model_hash;
  j["plan"] = plan;
  j["cut_index"] = cut_index;
  j["intermediate_size"] = intermediate_size;
  j["input_size"] = input_size;
  j["window_length"] = window_length;
  j["dtype"] = splitlstm::to_string(dtype);
  j["format"] = format ? nlohmann::ordered_json(format->to_string()) : nlohmann::ordered_json(nullptr);
  j["edge_hash"] = edge_hash;
  j["server_hash"] = server_hash;
  return j.dump(2) + "\n";
}

SplitManifest SplitManifest::from_json(const std::string& text) {
  SplitManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.model_hash = j.at("model_hash").get<std::string>();
    m.plan = j.at("plan").get<std::string>();
    m.cut_index = j.at("cut_index").get<std::size_t>();
    m.intermediate_size = j.at("intermediate_size").get<int>();
    m.input_size = j.at("input_size").get<int>();
    m.window_length = j.at("window_length").get<int>();
    m.dtype = parse_dtype(j.at("dtype").get<std::string>());
    if (!j.at("format").is_null()) m.format = FixedPointFormat::parse(j.at("format").get<std::string>());
    m.edge_hash = j.at("edge_hash").get<std::string>();
    m.server_hash = j.at("server_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid split manifest: ") + e.what());
  }
  if ((m.dtype == WireDtype::Q8) != m.format.has_value()) {
    throw ConfigError("invalid split manifest: q8 needs a format, float32 must not have one");
  }
  if (m.intermediate_size < 1 || m.input_size < 1) throw ConfigError("invalid split manifest: sizes must be >= 1");
  return m;
}

std::string SplitManifest::mismatch(const SplitManifest& other) const {
  if (model_hash != other.model_hash) return "model hash " + model_hash + " vs " + other.model_hash;
  if (plan != other.plan || cut_index != other.cut_index) return "plan " + plan + " vs " + other.plan;
  if (intermediate_size != other.intermediate_size) return "intermediate size differs";
  if (dtype != other.dtype) return "dtype " + splitlstm::to_string(dtype) + " vs " + splitlstm::to_string(other.dtype);
  if (format != other.format) return "fixed-point format differs";
  return {};
}

}  // namespace splitlstm
