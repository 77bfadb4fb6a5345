// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitlstm/compression.hpp"
#include "splitlstm/model.hpp"

namespace splitlstm {

enum class Preset { LstmDoS, SplitA, SplitB };

/// Layers [0, cut_index) run on the edge, [cut_index, L) on the server.
struct SplitPlan {
  std::string name;  // "LSTM-DO-S", "Split-A", "Split-B" or "custom"
  std::size_t cut_index = 0;

  bool operator==(const SplitPlan&) const = default;
};

std::string preset_name(Preset preset);
/// LSTM-DO-S keeps the whole model on the edge; Split-A cuts after the second
/// LSTM layer, Split-B after the first.
SplitPlan make_plan(const ModelSpec& spec, Preset preset);
/// Accepts lstm-do-s | split-a | split-b (any case) or custom:<cut>.
SplitPlan parse_plan(const ModelSpec& spec, const std::string& text);
/// Lower-case CLI spelling of a plan name.
std::string plan_flag(const SplitPlan& plan);

/// Throws ConfigError unless 0 < cut <= L, the edge holds at least one LSTM,
/// and a nonempty server side implies at least two LSTM layers overall.
void validate_plan(const ModelSpec& spec, const SplitPlan& plan);

/// Element count of the edge output z.
int intermediate_size(const ModelSpec& spec, const SplitPlan& plan);
/// Element count N of the raw input window.
inline int input_size(const ModelSpec& spec) { return spec.input_shape().size(); }

template <typename P>
struct EdgeModel {
  ModelSpec spec;
  P params;
  int intermediate_size = 0;
};

/// Server half. An empty layer list (everything on the edge) passes the single
/// edge output through as the prediction.
template <typename P>
struct ServerModel {
  ModelSpec spec;
  P params;
};

template <typename P>
struct SplitModels {
  SplitPlan plan;
  EdgeModel<P> edge;
  ServerModel<P> server;
};

/// Spec of the layer-less server used when every layer runs on the edge.
ModelSpec passthrough_server_spec(int intermediate_size, int window_length = kWindowLength);

SplitModels<FloatParameters> partition(const ModelSpec& spec, const FloatParameters& params, const SplitPlan& plan);
SplitModels<QuantizedParameters> partition(const ModelSpec& spec, const QuantizedParameters& params,
                                           const SplitPlan& plan);

std::vector<float> edge_forward(const EdgeModel<FloatParameters>& edge, std::span<const float> window);
/// Quantizes the window on entry, exactly as quantized_forward does.
std::vector<std::int8_t> edge_forward(const EdgeModel<QuantizedParameters>& edge, std::span<const double> window);

/// For a sequence-shaped z the layout is [T x h] row-major.
float server_forward(const ServerModel<FloatParameters>& server, std::span<const float> z);
std::int8_t server_forward(const ServerModel<QuantizedParameters>& server, std::span<const std::int8_t> z);

/// Content hash of one half as saved to disk; "none" for an empty server.
std::string half_hash(const ModelSpec& spec, const FloatParameters& params);
std::string half_hash(const ModelSpec& spec, const QuantizedParameters& params);

/// Unsplit float32 deployment inference.
float float_forward(const ModelSpec& spec, const FloatParameters& params, std::span<const float> window);
std::vector<float> to_float(std::span<const double> values);

// ---------------------------------------------------------------------------
// Split manifest, shipped with both halves

enum class WireDtype : std::uint8_t { Float32 = 0, Q8 = 1 };

std::string to_string(WireDtype dtype);
WireDtype parse_dtype(const std::string& text);

struct SplitManifest {
  std::string model_hash;  // hash of the full (unsplit) model artifact
  std::string plan;
  std::size_t cut_index = 0;
  int intermediate_size = 0;
  int input_size = 0;
  int window_length = kWindowLength;
  WireDtype dtype = WireDtype::Float32;
  std::optional<FixedPointFormat> format;  // q8 only
  std::string edge_hash;
  std::string server_hash;

  std::string to_json() const;
  static SplitManifest from_json(const std::string& text);

  /// Empty when the two sides can talk; otherwise the first disagreement.
  std::string mismatch(const SplitManifest& other) const;

  bool operator==(const SplitManifest&) const = default;
};

}  // namespace splitlstm
