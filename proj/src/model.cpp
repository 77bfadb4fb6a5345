// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/model.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <tuple>

#include "splitlstm/random.hpp"

namespace splitlstm {

LayerSpec LayerSpec::lstm(int input_size, int hidden, bool return_sequences) {
  LayerSpec l;
  l.kind = LayerKind::Lstm;
  l.input_size = input_size;
  l.output_size = hidden;
  l.return_sequences = return_sequences;
  return l;
}

LayerSpec LayerSpec::dense(int input_size, int output_size, Activation act, bool time_distributed) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.input_size = input_size;
  l.output_size = output_size;
  l.activation = act;
  l.time_distributed = time_distributed;
  return l;
}

std::size_t LayerSpec::param_count() const noexcept {
  return is_lstm() ? lstm_param_count(input_size, output_size) : dense_param_count(input_size, output_size);
}

std::string LayerSpec::describe() const {
  std::string s = is_lstm() ? "LSTM(" : "Dense(";
  s += std::to_string(input_size) + "->" + std::to_string(output_size);
  if (is_lstm() && return_sequences) s += ", seq";
  if (!is_lstm()) {
    if (activation == Activation::Relu) s += ", relu";
    if (time_distributed) s += ", td";
  }
  return s + ")";
}

Shape ModelSpec::input_shape() const noexcept {
  if (sequence_input) return {window_length, feature_count, true};
  return {1, feature_count, false};
}

Shape ModelSpec::output_shape(std::size_t index) const {
  if (index >= layers.size()) throw ShapeError("layer index out of range");
  const auto& layer = layers[index];
  if (layer.emits_sequence()) return {window_length, layer.output_size, true};
  return {1, layer.output_size, false};
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  if (window_length < 1 || feature_count < 1) throw ShapeError("window_length and feature_count must be >= 1");
  Shape in = input_shape();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& layer = layers[k];
    const std::string where = "layer " + std::to_string(k) + " " + layer.describe();
    if (layer.input_size < 1 || layer.output_size < 1) throw ShapeError(where + ": sizes must be >= 1");
    if (layer.is_lstm()) {
      if (layer.time_distributed || layer.activation != Activation::Linear) {
        throw ShapeError(where + ": time_distributed/activation apply to Dense layers only");
      }
      if (!in.sequence) throw ShapeError(where + ": LSTM requires a sequence-shaped input");
    } else {
      if (layer.return_sequences) throw ShapeError(where + ": return_sequences applies to LSTM layers only");
      if (in.sequence && !layer.time_distributed) {
        throw ShapeError(where + ": Dense after a sequence must be time-distributed");
      }
      if (!in.sequence && layer.time_distributed) {
        throw ShapeError(where + ": time-distributed Dense requires a sequence input");
      }
    }
    if (layer.input_size != in.width) {
      throw ShapeError(where + ": expects width " + std::to_string(layer.input_size) + ", predecessor emits " +
                       std::to_string(in.width));
    }
    in = output_shape(k);
  }
}

bool ModelSpec::is_forecaster() const { return !layers.empty() && output_shape().size() == 1; }

ModelSpec ModelSpec::slice(std::size_t first, std::size_t last) const {
  if (first >= last || last > layers.size()) throw ShapeError("invalid layer slice");
  ModelSpec out;
  out.layers.assign(layers.begin() + static_cast<std::ptrdiff_t>(first),
                    layers.begin() + static_cast<std::ptrdiff_t>(last));
  out.window_length = window_length;
  if (first == 0) {
    out.feature_count = feature_count;
    out.sequence_input = sequence_input;
  } else {
    const Shape in = output_shape(first - 1);
    out.feature_count = in.width;
    out.sequence_input = in.sequence;
  }
  return out;
}

std::size_t ModelSpec::lstm_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.is_lstm(); }));
}

ModelSpec build_student() {
  ModelSpec spec;
  spec.layers = {
      LayerSpec::lstm(1, 10, true),
      LayerSpec::lstm(10, 5, false),
      LayerSpec::dense(5, 10, Activation::Relu),
      LayerSpec::dense(10, 1, Activation::Linear),
  };
  return spec;
}

ModelSpec build_teacher(int h1, int d, int h2) {
  if (h1 < 1 || d < 1 || h2 < 1) throw ConfigError("teacher dimensions must be >= 1");
  ModelSpec spec;
  spec.layers = {
      LayerSpec::lstm(1, h1, true),
      LayerSpec::dense(h1, d, Activation::Relu, true),
      LayerSpec::lstm(d, h2, false),
      LayerSpec::dense(h2, 1, Activation::Linear),
  };
  return spec;
}

std::size_t lstm_param_count(int input_size, int hidden) {
  const auto h = static_cast<std::size_t>(hidden);
  return kGates * (h * (static_cast<std::size_t>(input_size) + h) + h);
}

std::size_t dense_param_count(int input_size, int output_size) {
  const auto out = static_cast<std::size_t>(output_size);
  return out * static_cast<std::size_t>(input_size) + out;
}

std::size_t param_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& layer : spec.layers) n += layer.param_count();
  return n;
}

namespace {

std::size_t teacher_count(int h1, int d, int h2) {
  return lstm_param_count(1, h1) + dense_param_count(h1, d) + lstm_param_count(d, h2) + dense_param_count(h2, 1);
}

auto teacher_order_key(const TeacherDims& t) { return std::make_tuple(std::abs(t.d - t.h1), t.h1, t.d, t.h2); }

}  // namespace

std::vector<TeacherDims> search_teacher_dims(std::size_t target, int h_max) {
  if (target < 1) throw ConfigError("search target must be >= 1");
  std::vector<TeacherDims> found;
  for (int h1 = 1; h1 <= h_max; ++h1) {
    for (int d = 1; d <= h_max; ++d) {
      for (int h2 = 1; h2 <= h_max; ++h2) {
        if (teacher_count(h1, d, h2) == target) found.push_back({h1, d, h2});
      }
    }
  }
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return teacher_order_key(a) < teacher_order_key(b); });
  return found;
}

TeacherDims closest_teacher_dims(std::size_t target, int h_max) {
  TeacherDims best;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (int h1 = 1; h1 <= h_max; ++h1) {
    for (int d = 1; d <= h_max; ++d) {
      for (int h2 = 1; h2 <= h_max; ++h2) {
        const std::size_t n = teacher_count(h1, d, h2);
        const std::size_t gap = n > target ? n - target : target - n;
        const TeacherDims cand{h1, d, h2};
        if (gap < best_gap || (gap == best_gap && teacher_order_key(cand) < teacher_order_key(best))) {
          best = cand;
          best_gap = gap;
        }
      }
    }
  }
  return best;
}

double model_size_kb(std::size_t count) { return static_cast<double>(count) * 4.0 / 1024.0; }

double round_decimals(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Parameters params = zero_params<double>(spec);
  auto fill = [&](Matrix<double>& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  };
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const auto& layer = spec.layers[k];
    const double in = layer.input_size;
    const double out = layer.output_size;
    if (auto* w = std::get_if<LstmWeights<double>>(&params.layers[k])) {
      fill(w->kernel, in, kGates * out);
      fill(w->recurrent, out, kGates * out);
      w->bias.segment(layer.output_size, layer.output_size).setOnes();
    } else {
      fill(std::get<DenseWeights<double>>(params.layers[k]).kernel, in, out);
    }
  }
  return params;
}

}  // namespace splitlstm
