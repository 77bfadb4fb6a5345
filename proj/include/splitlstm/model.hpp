// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "splitlstm/error.hpp"

namespace splitlstm {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr int kGates = 4;       // block order: input, forget, candidate, output
inline constexpr int kWindowLength = 15;

enum class LayerKind : std::uint8_t { Lstm = 0, Dense = 1 };
enum class Activation : std::uint8_t { Linear = 0, Relu = 1 };

/// Shape of the data flowing between layers. Sequences are stored row-major
/// as [steps x width]; vectors have steps == 1.
struct Shape {
  int steps = 1;
  int width = 1;
  bool sequence = false;

  int size() const noexcept { return steps * width; }
  bool operator==(const Shape&) const = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  int input_size = 1;
  int output_size = 1;
  bool return_sequences = false;  // LSTM only
  bool time_distributed = false;  // Dense only
  Activation activation = Activation::Linear;  // Dense only

  static LayerSpec lstm(int input_size, int hidden, bool return_sequences);
  static LayerSpec dense(int input_size, int output_size, Activation act, bool time_distributed = false);

  bool is_lstm() const noexcept { return kind == LayerKind::Lstm; }
  bool emits_sequence() const noexcept { return is_lstm() ? return_sequences : time_distributed; }
  std::size_t param_count() const noexcept;
  std::string describe() const;

  bool operator==(const LayerSpec&) const = default;
};

/// Ordered layer stack plus the input shape it consumes. Full forecasters take a
/// [window_length x feature_count] sequence; server-side halves may instead take
/// a flat vector (sequence_input == false).
struct ModelSpec {
  std::vector<LayerSpec> layers;
  int window_length = kWindowLength;
  int feature_count = 1;
  bool sequence_input = true;

  Shape input_shape() const noexcept;
  /// Output shape of layer `index`.
  Shape output_shape(std::size_t index) const;
  Shape output_shape() const { return output_shape(layers.size() - 1); }
  /// Checks every layer against the shape produced by its predecessor.
  void validate() const;
  /// True when the final layer emits one scalar.
  bool is_forecaster() const;
  /// Sub-model consisting of layers [first, last); the input shape is the
  /// output shape of layer first-1.
  ModelSpec slice(std::size_t first, std::size_t last) const;
  std::size_t lstm_count() const noexcept;

  bool operator==(const ModelSpec&) const = default;
};

/// LSTM(1->10, seq) -> LSTM(10->5) -> Dense(5->10, relu) -> Dense(10->1), T=15.
ModelSpec build_student();
/// LSTM(1->h1, seq) -> Dense(h1->d, relu, time-distributed) -> LSTM(d->h2) -> Dense(h2->1).
ModelSpec build_teacher(int h1, int d, int h2);

struct TeacherDims {
  int h1 = 0;
  int d = 0;
  int h2 = 0;
  bool operator==(const TeacherDims&) const = default;
};

/// All (h1, d, h2) in [1, h_max]^3 whose teacher has exactly `target`
/// parameters, ordered by (|d - h1|, h1, d, h2). Empty if none match.
std::vector<TeacherDims> search_teacher_dims(std::size_t target, int h_max);
/// Triple minimizing |param_count - target| (ties by the same ordering).
TeacherDims closest_teacher_dims(std::size_t target, int h_max);

std::size_t param_count(const ModelSpec& spec);
std::size_t lstm_param_count(int input_size, int hidden);
std::size_t dense_param_count(int input_size, int output_size);

/// Storage size at 32-bit reals: count * 4 / 1024.
double model_size_kb(std::size_t count);
double round_decimals(double value, int decimals);

// ---------------------------------------------------------------------------
// Parameters

namespace detail {
template <typename A, typename B>
bool same_values(const A& a, const B& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}
}  // namespace detail

template <typename T>
struct LstmWeights {
  Matrix<T> kernel;     // [4h x input]
  Matrix<T> recurrent;  // [4h x h]
  Vector<T> bias;       // [4h]

  int hidden() const noexcept { return static_cast<int>(recurrent.cols()); }
  bool operator==(const LstmWeights& o) const {
    return detail::same_values(kernel, o.kernel) && detail::same_values(recurrent, o.recurrent) &&
           detail::same_values(bias, o.bias);
  }
};

template <typename T>
struct DenseWeights {
  Matrix<T> kernel;  // [out x in]
  Vector<T> bias;    // [out]

  bool operator==(const DenseWeights& o) const {
    return detail::same_values(kernel, o.kernel) && detail::same_values(bias, o.bias);
  }
};

template <typename T>
using LayerWeights = std::variant<LstmWeights<T>, DenseWeights<T>>;

enum class TensorRole : std::uint8_t { Kernel, Recurrent, Bias };

template <typename T>
struct TensorView {
  std::size_t layer;
  TensorRole role;
  std::span<T> values;
};

template <typename T>
struct BasicParameters {
  std::vector<LayerWeights<T>> layers;

  std::size_t count() const;

  template <typename U>
  BasicParameters<U> cast() const;

  /// Layers [first, last) copied out.
  BasicParameters slice(std::size_t first, std::size_t last) const {
    return BasicParameters{{layers.begin() + static_cast<std::ptrdiff_t>(first),
                            layers.begin() + static_cast<std::ptrdiff_t>(last)}};
  }

  bool operator==(const BasicParameters&) const = default;
};

using Parameters = BasicParameters<double>;
using FloatParameters = BasicParameters<float>;

/// Every stored tensor in file order: per layer kernel, recurrent (LSTM), bias.
template <typename T>
std::vector<TensorView<T>> tensors(BasicParameters<T>& params);
template <typename T>
std::vector<TensorView<const T>> tensors(const BasicParameters<T>& params);

/// Zero-filled parameters shaped for `spec`.
template <typename T>
BasicParameters<T> zero_params(const ModelSpec& spec);

/// Zero-filled parameters with the same tensor shapes as `like`.
template <typename U, typename T>
BasicParameters<U> zeros_like(const BasicParameters<T>& like);

/// Glorot-uniform kernels, zero biases, LSTM forget-gate bias 1.0.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);

/// Throws ShapeError unless `params` matches `spec` layer by layer.
template <typename T>
void check_params(const ModelSpec& spec, const BasicParameters<T>& params);

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
struct LstmState {
  Vector<T> h;
  Vector<T> c;
};

/// Post-activation gate values of one step, kept for backpropagation.
template <typename T>
struct LstmGates {
  Vector<T> input, forget, candidate, output;
};

template <typename T>
LstmState<T> lstm_cell_step(const LstmWeights<T>& w, std::span<const T> x, const Vector<T>& h_prev,
                            const Vector<T>& c_prev, LstmGates<T>* gates = nullptr);

/// Intermediate values of one layer evaluation.
template <typename T>
struct LayerTrace {
  std::vector<LstmGates<T>> gates;    // LSTM: per step
  std::vector<LstmState<T>> states;   // LSTM: per step, after the update
  Vector<T> preactivation;            // Dense: flat [steps x out]
};

/// Evaluates one layer on a flat input of shape `in`. Returns the flat output.
template <typename T>
Vector<T> layer_forward(const LayerSpec& layer, const LayerWeights<T>& weights, const Vector<T>& input,
                        const Shape& in, LayerTrace<T>* trace = nullptr);

template <typename T>
struct ForwardResult {
  T prediction{};
  std::vector<Vector<T>> taps;  // output of every layer
};

/// Runs every layer of `spec` on `input` (flat, matching spec.input_shape()).
template <typename T>
std::vector<Vector<T>> run_layers(const ModelSpec& spec, const BasicParameters<T>& params,
                                  std::span<const T> input, std::vector<LayerTrace<T>>* traces = nullptr);

/// Full forecaster evaluation: prediction is the single output of the last layer.
template <typename T>
ForwardResult<T> model_forward(const ModelSpec& spec, const BasicParameters<T>& params, std::span<const T> window);

// ---------------------------------------------------------------------------
// Template definitions

template <typename T>
std::size_t BasicParameters<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors(*this)) n += t.values.size();
  return n;
}

template <typename T>
template <typename U>
BasicParameters<U> BasicParameters<T>::cast() const {
  BasicParameters<U> out;
  out.layers.reserve(layers.size());
  for (const auto& layer : layers) {
    if (const auto* l = std::get_if<LstmWeights<T>>(&layer)) {
      out.layers.emplace_back(LstmWeights<U>{l->kernel.template cast<U>(), l->recurrent.template cast<U>(),
                                             l->bias.template cast<U>()});
    } else {
      const auto& d = std::get<DenseWeights<T>>(layer);
      out.layers.emplace_back(DenseWeights<U>{d.kernel.template cast<U>(), d.bias.template cast<U>()});
    }
  }
  return out;
}

namespace detail {
template <typename T, typename P>
std::vector<TensorView<T>> collect_tensors(P& params) {
  std::vector<TensorView<T>> out;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    std::visit(
        [&](auto& w) {
          out.push_back({i, TensorRole::Kernel, std::span<T>(w.kernel.data(), static_cast<std::size_t>(w.kernel.size()))});
          if constexpr (requires { w.recurrent; }) {
            out.push_back(
                {i, TensorRole::Recurrent, std::span<T>(w.recurrent.data(), static_cast<std::size_t>(w.recurrent.size()))});
          }
          out.push_back({i, TensorRole::Bias, std::span<T>(w.bias.data(), static_cast<std::size_t>(w.bias.size()))});
        },
        params.layers[i]);
  }
  return out;
}
}  // namespace detail

template <typename T>
std::vector<TensorView<T>> tensors(BasicParameters<T>& params) {
  return detail::collect_tensors<T>(params);
}

template <typename T>
std::vector<TensorView<const T>> tensors(const BasicParameters<T>& params) {
  return detail::collect_tensors<const T>(params);
}

template <typename T>
BasicParameters<T> zero_params(const ModelSpec& spec) {
  BasicParameters<T> out;
  for (const auto& layer : spec.layers) {
    const int in = layer.input_size;
    const int out_size = layer.output_size;
    if (layer.is_lstm()) {
      out.layers.emplace_back(LstmWeights<T>{Matrix<T>::Zero(kGates * out_size, in),
                                             Matrix<T>::Zero(kGates * out_size, out_size),
                                             Vector<T>::Zero(kGates * out_size)});
    } else {
      out.layers.emplace_back(DenseWeights<T>{Matrix<T>::Zero(out_size, in), Vector<T>::Zero(out_size)});
    }
  }
  return out;
}

template <typename U, typename T>
BasicParameters<U> zeros_like(const BasicParameters<T>& like) {
  BasicParameters<U> out;
  for (const auto& layer : like.layers) {
    if (const auto* l = std::get_if<LstmWeights<T>>(&layer)) {
      out.layers.emplace_back(LstmWeights<U>{Matrix<U>::Zero(l->kernel.rows(), l->kernel.cols()),
                                             Matrix<U>::Zero(l->recurrent.rows(), l->recurrent.cols()),
                                             Vector<U>::Zero(l->bias.size())});
    } else {
      const auto& d = std::get<DenseWeights<T>>(layer);
      out.layers.emplace_back(
          DenseWeights<U>{Matrix<U>::Zero(d.kernel.rows(), d.kernel.cols()), Vector<U>::Zero(d.bias.size())});
    }
  }
  return out;
}

template <typename T>
void check_params(const ModelSpec& spec, const BasicParameters<T>& params) {
  if (spec.layers.size() != params.layers.size()) {
    throw ShapeError("parameter layer count " + std::to_string(params.layers.size()) + " != spec layer count " +
                     std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const long in = layer.input_size;
    const long out = layer.output_size;
    bool ok = false;
    if (layer.is_lstm()) {
      if (const auto* w = std::get_if<LstmWeights<T>>(&params.layers[i])) {
        ok = w->kernel.rows() == kGates * out && w->kernel.cols() == in && w->recurrent.rows() == kGates * out &&
             w->recurrent.cols() == out && w->bias.size() == kGates * out;
      }
    } else if (const auto* w = std::get_if<DenseWeights<T>>(&params.layers[i])) {
      ok = w->kernel.rows() == out && w->kernel.cols() == in && w->bias.size() == out;
    }
    if (!ok) throw ShapeError("parameters of layer " + std::to_string(i) + " do not match " + layer.describe());
  }
}

template <typename T>
LstmState<T> lstm_cell_step(const LstmWeights<T>& w, std::span<const T> x, const Vector<T>& h_prev,
                            const Vector<T>& c_prev, LstmGates<T>* gates) {
  const Eigen::Index h = w.recurrent.cols();
  if (static_cast<Eigen::Index>(x.size()) != w.kernel.cols() || h_prev.size() != h || c_prev.size() != h ||
      w.kernel.rows() != kGates * h || w.bias.size() != kGates * h) {
    throw ShapeError("lstm_cell_step: dimension mismatch");
  }
  const Eigen::Map<const Vector<T>> xv(x.data(), static_cast<Eigen::Index>(x.size()));

  Vector<T> pre = w.bias;
  pre.noalias() += w.kernel * xv;
  pre.noalias() += w.recurrent * h_prev;

  Vector<T> i = pre.segment(0, h).unaryExpr([](T v) { return sigmoid(v); });
  Vector<T> f = pre.segment(h, h).unaryExpr([](T v) { return sigmoid(v); });
  Vector<T> g = pre.segment(2 * h, h).unaryExpr([](T v) { return std::tanh(v); });
  Vector<T> o = pre.segment(3 * h, h).unaryExpr([](T v) { return sigmoid(v); });

  LstmState<T> next;
  next.c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  next.h = o.cwiseProduct(next.c.unaryExpr([](T v) { return std::tanh(v); }));
  if (gates) *gates = {std::move(i), std::move(f), std::move(g), std::move(o)};
  return next;
}

template <typename T>
Vector<T> layer_forward(const LayerSpec& layer, const LayerWeights<T>& weights, const Vector<T>& input,
                        const Shape& in, LayerTrace<T>* trace) {
  if (input.size() != in.size() || in.width != layer.input_size) {
    throw ShapeError("layer_forward: input of " + std::to_string(input.size()) + " elements does not fit " +
                     layer.describe());
  }
  if (layer.is_lstm()) {
    const auto& w = std::get<LstmWeights<T>>(weights);
    const int h = layer.output_size;
    LstmState<T> state{Vector<T>::Zero(h), Vector<T>::Zero(h)};
    Vector<T> out(layer.return_sequences ? in.steps * h : h);
    if (trace) {
      trace->gates.resize(static_cast<std::size_t>(in.steps));
      trace->states.clear();
      trace->states.reserve(static_cast<std::size_t>(in.steps));
    }
    for (int t = 0; t < in.steps; ++t) {
      std::span<const T> x_t(input.data() + static_cast<std::ptrdiff_t>(t) * in.width,
                             static_cast<std::size_t>(in.width));
      state = lstm_cell_step(w, x_t, state.h, state.c, trace ? &trace->gates[static_cast<std::size_t>(t)] : nullptr);
      if (trace) trace->states.push_back(state);
      if (layer.return_sequences) out.segment(static_cast<Eigen::Index>(t) * h, h) = state.h;
    }
    if (!layer.return_sequences) out = state.h;
    return out;
  }

  const auto& w = std::get<DenseWeights<T>>(weights);
  const int n_out = layer.output_size;
  const int steps = layer.time_distributed ? in.steps : 1;
  Vector<T> pre(static_cast<Eigen::Index>(steps) * n_out);
  for (int t = 0; t < steps; ++t) {
    const Eigen::Map<const Vector<T>> x_t(input.data() + static_cast<std::ptrdiff_t>(t) * in.width, in.width);
    Vector<T> y = w.bias;
    y.noalias() += w.kernel * x_t;
    pre.segment(static_cast<Eigen::Index>(t) * n_out, n_out) = y;
  }
  if (trace) trace->preactivation = pre;
  if (layer.activation == Activation::Relu) return pre.cwiseMax(T(0));
  return pre;
}

template <typename T>
std::vector<Vector<T>> run_layers(const ModelSpec& spec, const BasicParameters<T>& params, std::span<const T> input,
                                  std::vector<LayerTrace<T>>* traces) {
  check_params(spec, params);
  Shape shape = spec.input_shape();
  if (static_cast<int>(input.size()) != shape.size()) {
    throw ShapeError("input has " + std::to_string(input.size()) + " elements, model expects " +
                     std::to_string(shape.size()));
  }
  if (traces) traces->assign(spec.layers.size(), {});
  std::vector<Vector<T>> taps;
  taps.reserve(spec.layers.size());
  Vector<T> current = Eigen::Map<const Vector<T>>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    current = layer_forward(spec.layers[k], params.layers[k], current, shape, traces ? &(*traces)[k] : nullptr);
    shape = spec.output_shape(k);
    taps.push_back(current);
  }
  return taps;
}

template <typename T>
ForwardResult<T> model_forward(const ModelSpec& spec, const BasicParameters<T>& params, std::span<const T> window) {
  if (!spec.is_forecaster()) throw ShapeError("model_forward: final layer must emit a single scalar");
  ForwardResult<T> result;
  result.taps = run_layers(spec, params, window);
  result.prediction = result.taps.back()(0);
  return result;
}

}  // namespace splitlstm
