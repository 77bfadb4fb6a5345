// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "splitlstm/random.hpp"

namespace splitlstm {

std::string to_string(LossKind kind) { return kind == LossKind::Kd ? "KD" : "MSE"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "MSE" || name == "mse") return LossKind::Mse;
  if (name == "KD" || name == "kd") return LossKind::Kd;
  throw ConfigError("unknown loss kind '" + name + "' (expected MSE or KD)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
}

TrainConfig TrainConfig::teacher_defaults() { return {}; }

TrainConfig TrainConfig::student_defaults() {
  TrainConfig c;
  c.batch_size = 16;
  c.l2_lambda = 1e-2;
  c.alpha = 0.1;
  c.loss_kind = LossKind::Kd;
  return c;
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["learning_rate"] = learning_rate;
  j["l2_lambda"] = l2_lambda;
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["loss_kind"] = to_string(loss_kind);
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "l2_lambda") c.l2_lambda = value.get<double>();
      else if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "loss_kind") c.loss_kind = parse_loss_kind(value.get<std::string>());
      else throw ConfigError("unknown training config field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty()) throw ConfigError(std::string(what) + ": empty input");
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
  require_same_length(y, yhat, "mse");
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    sum += r * r;
  }
  return sum / static_cast<double>(y.size());
}

double kd_loss(std::span<const double> y, std::span<const double> yhat, std::span<const double> teacher,
               double alpha) {
  require_same_length(y, yhat, "kd_loss");
  require_same_length(teacher, yhat, "kd_loss");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  return alpha * mse(y, yhat) + (1.0 - alpha) * mse(teacher, yhat);
}

Metrics metrics(std::span<const double> y, std::span<const double> yhat) {
  require_same_length(y, yhat, "metrics");
  const double n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    ss_res += r * r;
    abs_sum += std::abs(r);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  Metrics m;
  m.mse = ss_res / n;
  m.mae = abs_sum / n;
  if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

// ---------------------------------------------------------------------------

namespace {

void check_objective(std::span<const Example> batch, const Objective& objective, std::span<const double> teacher) {
  if (batch.empty()) throw ConfigError("empty batch");
  if (objective.kind == LossKind::Kd) {
    if (teacher.size() != batch.size()) throw ShapeError("KD objective needs one teacher output per example");
    if (!(objective.alpha >= 0.0 && objective.alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  } else if (!teacher.empty()) {
    throw ConfigError("teacher outputs given for an MSE objective");
  }
}

double l2_penalty(const Parameters& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double sum = 0.0;
  for (const auto& t : tensors(params)) {
    if (t.role == TensorRole::Bias) continue;
    for (double v : t.values) sum += v * v;
  }
  return lambda * sum;
}

double data_loss(std::span<const double> y, std::span<const double> yhat, const Objective& objective,
                 std::span<const double> teacher) {
  if (objective.kind == LossKind::Kd) return kd_loss(y, yhat, teacher, objective.alpha);
  return mse(y, yhat);
}

// Backpropagates d_out through one layer, accumulating into `grad`; returns the
// gradient with respect to the layer input.
Vector<double> layer_backward(const LayerSpec& layer, const LayerWeights<double>& weights,
                              const LayerTrace<double>& trace, const Vector<double>& input, const Shape& in,
                              const Vector<double>& d_out, LayerWeights<double>& grad) {
  Vector<double> d_in = Vector<double>::Zero(input.size());

  if (!layer.is_lstm()) {
    const auto& w = std::get<DenseWeights<double>>(weights);
    auto& g = std::get<DenseWeights<double>>(grad);
    const int n_out = layer.output_size;
    const int steps = layer.time_distributed ? in.steps : 1;
    Vector<double> d_pre = d_out;
    if (layer.activation == Activation::Relu) {
      for (Eigen::Index i = 0; i < d_pre.size(); ++i) {
        if (!(trace.preactivation(i) > 0.0)) d_pre(i) = 0.0;
      }
    }
    for (int t = 0; t < steps; ++t) {
      const auto x_t = input.segment(static_cast<Eigen::Index>(t) * in.width, in.width);
      const auto dp = d_pre.segment(static_cast<Eigen::Index>(t) * n_out, n_out);
      g.kernel.noalias() += dp * x_t.transpose();
      g.bias += dp;
      d_in.segment(static_cast<Eigen::Index>(t) * in.width, in.width).noalias() = w.kernel.transpose() * dp;
    }
    return d_in;
  }

  const auto& w = std::get<LstmWeights<double>>(weights);
  auto& g = std::get<LstmWeights<double>>(grad);
  const int h = layer.output_size;
  const int steps = in.steps;
  Vector<double> dh_next = Vector<double>::Zero(h);
  Vector<double> dc_next = Vector<double>::Zero(h);
  const Vector<double> zeros = Vector<double>::Zero(h);
  Vector<double> da(kGates * h);

  for (int t = steps - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto& gates = trace.gates[ts];
    const auto& state = trace.states[ts];
    const Vector<double>& c_prev = t > 0 ? trace.states[ts - 1].c : zeros;
    const Vector<double>& h_prev = t > 0 ? trace.states[ts - 1].h : zeros;

    Vector<double> dh = dh_next;
    if (layer.return_sequences) {
      dh += d_out.segment(static_cast<Eigen::Index>(t) * h, h);
    } else if (t == steps - 1) {
      dh += d_out;
    }

    const Vector<double> tanh_c = state.c.unaryExpr([](double v) { return std::tanh(v); });
    const Vector<double> d_o = dh.cwiseProduct(tanh_c);
    const Vector<double> dc =
        dc_next + dh.cwiseProduct(gates.output).cwiseProduct((1.0 - tanh_c.array().square()).matrix());
    const Vector<double> d_i = dc.cwiseProduct(gates.candidate);
    const Vector<double> d_f = dc.cwiseProduct(c_prev);
    const Vector<double> d_g = dc.cwiseProduct(gates.input);
    dc_next = dc.cwiseProduct(gates.forget);

    da.segment(0, h) = (d_i.array() * gates.input.array() * (1.0 - gates.input.array())).matrix();
    da.segment(h, h) = (d_f.array() * gates.forget.array() * (1.0 - gates.forget.array())).matrix();
    da.segment(2 * h, h) = (d_g.array() * (1.0 - gates.candidate.array().square())).matrix();
    da.segment(3 * h, h) = (d_o.array() * gates.output.array() * (1.0 - gates.output.array())).matrix();

    const auto x_t = input.segment(static_cast<Eigen::Index>(t) * in.width, in.width);
    g.kernel.noalias() += da * x_t.transpose();
    g.recurrent.noalias() += da * h_prev.transpose();
    g.bias += da;
    d_in.segment(static_cast<Eigen::Index>(t) * in.width, in.width).noalias() = w.kernel.transpose() * da;
    dh_next.noalias() = w.recurrent.transpose() * da;
  }
  return d_in;
}

}  // namespace

double objective_value(const ModelSpec& spec, const Parameters& params, std::span<const Example> batch,
                       const Objective& objective, std::span<const double> teacher) {
  check_objective(batch, objective, teacher);
  std::vector<double> y(batch.size()), yhat(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = batch[i].y;
    yhat[i] = model_forward(spec, params, batch[i].x).prediction;
  }
  return data_loss(y, yhat, objective, teacher) + l2_penalty(params, objective.l2_lambda);
}

BackwardResult backward(const ModelSpec& spec, const Parameters& params, std::span<const Example> batch,
                        const Objective& objective, std::span<const double> teacher) {
  check_objective(batch, objective, teacher);
  spec.validate();
  if (!spec.is_forecaster()) throw ShapeError("backward: model must emit a single scalar");

  BackwardResult result;
  result.grads = zero_params<double>(spec);
  const double scale = 2.0 / static_cast<double>(batch.size());
  std::vector<double> y(batch.size()), yhat(batch.size());
  std::vector<LayerTrace<double>> traces;

  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& ex = batch[n];
    const auto taps = run_layers(spec, params, ex.x, &traces);
    y[n] = ex.y;
    yhat[n] = taps.back()(0);

    double residual = yhat[n] - ex.y;
    if (objective.kind == LossKind::Kd) {
      residual = objective.alpha * (yhat[n] - ex.y) + (1.0 - objective.alpha) * (yhat[n] - teacher[n]);
    }
    Vector<double> d = Vector<double>::Constant(1, scale * residual);

    const Vector<double> window = Eigen::Map<const Vector<double>>(ex.x.data(), static_cast<Eigen::Index>(ex.x.size()));
    for (std::size_t k = spec.layers.size(); k-- > 0;) {
      const Vector<double>& input = k == 0 ? window : taps[k - 1];
      const Shape in = k == 0 ? spec.input_shape() : spec.output_shape(k - 1);
      d = layer_backward(spec.layers[k], params.layers[k], traces[k], input, in, d, result.grads.layers[k]);
    }
  }

  result.data_loss = data_loss(y, yhat, objective, teacher);
  result.penalty = l2_penalty(params, objective.l2_lambda);
  if (objective.l2_lambda != 0.0) {
    auto grad_views = tensors(result.grads);
    const auto param_views = tensors(params);
    for (std::size_t t = 0; t < grad_views.size(); ++t) {
      if (grad_views[t].role == TensorRole::Bias) continue;
      for (std::size_t i = 0; i < grad_views[t].values.size(); ++i) {
        grad_views[t].values[i] += 2.0 * objective.l2_lambda * param_views[t].values[i];
      }
    }
  }
  return result;
}

std::vector<GradientCheck> finite_diff_check(const ModelSpec& spec, const Parameters& params, const Example& datum,
                                             std::span<const Objective> objectives, std::optional<double> teacher,
                                             double step) {
  if (objectives.empty()) throw ConfigError("finite_diff_check: no objectives");
  const std::span<const Example> batch(&datum, 1);
  std::vector<double> soft;
  if (teacher) soft.push_back(*teacher);
  const std::vector<double> none;
  auto teacher_for = [&](const Objective& o) -> std::span<const double> {
    return o.kind == LossKind::Kd ? std::span<const double>(soft) : std::span<const double>(none);
  };

  std::vector<Parameters> analytic;
  for (const auto& o : objectives) analytic.push_back(backward(spec, params, batch, o, teacher_for(o)).grads);
  std::vector<std::vector<TensorView<const double>>> grad_views;
  for (const auto& g : analytic) grad_views.push_back(tensors(g));

  // Inputs of every layer at the unperturbed point; a probe only reruns the
  // layers from the perturbed one onward.
  const Vector<double> window =
      Eigen::Map<const Vector<double>>(datum.x.data(), static_cast<Eigen::Index>(datum.x.size()));
  const auto taps = run_layers(spec, params, datum.x);
  auto predict_from = [&](const Parameters& p, std::size_t first) {
    Vector<double> current = first == 0 ? window : taps[first - 1];
    for (std::size_t k = first; k < spec.layers.size(); ++k) {
      const Shape in = k == 0 ? spec.input_shape() : spec.output_shape(k - 1);
      current = layer_forward(spec.layers[k], p.layers[k], current, in);
    }
    return current(0);
  };

  Parameters probe = params;
  auto probe_views = tensors(probe);
  const std::array<double, 1> y{datum.y};
  std::vector<GradientCheck> reports(objectives.size());
  std::size_t flat = 0;
  for (std::size_t t = 0; t < probe_views.size(); ++t) {
    const std::size_t layer = probe_views[t].layer;
    const bool penalized = probe_views[t].role != TensorRole::Bias;
    for (std::size_t i = 0; i < probe_views[t].values.size(); ++i, ++flat) {
      double& p = probe_views[t].values[i];
      const double saved = p;
      const double w_up = saved + step, w_down = saved - step;
      p = w_up;
      const std::array<double, 1> yhat_up{predict_from(probe, layer)};
      p = w_down;
      const std::array<double, 1> yhat_down{predict_from(probe, layer)};
      p = saved;

      for (std::size_t o = 0; o < objectives.size(); ++o) {
        const Objective& obj = objectives[o];
        // The penalty terms of untouched weights cancel, so only the probed
        // weight's term enters the difference; summing them all would add
        // roundoff on the order of eps * penalty / step.
        double diff = data_loss(y, yhat_up, obj, teacher_for(obj)) - data_loss(y, yhat_down, obj, teacher_for(obj));
        if (penalized) diff += obj.l2_lambda * (w_up * w_up - w_down * w_down);
        const double numeric = diff / (2.0 * step);
        const double a = grad_views[o][t].values[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > reports[o].max_relative_error) {
          reports[o].max_relative_error = rel;
          reports[o].worst_index = flat;
        }
        ++reports[o].checked;
      }
    }
  }
  return reports;
}

GradientCheck finite_diff_check(const ModelSpec& spec, const Parameters& params, const Example& datum,
                                const Objective& objective, std::optional<double> teacher, double step) {
  return finite_diff_check(spec, params, datum, std::span<const Objective>(&objective, 1), teacher, step)[0];
}

// ---------------------------------------------------------------------------

AdamState AdamState::zeros_like(const Parameters& params) {
  AdamState s;
  s.m = params;
  s.v = params;
  for (auto& t : tensors(s.m)) std::fill(t.values.begin(), t.values.end(), 0.0);
  for (auto& t : tensors(s.v)) std::fill(t.values.begin(), t.values.end(), 0.0);
  return s;
}

void adam_step(Parameters& params, const Parameters& grads, AdamState& state, double learning_rate) {
  auto p = tensors(params);
  const auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ShapeError("adam_step: tensor count mismatch");
  }
  ++state.step;
  const double correction1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < p.size(); ++t) {
    const std::size_t n = p[t].values.size();
    if (g[t].values.size() != n || m[t].values.size() != n || v[t].values.size() != n) {
      throw ShapeError("adam_step: tensor shape mismatch");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[t].values[i];
      double& mi = m[t].values[i];
      double& vi = v[t].values[i];
      mi = AdamState::kBeta1 * mi + (1.0 - AdamState::kBeta1) * gi;
      vi = AdamState::kBeta2 * vi + (1.0 - AdamState::kBeta2) * gi * gi;
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      p[t].values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<double> predict(const ModelSpec& spec, const Parameters& params, const WindowedDataset& windows) {
  std::vector<double> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(model_forward<double>(spec, params, w.x).prediction);
  return out;
}

Metrics evaluate(const ModelSpec& spec, const Parameters& params, const WindowedDataset& windows) {
  std::vector<double> y;
  y.reserve(windows.size());
  for (const auto& w : windows) y.push_back(w.y);
  return metrics(y, predict(spec, params, windows));
}

namespace {

struct FrozenTeacher {
  const ModelSpec* spec;
  const Parameters* params;
};

TrainResult fit(const ModelSpec& spec, const PreparedData& data, const TrainConfig& config,
                std::optional<FrozenTeacher> teacher) {
  config.validate();
  spec.validate();
  if (data.train.empty()) throw ConfigError("empty training set");
  if (data.test.empty()) throw ConfigError("empty validation set");
  if (static_cast<int>(data.train.front().x.size()) != spec.input_shape().size()) {
    throw ShapeError("window length " + std::to_string(data.train.front().x.size()) + " does not match the model input " +
                     std::to_string(spec.input_shape().size()));
  }

  TrainResult result;
  result.params = init_params(spec, config.seed);
  AdamState adam = AdamState::zeros_like(result.params);
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const Objective objective{config.loss_kind, config.alpha, config.l2_lambda};

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Example> batch;
  std::vector<double> soft;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      soft.clear();
      for (std::size_t j = start; j < stop; ++j) {
        const auto& w = data.train[order[j]];
        batch.push_back({w.x, w.y});
        if (teacher) soft.push_back(model_forward<double>(*teacher->spec, *teacher->params, w.x).prediction);
      }
      const auto step = backward(spec, result.params, batch, objective, soft);
      adam_step(result.params, step.grads, adam, config.learning_rate);
      loss_sum += step.data_loss * static_cast<double>(batch.size());
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), evaluate(spec, result.params, data.test)});
  }
  return result;
}

}  // namespace

TrainResult train_teacher(const ModelSpec& spec, const PreparedData& data, const TrainConfig& config) {
  if (config.loss_kind != LossKind::Mse) throw ConfigError("teacher training uses the MSE loss");
  return fit(spec, data, config, std::nullopt);
}

TrainResult distill(const ModelSpec& teacher_spec, const Parameters& teacher_params, const ModelSpec& student_spec,
                    const PreparedData& data, const TrainConfig& config) {
  if (config.loss_kind != LossKind::Kd) throw ConfigError("distillation uses the KD loss");
  teacher_spec.validate();
  check_params(teacher_spec, teacher_params);
  if (teacher_spec.input_shape() != student_spec.input_shape()) {
    throw ShapeError("teacher and student consume different input shapes");
  }
  return fit(student_spec, data, config, FrozenTeacher{&teacher_spec, &teacher_params});
}

std::string history_csv(const std::vector<EpochReport>& history) {
  std::string out = "epoch,train_loss,val_mse,val_mae,val_r2\n";
  char buf[160];
  for (const auto& e : history) {
    char r2[40] = "undefined";
    if (e.validation.r2) std::snprintf(r2, sizeof(r2), "%.10g", *e.validation.r2);
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%s\n", e.epoch, e.train_loss, e.validation.mse,
                  e.validation.mae, r2);
    out += buf;
  }
  return out;
}

}  // namespace splitlstm
