// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitlstm/data.hpp"
#include "splitlstm/model.hpp"

namespace splitlstm {

enum class LossKind { Mse, Kd };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
  int batch_size = 8;
  int epochs = 32;
  double learning_rate = 1e-3;
  double l2_lambda = 1e-3;
  double alpha = 0.1;  // weight of the true-label term under KD
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::Mse;

  void validate() const;

  /// Batch 8, 32 epochs, lr 1e-3, L2 1e-3, plain MSE.
  static TrainConfig teacher_defaults();
  /// Batch 16, 32 epochs, lr 1e-3, L2 1e-2, KD with alpha 0.1.
  static TrainConfig student_defaults();

  std::string to_json() const;
  /// Fields absent from the JSON keep the values of `base`.
  static TrainConfig from_json(const std::string& text, const TrainConfig& base);
};

// ---------------------------------------------------------------------------
// Losses and metrics

double mse(std::span<const double> y, std::span<const double> yhat);
/// alpha * mse(y, yhat) + (1 - alpha) * mse(teacher, yhat)
double kd_loss(std::span<const double> y, std::span<const double> yhat, std::span<const double> teacher,
               double alpha);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // empty when y is constant
};

Metrics metrics(std::span<const double> y, std::span<const double> yhat);

// ---------------------------------------------------------------------------
// Gradients

struct Example {
  std::span<const double> x;
  double y = 0.0;
};

/// Loss being minimized: data term (MSE or KD) plus l2_lambda * sum of squared
/// kernel and recurrent weights (biases excluded).
struct Objective {
  LossKind kind = LossKind::Mse;
  double alpha = 1.0;
  double l2_lambda = 0.0;
};

struct BackwardResult {
  double data_loss = 0.0;
  double penalty = 0.0;
  Parameters grads;

  double total() const noexcept { return data_loss + penalty; }
};

/// Value of the objective over a batch. `teacher` holds one soft target per
/// example and is required iff objective.kind == Kd.
double objective_value(const ModelSpec& spec, const Parameters& params, std::span<const Example> batch,
                       const Objective& objective, std::span<const double> teacher = {});

/// Exact gradients of objective_value via backpropagation through time.
BackwardResult backward(const ModelSpec& spec, const Parameters& params, std::span<const Example> batch,
                        const Objective& objective, std::span<const double> teacher = {});

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat index in tensors() order
  std::size_t checked = 0;
};

/// Denominator floor of the gradient check's relative error. Central
/// differences at step 1e-5 carry roundoff near 1e-11 absolute, so entries
/// smaller than this are effectively held to an absolute 1e-6 * tolerance.
inline constexpr double kGradientCheckFloor = 1e-6;

/// Compares every analytic gradient entry with a central difference.
/// Relative error uses max(|a|, |b|, kGradientCheckFloor) as denominator.
GradientCheck finite_diff_check(const ModelSpec& spec, const Parameters& params, const Example& datum,
                                const Objective& objective, std::optional<double> teacher = std::nullopt,
                                double step = 1e-5);

/// One report per objective; each perturbed forward pass is shared by all of
/// them. `teacher` is used only by KD objectives.
std::vector<GradientCheck> finite_diff_check(const ModelSpec& spec, const Parameters& params, const Example& datum,
                                             std::span<const Objective> objectives,
                                             std::optional<double> teacher = std::nullopt, double step = 1e-5);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Parameters m;
  Parameters v;
  std::int64_t step = 0;

  static AdamState zeros_like(const Parameters& params);
};

/// One bias-corrected Adam update, in place.
void adam_step(Parameters& params, const Parameters& grads, AdamState& state, double learning_rate);

// ---------------------------------------------------------------------------
// Training loops

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;  // mean data loss over the epoch's examples
  Metrics validation;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochReport> history;
};

std::vector<double> predict(const ModelSpec& spec, const Parameters& params, const WindowedDataset& windows);
Metrics evaluate(const ModelSpec& spec, const Parameters& params, const WindowedDataset& windows);

/// Adam over seeded per-epoch shuffles; the last partial batch is kept.
TrainResult train_teacher(const ModelSpec& spec, const PreparedData& data, const TrainConfig& config);

/// Trains `student_spec` under the KD objective against the frozen teacher.
TrainResult distill(const ModelSpec& teacher_spec, const Parameters& teacher_params, const ModelSpec& student_spec,
                    const PreparedData& data, const TrainConfig& config);

/// "epoch,train_loss,val_mse,val_mae,val_r2"
std::string history_csv(const std::vector<EpochReport>& history);

}  // namespace splitlstm
