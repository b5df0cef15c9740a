#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "flowik/datagen.hpp"
#include "flowik/flow.hpp"
#include "flowik/kinematics.hpp"

namespace flowik {

struct TrainConfig {
  int batch_size = 128;
  double lr = 5e-4;
  double lr_decay = 0.979;
  std::uint64_t decay_interval_batches = 39000;
  double softflow_scale_max = 1e-3;
  std::uint64_t max_batches = 0;
  std::uint64_t rng_seed = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Abort once this many consecutive steps were skipped for non-finite
  /// loss or gradients.
  int max_consecutive_skips = 10;

  /// Stop early when the mean loss over the last `plateau_window` batches
  /// improved on the previous window by less than plateau_tolerance
  /// (relative). 0 disables.
  std::uint64_t plateau_window = 0;
  double plateau_tolerance = 1e-3;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Learning rate after `batch_counter` batches:
/// lr * lr_decay^floor(batch_counter / decay_interval_batches).
double scheduled_lr(const TrainConfig& cfg, std::uint64_t batch_counter);

/// Gradients with the same layout as the coefficient nets of a model.
struct FlowGradients {
  std::vector<std::vector<DenseLayer>> nets;

  static FlowGradients zeros_like(const FlowModel& model);
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  bool all_finite() const;
};

/// Every trainable array of the model in a fixed order (per coupling layer,
/// per dense layer: weight then bias). Matches FlowGradients::blocks().
std::vector<std::span<double>> parameter_blocks(FlowModel& model);
std::vector<std::span<const double>> parameter_blocks(const FlowModel& model);

/// Pads a dof x B joint batch with zero rows up to `width`.
Eigen::MatrixXd pad_joints(const Eigen::MatrixXd& joints, int width);

/// Stacks pose encodings (pose_dim x B) over the noise-scale row c (B).
Eigen::MatrixXd assemble_condition(const Eigen::MatrixXd& poses,
                                   const Eigen::VectorXd& noise_scale);

struct SoftflowBatch {
  Eigen::MatrixXd x;        // D x B, perturbed
  Eigen::VectorXd scale;    // B, the per-column noise magnitude c
};

/// Per column: c ~ U(0, scale_max), v ~ N(0, c^2 I), x + v. Every row is
/// perturbed, including zero padding.
SoftflowBatch softflow_perturb(const Eigen::MatrixXd& batch, double scale_max,
                               Rng& rng);

/// Mean negative log-likelihood of the columns of x. Throws NumericalError
/// naming the first coupling layer with a non-finite output.
double mle_loss(const FlowModel& model, const Eigen::MatrixXd& x,
                const Eigen::MatrixXd& cond);

struct LossGradient {
  double loss = 0.0;
  FlowGradients grads;
};

/// Mean loss and its exact gradient with respect to every coefficient-net
/// parameter. Non-finite values are returned as-is, not thrown.
LossGradient backprop(const FlowModel& model, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& cond);

struct LossRecord {
  std::uint64_t batch = 0;
  double loss = 0.0;
};

struct TrainState {
  std::uint64_t batch_counter = 0;
  std::uint64_t adam_steps = 0;
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
  double current_lr = 0.0;
  std::vector<LossRecord> loss_history;
  int consecutive_skips = 0;
  std::uint64_t skipped_steps = 0;

  static TrainState initial(const FlowModel& model, const TrainConfig& cfg);
};

/// One Adam update at state.current_lr with bias-corrected moments. Always
/// advances batch_counter and the schedule. Returns false (and leaves the
/// model untouched) when the gradients are not finite; throws
/// NumericalError after cfg.max_consecutive_skips consecutive skips.
bool optimizer_step(TrainState& state, FlowModel& model,
                    const FlowGradients& grads, const TrainConfig& cfg);

struct TrainCallbacks {
  /// Called after every batch with the batch loss and elapsed wall time.
  std::function<void(const TrainState&, double loss, double wall_ms)> on_batch;
  /// Called every `interval` batches; return false to stop training.
  std::size_t interval = 0;
  std::function<bool(const FlowModel&, const TrainState&)> on_interval;
};

struct TrainResult {
  FlowModel model;
  TrainState state;
  bool stopped_early = false;
};

/// Maximum-likelihood training with softflow noise. Deterministic given
/// cfg.rng_seed, the dataset and the initial model.
TrainResult train(const KinematicChain& chain, const Dataset& dataset,
                  const TrainConfig& cfg, const FlowConfig& arch,
                  const TrainCallbacks& callbacks = {});

/// Continues training an existing model and optimizer state.
TrainResult train(const KinematicChain& chain, const Dataset& dataset,
                  const TrainConfig& cfg, FlowModel model, TrainState state,
                  const TrainCallbacks& callbacks = {});

}  // namespace flowik
