#pragma once

// Optimization loop: error-driven timestep sampler, cosine schedule, EMA
// shadow weights, and the learned-prior fine-tuning stage.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivp/datagen.hpp"
#include "ivp/model.hpp"
#include "ivp/rng.hpp"
#include "ivp/strategy.hpp"

namespace ivp {

struct OptimConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 8;
  int total_epochs = 500;
  double ema_momentum = 0.995;
  std::int64_t ema_start = 2000;
  std::int64_t ema_every = 10;
  double alpha = 1.0;
  /// Refresh the per-step error table every this many epochs.
  int val_every = 50;
  QueueTraining queue_training = QueueTraining::generator;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const OptimConfig&) const = default;
};

/// P(t = i) = e_i^(1/alpha) / sum_j e_j^(1/alpha), i = 1..n (returned 0-based).
std::vector<double> timestep_probabilities(std::span<const double> errors, double alpha);

/// Draw a 1-based target step from the error table.
int sample_timestep(std::span<const double> errors, double alpha, Rng& rng);

/// 0.5 * lr0 * (1 + cos(pi * step / total)); steps past the end clamp to 0.
double lr_at(std::int64_t step, std::int64_t total_steps, double lr0);

/// shadow <- m * shadow + (1 - m) * weights, applied only when
/// step >= ema_start and step % ema_every == 0. Returns whether it applied.
bool ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& weights,
                std::int64_t step, double momentum, std::int64_t ema_start, std::int64_t ema_every);

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<std::vector<double>> val_mse;

  /// One JSON object, no trailing newline.
  std::string to_json_line() const;
};

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;
  IvpModel ema{nullptr};
  std::vector<double> error_table;
  std::uint64_t rng_seed = 0;
  std::vector<double> step_losses;
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// Per-step MSE of stacked inference over `pairs`.
std::vector<double> stacked_step_mse(IvpModel& model, const std::vector<SequencePair>& pairs,
                                     int batch_size = 16);

/// Main training run. `val` may be empty, in which case `train` is used for
/// the error-table refresh. Reproducible for a fixed `cfg.seed`.
TrainState fit(const std::vector<SequencePair>& train, const std::vector<SequencePair>& val,
               IvpModel& model, const OptimConfig& cfg, const EpochCallback& on_epoch = {});

struct LpConfig {
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct LpResult {
  std::vector<double> epoch_loss;
};

/// Fine-tune only the learned prior so LP(y_hat) approaches e(y), where y_hat
/// comes from stacked inference. Requires a trained model.
LpResult finetune_lp(const std::vector<SequencePair>& train, IvpModel& model, const LpConfig& cfg);

/// Mean over elements of (LP(y_hat_t) - e(y_t))^2 with y_hat from stacked inference.
double feature_gap(IvpModel& model, const std::vector<SequencePair>& pairs, int batch_size = 16);

}  // namespace ivp
