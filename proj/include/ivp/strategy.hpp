#pragma once

// Training pass with masked ground-truth queues, stacked-autoregressive
// inference and the queue experiments built on top of it.

#include <torch/torch.h>

#include <string>
#include <vector>

#include "ivp/datagen.hpp"
#include "ivp/model.hpp"
#include "ivp/queue.hpp"
#include "ivp/rng.hpp"

namespace ivp {

/// How the ground-truth future queue is presented during training.
enum class QueueTraining {
  generator,  ///< causal hiding plus random dropping (the mask generator)
  causal,     ///< only slots >= t hidden
  unmasked,   ///< full ground-truth queue, target included
  empty,      ///< queue always zero (implicit single-step model without stacking)
};

std::string to_string(QueueTraining mode);
QueueTraining queue_training_from_string(const std::string& name);

/// One forward pass of the training objective at target step `t` (1-based).
/// Q_o and Q_f are encoded from the batch, one mask is drawn per sample and
/// applied multiplicatively to Q_f. Returns the MSE against y_t with the
/// autograd graph attached.
torch::Tensor train_step(IvpModel& model, const Batch& batch, int t, Rng& mask_rng,
                         QueueTraining mode = QueueTraining::generator);

/// Step-by-step stacked-autoregressive inference. Q_o is encoded once; each
/// step predicts y_t from (Q_o, Q_f, t) and writes LP(y_t) into slot t.
class StackedRollout {
 public:
  StackedRollout(IvpModel model, const torch::Tensor& observed);

  /// Predict the next integer step and push its learned-prior feature.
  torch::Tensor step();
  /// Prediction at arbitrary `t` from the current queue; nothing is pushed.
  torch::Tensor predict_at(double t);
  /// Prediction at `t` from an explicit future queue.
  torch::Tensor predict_with(const FeatureQueue& future, double t);

  int steps_done() const { return steps_; }
  const FeatureQueue& observed_queue() const { return observed_; }
  const FeatureQueue& future_queue() const { return future_; }

 private:
  IvpModel model_;
  FeatureQueue observed_;
  FeatureQueue future_;
  int steps_ = 0;
};

struct StackedResult {
  torch::Tensor frames;  ///< [B, horizon, C, H, W]
  FeatureQueue future_queue;
};

/// Predict steps 1..horizon (horizon <= t_fut) from an empty future queue.
StackedResult stacked_infer(IvpModel& model, const torch::Tensor& observed, int horizon);

/// Predictions at the requested (possibly fractional) times, ascending in
/// (0, t_fut]. Fractional times read the queue as it stands after floor(t)
/// integer steps and never write to it. Result: [B, times.size(), C, H, W].
torch::Tensor dense_infer(IvpModel& model, const torch::Tensor& observed,
                          const std::vector<double>& times);

enum class QueueMode { original, random_shuffle, all_first, all_step8, all_zero };

std::string to_string(QueueMode mode);
QueueMode queue_mode_from_string(const std::string& name);

/// Rearranged copy of a populated future queue.
FeatureQueue perturb_queue(const FeatureQueue& queue, QueueMode mode, Rng& rng);

/// For each requested step t, predict y_t from the stacked queue prefix
/// (slots 1..t-1) after `perturb_queue(mode)`. With `original` this equals
/// `stacked_infer`. `steps` empty means 1..t_fut. Result: [B, steps, C, H, W].
torch::Tensor queue_experiment(IvpModel& model, const torch::Tensor& observed, QueueMode mode,
                               Rng& rng, std::vector<int> steps = {});

struct EnsembleResult {
  torch::Tensor samples;  ///< [K, B, C, H, W]
  torch::Tensor mean;     ///< [B, C, H, W]
};

/// Predict y_t once per combination of kept future-queue slots (each combo
/// has t - 1 bits over slots 1..t-1) and average the samples.
EnsembleResult ensemble_predict(IvpModel& model, const torch::Tensor& observed, int t,
                                const std::vector<std::vector<std::uint8_t>>& combos);

/// Parse "1101,0011" style combo lists.
std::vector<std::vector<std::uint8_t>> parse_combos(const std::string& text);

}  // namespace ivp
