#pragma once

// Decoding-strategy comparison harness: MIMO, MISO-autoregressive,
// MISO-multi-model and stacked-autoregressive, all on one backbone recipe.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivp/datagen.hpp"
#include "ivp/model.hpp"

namespace ivp {

enum class StrategyKind { mimo, miso_autoregressive, miso_multi, stacked_ar };

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

/// Encoder -> (unconditioned) predictor over `in_frames` stacked features ->
/// decoder whose head emits `out_frames` frames at once -> optional STR per
/// frame. Shares block recipes with the implicit model.
class BackboneNetImpl : public torch::nn::Module {
 public:
  BackboneNetImpl(const ModelConfig& cfg, int in_frames, int out_frames);

  /// [B, in_frames, C, H, W] -> [B, out_frames, C, H, W]
  torch::Tensor forward(const torch::Tensor& frames);

  Encoder encoder{nullptr};
  Predictor predictor{nullptr};
  Decoder decoder{nullptr};
  Refiner refiner{nullptr};

 private:
  ModelConfig cfg_;
  int in_frames_;
  int out_frames_;
};
TORCH_MODULE(BackboneNet);

/// Parameters of encoder, predictor blocks + output projection, decoder
/// blocks and STR: the part every strategy shares.
std::int64_t backbone_parameter_count(const Encoder& encoder, const Predictor& predictor,
                                      const Decoder& decoder, const Refiner& refiner);

struct StrategyBudget {
  int epochs = 200;  ///< per model
  int batch_size = 16;
  double lr0 = 1e-3;
};

struct StrategyResult {
  StrategyKind kind = StrategyKind::stacked_ar;
  std::int64_t params = 0;           ///< total over all owned models
  std::int64_t single_params = 0;    ///< one model
  std::int64_t backbone_params = 0;  ///< shared part of one model
  int models = 1;
  int epochs_per_model = 0;
  std::vector<double> per_step_mse;
  double mean_mse = 0.0;

  std::string budget_label() const;
};

/// Train one strategy on `train` and report per-step test MSE on `test`.
/// Every model's initialization and data order derive only from (seed,
/// strategy, model index). `multi_order` optionally permutes the order in
/// which the miso_multi models are trained.
StrategyResult run_strategy(StrategyKind kind, const std::vector<SequencePair>& train,
                            const std::vector<SequencePair>& test, const ModelConfig& cfg,
                            const StrategyBudget& budget, std::uint64_t seed,
                            const std::vector<int>& multi_order = {});

struct ComparisonTable {
  std::vector<StrategyResult> rows;

  /// Tab-delimited: strategy, params, budget, step_1..step_n, mean.
  std::string to_text() const;
  nlohmann::json to_json() const;
};

ComparisonTable emit_comparison_table(const std::vector<StrategyResult>& results);

}  // namespace ivp
