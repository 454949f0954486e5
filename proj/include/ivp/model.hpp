#pragma once

// Encoder / time-conditioned predictor / decoder / refinement network with a
// learned-prior encoder for the future queue.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "ivp/queue.hpp"

namespace ivp {

enum class BlockStyle {
  baseline,  ///< (Conv, GroupNorm, LeakyReLU) / (ConvTranspose, GroupNorm, LeakyReLU)
  improved,  ///< (Conv, LayerNorm, SiLU) / (Conv, LayerNorm, SiLU, PixelShuffle)
};

std::string to_string(BlockStyle style);
BlockStyle block_style_from_string(const std::string& name);

struct ModelConfig {
  int in_channels = 1;
  int height = 32;
  int width = 32;
  int t_obs = 10;
  int t_fut = 10;
  int enc_channels = 64;
  int pred_channels = 128;
  int enc_layers = 4;
  int dec_layers = 4;
  int pred_layers = 6;
  int pred_kernel = 7;
  int time_embed_dim = 64;
  BlockStyle block_style = BlockStyle::improved;
  bool str_enabled = true;
  int str_hidden = 16;
  int str_blocks = 2;
  int str_kernel = 7;
  /// When false the predictor ignores the target step entirely.
  bool time_embedding = true;
  /// One time MLP per predictor block instead of a shared one.
  bool per_layer_time_mlp = false;

  void validate() const;
  /// Strided stages in the encoder (and pixel-shuffle stages in the decoder).
  int downsamples() const { return enc_layers / 2; }
  int feature_height() const { return height >> downsamples(); }
  int feature_width() const { return width >> downsamples(); }

  bool operator==(const ModelConfig&) const = default;
};

/// s(t): interleaved sin/cos, raw[2i] = sin(t / 10000^(2i/dim)),
/// raw[2i+1] = cos(t / 10000^(2i/dim)). Fractional t is allowed.
std::vector<double> sinusoidal_encode(double t, int dim);

/// Batched form: `t` is [B], result is [B, dim] in float64.
torch::Tensor sinusoidal_encode(const torch::Tensor& t, int dim);

/// Layer normalization over the channel axis of an NCHW tensor.
class ChannelLayerNormImpl : public torch::nn::Module {
 public:
  explicit ChannelLayerNormImpl(std::int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  std::int64_t channels_;
  double eps_;
};
TORCH_MODULE(ChannelLayerNorm);

/// Conv -> norm -> activation, optionally strided.
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(std::int64_t in, std::int64_t out, bool downsample, BlockStyle style);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  BlockStyle style_;
  torch::nn::Conv2d conv{nullptr};
  ChannelLayerNorm layer_norm{nullptr};
  torch::nn::GroupNorm group_norm{nullptr};
};
TORCH_MODULE(EncoderBlock);

/// Improved: Conv -> LayerNorm -> SiLU -> PixelShuffle(2) when upsampling.
/// Baseline: ConvTranspose (or Conv) -> GroupNorm -> LeakyReLU.
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(std::int64_t channels, bool upsample, BlockStyle style);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  BlockStyle style_;
  bool upsample_;
  torch::nn::Conv2d conv{nullptr};
  torch::nn::ConvTranspose2d deconv{nullptr};
  ChannelLayerNorm layer_norm{nullptr};
  torch::nn::GroupNorm group_norm{nullptr};
};
TORCH_MODULE(DecoderBlock);

/// Spatial encoder e(.): frames [N, C, H, W] -> features [N, C_f, H', W'].
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& frames);

 private:
  torch::nn::ModuleList blocks;
};
TORCH_MODULE(Encoder);

/// Spatial decoder d(.): features -> [N, out_channels, H, W].
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const ModelConfig& cfg, std::int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& features);

  torch::nn::ModuleList blocks;
  torch::nn::Conv2d readout{nullptr};
};
TORCH_MODULE(Decoder);

/// Two fully connected layers around a GELU.
class TimeMlpImpl : public torch::nn::Module {
 public:
  TimeMlpImpl(std::int64_t embed_dim, std::int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& raw);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TimeMlp);

/// ConvNeXt block: depthwise kxk -> LayerNorm -> 1x1 expand (4x) -> GELU ->
/// 1x1 contract, with residual.
class ConvNeXtBlockImpl : public torch::nn::Module {
 public:
  ConvNeXtBlockImpl(std::int64_t channels, std::int64_t kernel);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d dwconv{nullptr};
  ChannelLayerNorm norm{nullptr};
  torch::nn::Conv2d pwconv1{nullptr}, pwconv2{nullptr};
};
TORCH_MODULE(ConvNeXtBlock);

/// p(.): 1x1 projection of the channel-stacked queue to the working width,
/// ConvNeXt blocks with the time conditioning added to each block input, and
/// a 1x1 projection back to the feature width.
class PredictorImpl : public torch::nn::Module {
 public:
  PredictorImpl(std::int64_t in_channels, std::int64_t out_channels, const ModelConfig& cfg,
                bool time_conditioned);

  /// `time_raw` is s(t) as [B, time_embed_dim]; ignored when unconditioned.
  torch::Tensor forward(const torch::Tensor& stacked, const torch::Tensor& time_raw = {});

  /// Projected conditioning for block `layer`: [B, pred_channels].
  torch::Tensor time_project(const torch::Tensor& time_raw, std::size_t layer = 0);

  bool time_conditioned() const { return !time_mlps.empty(); }

  torch::nn::Conv2d in_proj{nullptr};
  torch::nn::ModuleList blocks;
  torch::nn::Conv2d out_proj{nullptr};
  std::vector<TimeMlp> time_mlps;
};
TORCH_MODULE(Predictor);

/// STR: output = frame + R(frame), R's last layer zero-initialized.
class RefinerImpl : public torch::nn::Module {
 public:
  explicit RefinerImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& frames);

  torch::nn::Conv2d lift{nullptr};
  std::vector<torch::nn::Conv2d> dwconvs;
  std::vector<ChannelLayerNorm> norms;
  std::vector<torch::nn::Conv2d> pwconvs;
  torch::nn::Conv2d out{nullptr};
};
TORCH_MODULE(Refiner);

/// The full implicit stacked-autoregressive predictor.
class IvpModelImpl : public torch::nn::Module {
 public:
  explicit IvpModelImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// [N, C, H, W] -> [N, C_f, H', W']
  torch::Tensor encode(const torch::Tensor& frames);
  /// [B, L, C, H, W] -> [B, L, C_f, H', W']
  torch::Tensor encode_sequence(const torch::Tensor& frames);
  /// Q_o for a batch of observed sequences; every slot valid.
  FeatureQueue observe(const torch::Tensor& observed);
  /// Empty (all-zero, invalid) future queue for a batch.
  FeatureQueue empty_future_queue(std::int64_t batch);

  /// Raw s(t) for per-sample steps `t` ([B]), in the model's dtype.
  torch::Tensor time_encoding(const torch::Tensor& t);
  /// MLP projection of s(t) for block `layer`: [B, pred_channels].
  torch::Tensor time_project(const torch::Tensor& raw, std::size_t layer = 0);

  /// Channel-stack Q_o and Q_f and run p(.). Queue features are [B, L, C_f, H', W'].
  torch::Tensor predict_features(const torch::Tensor& q_obs, const torch::Tensor& q_fut,
                                 const torch::Tensor& t);
  torch::Tensor predict_features(const FeatureQueue& q_obs, const FeatureQueue& q_fut,
                                 const torch::Tensor& t);

  torch::Tensor decode(const torch::Tensor& features);
  /// Identity when STR is disabled.
  torch::Tensor refine(const torch::Tensor& frames);
  torch::Tensor learned_prior(const torch::Tensor& frames);

  /// refine(decode(predict_features(e(x), q_fut, t))); one frame per sample.
  torch::Tensor forward(const torch::Tensor& observed, const FeatureQueue& q_fut,
                        const torch::Tensor& t);
  /// Same with precomputed Q_o features.
  torch::Tensor forward_from_features(const torch::Tensor& q_obs, const torch::Tensor& q_fut,
                                      const torch::Tensor& t);

  /// Parameters trained by the main objective (everything but the learned prior).
  std::vector<torch::Tensor> main_parameters() const;
  std::vector<torch::Tensor> lp_parameters() const;

  /// Copy e(.)'s current weights into the learned prior.
  void sync_learned_prior();

  /// Optimizer steps of main training applied to these weights.
  std::int64_t trained_steps = 0;
  /// True once the learned prior has been fine-tuned.
  bool lp_finetuned = false;

  Encoder encoder{nullptr};
  Predictor predictor{nullptr};
  Decoder decoder{nullptr};
  Refiner refiner{nullptr};
  Encoder prior{nullptr};

 private:
  void check_frames(const torch::Tensor& frames, const char* what) const;
  ModelConfig cfg_;
};
TORCH_MODULE(IvpModel);

/// Build a model with weights drawn from torch's generator seeded by `seed`.
IvpModel make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Copy parameter values from `src` into `dst` (same architecture).
void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src);

std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace ivp
