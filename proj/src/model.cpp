#include "ivp/model.hpp"

#include <cmath>

#include "ivp/errors.hpp"
#include "ivp/rng.hpp"

namespace ivp {

namespace nn = torch::nn;

std::string to_string(BlockStyle style) {
  return style == BlockStyle::baseline ? "baseline" : "improved";
}

BlockStyle block_style_from_string(const std::string& name) {
  if (name == "baseline") return BlockStyle::baseline;
  if (name == "improved") return BlockStyle::improved;
  throw ConfigError("unknown block_style '" + name + "' (expected baseline|improved)");
}

void ModelConfig::validate() const {
  using detail::require_config;
  require_config(in_channels >= 1, "in_channels must be >= 1");
  require_config(t_obs >= 1 && t_fut >= 1, "t_obs and t_fut must be >= 1");
  require_config(enc_channels >= 1 && pred_channels >= 1, "channel counts must be >= 1");
  require_config(enc_layers >= 1 && dec_layers >= 1 && pred_layers >= 1,
                 "layer counts must be >= 1");
  require_config(enc_layers / 2 == dec_layers / 2,
                 "encoder and decoder must have the same number of resampling stages");
  require_config(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even");
  require_config(pred_kernel >= 1 && pred_kernel % 2 == 1, "pred_kernel must be odd");
  require_config(str_kernel >= 1 && str_kernel % 2 == 1, "str_kernel must be odd");
  require_config(str_hidden >= 1 && str_blocks >= 0, "invalid refinement settings");
  const int factor = 1 << downsamples();
  require_config(height % factor == 0 && width % factor == 0 && height >= factor && width >= factor,
                 "frame size must be divisible by 2^(enc_layers/2)");
  if (block_style == BlockStyle::baseline) {
    require_config(enc_channels % 2 == 0, "baseline GroupNorm(2) needs even enc_channels");
  }
}

std::vector<double> sinusoidal_encode(double t, int dim) {
  detail::require_config(dim >= 2 && dim % 2 == 0, "sinusoidal dim must be even");
  detail::require(std::isfinite(t) && t >= 0.0, "time step must be finite and >= 0");
  std::vector<double> raw(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    raw[2 * i] = std::sin(t * freq);
    raw[2 * i + 1] = std::cos(t * freq);
  }
  return raw;
}

torch::Tensor sinusoidal_encode(const torch::Tensor& t, int dim) {
  detail::require_config(dim >= 2 && dim % 2 == 0, "sinusoidal dim must be even");
  detail::require(t.dim() == 1, "time steps must be a 1-D tensor");
  auto tt = t.to(torch::kFloat64).contiguous();
  detail::require(torch::isfinite(tt).all().item<bool>() && (tt >= 0).all().item<bool>(),
                  "time steps must be finite and >= 0");
  const auto half = dim / 2;
  auto idx = torch::arange(half, torch::kFloat64);
  auto freq = torch::pow(10000.0, -2.0 * idx / dim);
  auto angle = tt.unsqueeze(1) * freq.unsqueeze(0);  // [B, half]
  return torch::stack({torch::sin(angle), torch::cos(angle)}, 2).reshape({t.size(0), dim});
}

// ---------------------------------------------------------------------------

ChannelLayerNormImpl::ChannelLayerNormImpl(std::int64_t channels, double eps)
    : channels_(channels), eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor ChannelLayerNormImpl::forward(const torch::Tensor& x) {
  auto y = torch::layer_norm(x.permute({0, 2, 3, 1}), {channels_}, weight, bias, eps_);
  return y.permute({0, 3, 1, 2});
}

EncoderBlockImpl::EncoderBlockImpl(std::int64_t in, std::int64_t out, bool downsample,
                                   BlockStyle style)
    : style_(style) {
  conv = register_module(
      "conv", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(downsample ? 2 : 1).padding(1)));
  if (style_ == BlockStyle::improved) {
    layer_norm = register_module("norm", ChannelLayerNorm(out));
  } else {
    group_norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(2, out)));
  }
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv(x);
  if (style_ == BlockStyle::improved) return torch::silu(layer_norm(y));
  return torch::leaky_relu(group_norm(y), 0.2);
}

DecoderBlockImpl::DecoderBlockImpl(std::int64_t channels, bool upsample, BlockStyle style)
    : style_(style), upsample_(upsample) {
  if (style_ == BlockStyle::improved) {
    const auto out = upsample ? 4 * channels : channels;
    conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, out, 3).padding(1)));
    layer_norm = register_module("norm", ChannelLayerNorm(out));
  } else {
    if (upsample) {
      deconv = register_module("conv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(
                                                                channels, channels, 3)
                                                                .stride(2)
                                                                .padding(1)
                                                                .output_padding(1)));
    } else {
      conv = register_module("conv",
                             nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    }
    group_norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(2, channels)));
  }
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x) {
  if (style_ == BlockStyle::improved) {
    auto y = torch::silu(layer_norm(conv(x)));
    return upsample_ ? torch::pixel_shuffle(y, 2) : y;
  }
  auto y = upsample_ ? deconv(x) : conv(x);
  return torch::leaky_relu(group_norm(y), 0.2);
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) {
  blocks = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::int64_t in = i == 0 ? cfg.in_channels : cfg.enc_channels;
    blocks->push_back(EncoderBlock(in, cfg.enc_channels, i % 2 == 1, cfg.block_style));
  }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& frames) {
  auto h = frames;
  for (auto& block : *blocks) h = block->as<EncoderBlock>()->forward(h);
  return h;
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg, std::int64_t out_channels) {
  blocks = register_module("blocks", nn::ModuleList());
  // Mirror of the encoder's stride pattern.
  for (int i = cfg.dec_layers - 1; i >= 0; --i) {
    blocks->push_back(DecoderBlock(cfg.enc_channels, i % 2 == 1, cfg.block_style));
  }
  readout = register_module("readout",
                            nn::Conv2d(nn::Conv2dOptions(cfg.enc_channels, out_channels, 1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& features) {
  auto h = features;
  for (auto& block : *blocks) h = block->as<DecoderBlock>()->forward(h);
  return readout(h);
}

TimeMlpImpl::TimeMlpImpl(std::int64_t embed_dim, std::int64_t out_dim) {
  fc1 = register_module("fc1", nn::Linear(embed_dim, out_dim));
  fc2 = register_module("fc2", nn::Linear(out_dim, out_dim));
}

torch::Tensor TimeMlpImpl::forward(const torch::Tensor& raw) {
  return fc2(torch::gelu(fc1(raw)));
}

ConvNeXtBlockImpl::ConvNeXtBlockImpl(std::int64_t channels, std::int64_t kernel) {
  dwconv = register_module("dwconv", nn::Conv2d(nn::Conv2dOptions(channels, channels, kernel)
                                                    .padding(kernel / 2)
                                                    .groups(channels)));
  norm = register_module("norm", ChannelLayerNorm(channels));
  pwconv1 = register_module("pwconv1", nn::Conv2d(nn::Conv2dOptions(channels, 4 * channels, 1)));
  pwconv2 = register_module("pwconv2", nn::Conv2d(nn::Conv2dOptions(4 * channels, channels, 1)));
}

torch::Tensor ConvNeXtBlockImpl::forward(const torch::Tensor& x) {
  return x + pwconv2(torch::gelu(pwconv1(norm(dwconv(x)))));
}

PredictorImpl::PredictorImpl(std::int64_t in_channels, std::int64_t out_channels,
                             const ModelConfig& cfg, bool time_conditioned) {
  in_proj = register_module("in_proj",
                            nn::Conv2d(nn::Conv2dOptions(in_channels, cfg.pred_channels, 1)));
  blocks = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < cfg.pred_layers; ++i) {
    blocks->push_back(ConvNeXtBlock(cfg.pred_channels, cfg.pred_kernel));
  }
  out_proj = register_module("out_proj",
                             nn::Conv2d(nn::Conv2dOptions(cfg.pred_channels, out_channels, 1)));
  if (time_conditioned) {
    const int count = cfg.per_layer_time_mlp ? cfg.pred_layers : 1;
    for (int i = 0; i < count; ++i) {
      time_mlps.push_back(register_module("time_mlp" + std::to_string(i),
                                          TimeMlp(cfg.time_embed_dim, cfg.pred_channels)));
    }
  }
}

torch::Tensor PredictorImpl::time_project(const torch::Tensor& time_raw, std::size_t layer) {
  detail::require(time_conditioned(), "predictor has no time conditioning");
  auto mlp = time_mlps.size() == 1 ? time_mlps.front() : time_mlps.at(layer);
  return mlp->forward(time_raw);
}

torch::Tensor PredictorImpl::forward(const torch::Tensor& stacked, const torch::Tensor& time_raw) {
  auto h = in_proj(stacked);
  const bool conditioned = time_conditioned();
  if (conditioned) detail::require(time_raw.defined(), "time-conditioned predictor needs s(t)");
  torch::Tensor shared;
  if (conditioned && time_mlps.size() == 1) shared = time_project(time_raw).unsqueeze(-1).unsqueeze(-1);
  std::size_t layer = 0;
  for (auto& block : *blocks) {
    if (conditioned) {
      h = h + (shared.defined() ? shared : time_project(time_raw, layer).unsqueeze(-1).unsqueeze(-1));
    }
    h = block->as<ConvNeXtBlock>()->forward(h);
    ++layer;
  }
  return out_proj(h);
}

RefinerImpl::RefinerImpl(const ModelConfig& cfg) {
  const auto c = cfg.in_channels;
  const auto h = cfg.str_hidden;
  lift = register_module("lift", nn::Conv2d(nn::Conv2dOptions(c, h, 1)));
  for (int i = 0; i < cfg.str_blocks; ++i) {
    const auto tag = std::to_string(i);
    dwconvs.push_back(register_module(
        "dwconv" + tag,
        nn::Conv2d(nn::Conv2dOptions(h, h, cfg.str_kernel).padding(cfg.str_kernel / 2).groups(h))));
    norms.push_back(register_module("norm" + tag, ChannelLayerNorm(h)));
    pwconvs.push_back(register_module("pwconv" + tag, nn::Conv2d(nn::Conv2dOptions(h, h, 1))));
  }
  out = register_module("out", nn::Conv2d(nn::Conv2dOptions(h, c, 1)));
  torch::NoGradGuard no_grad;
  out->weight.zero_();
  out->bias.zero_();
}

torch::Tensor RefinerImpl::forward(const torch::Tensor& frames) {
  auto h = lift(frames);
  for (std::size_t i = 0; i < dwconvs.size(); ++i) {
    h = h + torch::gelu(pwconvs[i](norms[i](dwconvs[i](h))));
  }
  return frames + out(h);
}

// ---------------------------------------------------------------------------

IvpModelImpl::IvpModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder = register_module("encoder", Encoder(cfg_));
  const std::int64_t stacked = static_cast<std::int64_t>(cfg_.t_obs + cfg_.t_fut) * cfg_.enc_channels;
  predictor = register_module("predictor",
                              Predictor(stacked, cfg_.enc_channels, cfg_, cfg_.time_embedding));
  decoder = register_module("decoder", Decoder(cfg_, cfg_.in_channels));
  if (cfg_.str_enabled) refiner = register_module("refiner", Refiner(cfg_));
  prior = register_module("prior", Encoder(cfg_));
  sync_learned_prior();
}

void IvpModelImpl::check_frames(const torch::Tensor& frames, const char* what) const {
  detail::require(frames.defined() && frames.dim() == 4 && frames.size(1) == cfg_.in_channels &&
                      frames.size(2) == cfg_.height && frames.size(3) == cfg_.width,
                  std::string(what) + ": frames must be [N, " + std::to_string(cfg_.in_channels) +
                      ", " + std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) + "]");
}

torch::Tensor IvpModelImpl::encode(const torch::Tensor& frames) {
  check_frames(frames, "encode");
  return encoder(frames);
}

torch::Tensor IvpModelImpl::encode_sequence(const torch::Tensor& frames) {
  detail::require(frames.dim() == 5, "encode_sequence: frames must be [B, L, C, H, W]");
  const auto b = frames.size(0), l = frames.size(1);
  auto f = encode(frames.reshape({b * l, frames.size(2), frames.size(3), frames.size(4)}));
  return f.reshape({b, l, f.size(1), f.size(2), f.size(3)});
}

FeatureQueue IvpModelImpl::observe(const torch::Tensor& observed) {
  detail::require(observed.dim() == 5 && observed.size(1) == cfg_.t_obs,
                  "observed sequence must be [B, t_obs, C, H, W]");
  return FeatureQueue::from_features(encode_sequence(observed));
}

FeatureQueue IvpModelImpl::empty_future_queue(std::int64_t batch) {
  return FeatureQueue(batch, cfg_.t_fut, cfg_.enc_channels, cfg_.feature_height(),
                      cfg_.feature_width(), encoder->parameters().front().options());
}

torch::Tensor IvpModelImpl::time_encoding(const torch::Tensor& t) {
  return sinusoidal_encode(t, cfg_.time_embed_dim).to(encoder->parameters().front().options());
}

torch::Tensor IvpModelImpl::time_project(const torch::Tensor& raw, std::size_t layer) {
  return predictor->time_project(raw, layer);
}

torch::Tensor IvpModelImpl::predict_features(const torch::Tensor& q_obs, const torch::Tensor& q_fut,
                                             const torch::Tensor& t) {
  const auto fh = cfg_.feature_height(), fw = cfg_.feature_width();
  detail::require(q_obs.dim() == 5 && q_obs.size(1) == cfg_.t_obs &&
                      q_obs.size(2) == cfg_.enc_channels && q_obs.size(3) == fh &&
                      q_obs.size(4) == fw,
                  "observed queue must be [B, t_obs, C_f, H', W']");
  detail::require(q_fut.dim() == 5 && q_fut.size(0) == q_obs.size(0) &&
                      q_fut.size(1) == cfg_.t_fut && q_fut.size(2) == cfg_.enc_channels &&
                      q_fut.size(3) == fh && q_fut.size(4) == fw,
                  "future queue must be [B, t_fut, C_f, H', W']");
  const auto b = q_obs.size(0);
  auto stacked = torch::cat({q_obs, q_fut}, 1).reshape(
      {b, (cfg_.t_obs + cfg_.t_fut) * cfg_.enc_channels, fh, fw});
  torch::Tensor raw;
  if (cfg_.time_embedding) {
    auto steps = t.dim() == 0 ? t.reshape({1}).expand({b}) : t;
    detail::require(steps.dim() == 1 && steps.size(0) == b, "need one time step per sample");
    raw = time_encoding(steps);
  }
  return predictor(stacked, raw);
}

torch::Tensor IvpModelImpl::predict_features(const FeatureQueue& q_obs, const FeatureQueue& q_fut,
                                             const torch::Tensor& t) {
  detail::require(q_obs.length() == cfg_.t_obs && q_obs.valid_count() == cfg_.t_obs,
                  "observed queue must hold t_obs valid slots");
  detail::require(q_fut.length() == cfg_.t_fut, "future queue must hold t_fut slots");
  return predict_features(q_obs.features(), q_fut.features(), t);
}

torch::Tensor IvpModelImpl::decode(const torch::Tensor& features) {
  detail::require(features.dim() == 4 && features.size(1) == cfg_.enc_channels &&
                      features.size(2) == cfg_.feature_height() &&
                      features.size(3) == cfg_.feature_width(),
                  "decode: features must be [N, C_f, H', W']");
  return decoder(features);
}

torch::Tensor IvpModelImpl::refine(const torch::Tensor& frames) {
  check_frames(frames, "refine");
  return cfg_.str_enabled ? refiner(frames) : frames;
}

torch::Tensor IvpModelImpl::learned_prior(const torch::Tensor& frames) {
  check_frames(frames, "learned_prior");
  return prior(frames);
}

torch::Tensor IvpModelImpl::forward(const torch::Tensor& observed, const FeatureQueue& q_fut,
                                    const torch::Tensor& t) {
  detail::require(observed.dim() == 5 && observed.size(1) == cfg_.t_obs,
                  "observed sequence must be [B, t_obs, C, H, W]");
  detail::require(q_fut.length() == cfg_.t_fut && q_fut.batch() == observed.size(0),
                  "future queue does not match batch / t_fut");
  return forward_from_features(encode_sequence(observed), q_fut.features(), t);
}

torch::Tensor IvpModelImpl::forward_from_features(const torch::Tensor& q_obs,
                                                  const torch::Tensor& q_fut,
                                                  const torch::Tensor& t) {
  return refine(decode(predict_features(q_obs, q_fut, t)));
}

std::vector<torch::Tensor> IvpModelImpl::main_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    if (item.key().rfind("prior.", 0) != 0) out.push_back(item.value());
  }
  return out;
}

std::vector<torch::Tensor> IvpModelImpl::lp_parameters() const { return prior->parameters(); }

void IvpModelImpl::sync_learned_prior() { copy_parameters(*prior, *encoder); }

IvpModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  torch::manual_seed(torch_seed(seed));
  return IvpModel(cfg);
}

void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard no_grad;
  auto dst_params = dst.named_parameters();
  auto src_params = src.named_parameters();
  detail::require(dst_params.size() == src_params.size(), "parameter sets differ in size");
  for (const auto& item : src_params) {
    auto* target = dst_params.find(item.key());
    detail::require(target != nullptr, "missing parameter " + item.key());
    detail::require(target->sizes() == item.value().sizes(), "shape mismatch for " + item.key());
    target->copy_(item.value());
  }
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace ivp
