#include "ivp/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ivp/errors.hpp"

namespace ivp {

std::string to_string(QueueTraining mode) {
  switch (mode) {
    case QueueTraining::generator: return "generator";
    case QueueTraining::causal: return "causal";
    case QueueTraining::unmasked: return "unmasked";
    case QueueTraining::empty: return "empty";
  }
  return "generator";
}

QueueTraining queue_training_from_string(const std::string& name) {
  if (name == "generator") return QueueTraining::generator;
  if (name == "causal") return QueueTraining::causal;
  if (name == "unmasked") return QueueTraining::unmasked;
  if (name == "empty") return QueueTraining::empty;
  throw ConfigError("unknown queue training mode '" + name + "'");
}

torch::Tensor train_step(IvpModel& model, const Batch& batch, int t, Rng& mask_rng,
                         QueueTraining mode) {
  const auto& cfg = model->config();
  detail::require(batch.observed.defined() && batch.observed.size(0) >= 1, "batch must be non-empty");
  detail::require(t >= 1 && t <= cfg.t_fut, "target step must lie in [1, t_fut]");
  detail::require(batch.future.dim() == 5 && batch.future.size(1) == cfg.t_fut,
                  "future frames must be [B, t_fut, C, H, W]");
  const auto b = batch.observed.size(0);
  const auto options = model->encoder->parameters().front().options();
  auto observed = batch.observed.to(options);
  auto future = batch.future.to(options);

  auto q_obs = model->encode_sequence(observed);
  torch::Tensor q_fut;
  if (mode == QueueTraining::empty) {
    q_fut = torch::zeros({b, cfg.t_fut, cfg.enc_channels, cfg.feature_height(), cfg.feature_width()},
                         options);
  } else {
    q_fut = model->encode_sequence(future);
    if (mode != QueueTraining::unmasked) {
      std::vector<MaskVector> masks;
      masks.reserve(static_cast<std::size_t>(b));
      for (std::int64_t i = 0; i < b; ++i) {
        masks.push_back(mode == QueueTraining::generator ? make_mask(t, cfg.t_fut, mask_rng)
                                                         : causal_mask(t, cfg.t_fut));
      }
      q_fut = q_fut * mask_tensor(masks, options).view({b, cfg.t_fut, 1, 1, 1});
    }
  }
  auto steps = torch::full({b}, static_cast<double>(t), torch::kFloat64);
  auto pred = model->forward_from_features(q_obs, q_fut, steps);
  return torch::mse_loss(pred, future.select(1, t - 1));
}

// ---------------------------------------------------------------------------

StackedRollout::StackedRollout(IvpModel model, const torch::Tensor& observed)
    : model_(std::move(model)) {
  torch::NoGradGuard no_grad;
  const auto options = model_->encoder->parameters().front().options();
  observed_ = model_->observe(observed.to(options));
  future_ = model_->empty_future_queue(observed.size(0));
}

torch::Tensor StackedRollout::predict_with(const FeatureQueue& future, double t) {
  torch::NoGradGuard no_grad;
  auto steps = torch::full({observed_.batch()}, t, torch::kFloat64);
  return model_->forward_from_features(observed_.features(), future.features(), steps);
}

torch::Tensor StackedRollout::predict_at(double t) { return predict_with(future_, t); }

torch::Tensor StackedRollout::step() {
  detail::require(steps_ < model_->config().t_fut, "rollout already filled the future queue");
  torch::NoGradGuard no_grad;
  auto frame = predict_at(static_cast<double>(steps_ + 1));
  future_.set(steps_, model_->learned_prior(frame));
  ++steps_;
  return frame;
}

StackedResult stacked_infer(IvpModel& model, const torch::Tensor& observed, int horizon) {
  detail::require(horizon >= 1 && horizon <= model->config().t_fut,
                  "horizon must lie in [1, t_fut]");
  StackedRollout rollout(model, observed);
  std::vector<torch::Tensor> frames;
  frames.reserve(static_cast<std::size_t>(horizon));
  for (int i = 0; i < horizon; ++i) frames.push_back(rollout.step());
  return {torch::stack(frames, 1), rollout.future_queue()};
}

torch::Tensor dense_infer(IvpModel& model, const torch::Tensor& observed,
                          const std::vector<double>& times) {
  const int t_fut = model->config().t_fut;
  detail::require(!times.empty(), "dense inference needs at least one time");
  for (std::size_t i = 0; i < times.size(); ++i) {
    detail::require(std::isfinite(times[i]) && times[i] > 0.0 && times[i] <= t_fut,
                    "dense times must lie in (0, t_fut]");
    if (i > 0) detail::require(times[i] > times[i - 1], "dense times must be strictly ascending");
  }
  StackedRollout rollout(model, observed);
  std::vector<torch::Tensor> integer_frames;
  std::vector<torch::Tensor> out;
  out.reserve(times.size());
  for (double t : times) {
    const int whole = static_cast<int>(std::floor(t));
    while (rollout.steps_done() < whole) integer_frames.push_back(rollout.step());
    if (static_cast<double>(whole) == t) {
      out.push_back(integer_frames[static_cast<std::size_t>(whole - 1)]);
    } else {
      out.push_back(rollout.predict_at(t));
    }
  }
  return torch::stack(out, 1);
}

// ---------------------------------------------------------------------------

std::string to_string(QueueMode mode) {
  switch (mode) {
    case QueueMode::original: return "original";
    case QueueMode::random_shuffle: return "random_shuffle";
    case QueueMode::all_first: return "all_first";
    case QueueMode::all_step8: return "all_step8";
    case QueueMode::all_zero: return "all_zero";
  }
  return "original";
}

QueueMode queue_mode_from_string(const std::string& name) {
  if (name == "original") return QueueMode::original;
  if (name == "random_shuffle") return QueueMode::random_shuffle;
  if (name == "all_first") return QueueMode::all_first;
  if (name == "all_step8") return QueueMode::all_step8;
  if (name == "all_zero") return QueueMode::all_zero;
  throw ConfigError("unknown queue mode '" + name +
                    "' (expected original|random_shuffle|all_first|all_step8|all_zero)");
}

FeatureQueue perturb_queue(const FeatureQueue& queue, QueueMode mode, Rng& rng) {
  std::vector<std::int64_t> valid;
  for (std::int64_t i = 0; i < queue.length(); ++i) {
    if (queue.is_valid(i)) valid.push_back(i);
  }
  FeatureQueue out = queue;
  switch (mode) {
    case QueueMode::original:
      return out;
    case QueueMode::random_shuffle: {
      auto order = valid;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < valid.size(); ++i) out.set(valid[i], queue.slot(order[i]));
      return out;
    }
    case QueueMode::all_first:
    case QueueMode::all_step8: {
      const std::int64_t source = mode == QueueMode::all_first ? 0 : 7;
      detail::require(source < queue.length() && queue.is_valid(source),
                      mode == QueueMode::all_first
                          ? "all_first needs slot 1 populated"
                          : "all_step8 needs at least 8 populated slots");
      auto feature = queue.slot(source);
      for (auto i : valid) out.set(i, feature);
      return out;
    }
    case QueueMode::all_zero:
      for (std::int64_t i = 0; i < out.length(); ++i) out.invalidate(i);
      return out;
  }
  return out;
}

torch::Tensor queue_experiment(IvpModel& model, const torch::Tensor& observed, QueueMode mode,
                               Rng& rng, std::vector<int> steps) {
  const int t_fut = model->config().t_fut;
  if (steps.empty()) {
    steps.resize(static_cast<std::size_t>(t_fut));
    std::iota(steps.begin(), steps.end(), 1);
  }
  for (int t : steps) detail::require(t >= 1 && t <= t_fut, "step out of range [1, t_fut]");
  const int last = *std::max_element(steps.begin(), steps.end());
  StackedRollout rollout(model, observed);
  while (rollout.steps_done() < std::max(0, last - 1)) rollout.step();
  const FeatureQueue full = rollout.future_queue();
  std::vector<torch::Tensor> out;
  for (int t : steps) {
    auto queue = perturb_queue(full.prefix(t - 1), mode, rng);
    out.push_back(rollout.predict_with(queue, t));
  }
  return torch::stack(out, 1);
}

EnsembleResult ensemble_predict(IvpModel& model, const torch::Tensor& observed, int t,
                                const std::vector<std::vector<std::uint8_t>>& combos) {
  const int t_fut = model->config().t_fut;
  detail::require(t >= 1 && t <= t_fut, "ensemble step out of range [1, t_fut]");
  detail::require(!combos.empty(), "ensemble needs at least one combination");
  for (const auto& combo : combos) {
    detail::require(static_cast<int>(combo.size()) == t - 1, "each combo must have t - 1 bits");
  }
  StackedRollout rollout(model, observed);
  while (rollout.steps_done() < t - 1) rollout.step();
  std::vector<torch::Tensor> samples;
  samples.reserve(combos.size());
  for (const auto& combo : combos) {
    MaskVector mask;
    mask.bits.assign(static_cast<std::size_t>(t_fut), 0);
    std::copy(combo.begin(), combo.end(), mask.bits.begin());
    samples.push_back(rollout.predict_with(apply_mask(rollout.future_queue(), mask), t));
  }
  auto stacked = torch::stack(samples, 0);
  return {stacked, stacked.mean(0)};
}

std::vector<std::vector<std::uint8_t>> parse_combos(const std::string& text) {
  std::vector<std::vector<std::uint8_t>> combos;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::vector<std::uint8_t> bits;
    for (char c : item) {
      if (c == '0' || c == '1') {
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
      } else if (c != ' ') {
        throw ConfigError("combo bits must be 0 or 1: '" + item + "'");
      }
    }
    combos.push_back(std::move(bits));
  }
  return combos;
}

}  // namespace ivp
