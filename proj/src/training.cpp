#include "ivp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "ivp/errors.hpp"

namespace ivp {

void OptimConfig::validate() const {
  using detail::require_config;
  require_config(lr0 > 0.0, "lr0 must be > 0");
  require_config(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require_config(batch_size >= 1, "batch_size must be >= 1");
  require_config(total_epochs >= 1, "total_epochs must be >= 1");
  require_config(ema_momentum > 0.0 && ema_momentum < 1.0, "ema_momentum must lie in (0, 1)");
  require_config(ema_start >= 0 && ema_every >= 1, "invalid EMA cadence");
  require_config(alpha > 0.0, "alpha must be > 0");
  require_config(val_every >= 1, "val_every must be >= 1");
}

std::vector<double> timestep_probabilities(std::span<const double> errors, double alpha) {
  detail::require(!errors.empty(), "error table must be non-empty");
  detail::require(alpha > 0.0, "alpha must be > 0");
  double max_log = -std::numeric_limits<double>::infinity();
  for (double e : errors) {
    detail::require(std::isfinite(e) && e > 0.0, "error table entries must be finite and > 0");
    max_log = std::max(max_log, std::log(e));
  }
  std::vector<double> p(errors.size());
  double total = 0.0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    p[i] = std::exp((std::log(errors[i]) - max_log) / alpha);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

int sample_timestep(std::span<const double> errors, double alpha, Rng& rng) {
  const auto p = timestep_probabilities(errors, alpha);
  std::discrete_distribution<int> dist(p.begin(), p.end());
  return dist(rng) + 1;
}

double lr_at(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) return lr0;
  const auto s = std::clamp<std::int64_t>(step, 0, total_steps);
  if (s == total_steps) return 0.0;
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(total_steps)));
}

bool ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& weights,
                std::int64_t step, double momentum, std::int64_t ema_start, std::int64_t ema_every) {
  detail::require(shadow.size() == weights.size(), "EMA shadow and weights differ in count");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    detail::require(shadow[i].sizes() == weights[i].sizes(), "EMA shadow shape mismatch");
  }
  if (step < ema_start || step % ema_every != 0) return false;
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    shadow[i].mul_(momentum).add_(weights[i].detach(), 1.0 - momentum);
  }
  return true;
}

std::string EpochRecord::to_json_line() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["loss"] = loss;
  j["lr"] = lr;
  j["val_mse"] = val_mse ? nlohmann::json(*val_mse) : nlohmann::json(nullptr);
  return j.dump();
}

std::vector<double> stacked_step_mse(IvpModel& model, const std::vector<SequencePair>& pairs,
                                     int batch_size) {
  detail::require(!pairs.empty(), "evaluation set must be non-empty");
  const int t_fut = model->config().t_fut;
  std::vector<double> sums(static_cast<std::size_t>(t_fut), 0.0);
  std::int64_t count = 0;
  torch::NoGradGuard no_grad;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(pairs.size(), start + batch_size); ++i) idx.push_back(i);
    auto batch = make_batch(pairs, idx);
    auto pred = stacked_infer(model, batch.observed, t_fut).frames.to(torch::kFloat64);
    auto target = batch.future.to(torch::kFloat64);
    // Per-sample, per-step MSE summed over the batch.
    auto per = (pred - target).pow(2).mean({2, 3, 4}).sum(0);
    auto acc = per.accessor<double, 1>();
    for (int t = 0; t < t_fut; ++t) sums[static_cast<std::size_t>(t)] += acc[t];
    count += static_cast<std::int64_t>(idx.size());
  }
  for (double& s : sums) s /= static_cast<double>(count);
  return sums;
}

TrainState fit(const std::vector<SequencePair>& train, const std::vector<SequencePair>& val,
               IvpModel& model, const OptimConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  detail::require(!train.empty(), "training set must be non-empty");
  const auto& mcfg = model->config();
  const auto& val_set = val.empty() ? train : val;

  TrainState state;
  state.rng_seed = cfg.seed;
  state.error_table.assign(static_cast<std::size_t>(mcfg.t_fut), 1.0);
  state.ema = IvpModel(mcfg);
  state.ema->to(model->encoder->parameters().front().scalar_type());
  copy_parameters(*state.ema, *model);

  auto order_rng = make_stream(cfg.seed, stream::kOrder);
  auto step_rng = make_stream(cfg.seed, stream::kTimestep);
  auto mask_rng = make_stream(cfg.seed, stream::kMask);

  auto params = model->main_parameters();
  auto shadow = state.ema->main_parameters();
  torch::optim::Adam optimizer(
      params, torch::optim::AdamOptions(cfg.lr0).betas({cfg.beta1, cfg.beta2}));

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  const std::int64_t total_steps = steps_per_epoch * cfg.total_epochs;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  model->train();
  for (int epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_loss = 0.0;
    double lr = cfg.lr0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      auto batch = make_batch(train, idx);
      const int t = sample_timestep(state.error_table, cfg.alpha, step_rng);

      auto loss = train_step(model, batch, t, mask_rng, cfg.queue_training);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite training loss at step " + std::to_string(state.step));
      }
      lr = lr_at(state.step, total_steps, cfg.lr0);
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();

      ++state.step;
      ++model->trained_steps;
      state.step_losses.push_back(value);
      epoch_loss += value;

      // Until averaging starts the shadow tracks the raw weights.
      if (state.step < cfg.ema_start) {
        copy_parameters(*state.ema, *model);
      } else {
        ema_update(shadow, params, state.step, cfg.ema_momentum, cfg.ema_start, cfg.ema_every);
      }
    }
    state.epoch = epoch;

    EpochRecord record;
    record.epoch = epoch;
    record.step = state.step;
    record.loss = epoch_loss / static_cast<double>(steps_per_epoch);
    record.lr = lr;
    if (epoch % cfg.val_every == 0 || epoch == cfg.total_epochs) {
      state.ema->sync_learned_prior();
      state.ema->eval();
      auto errors = stacked_step_mse(state.ema, val_set);
      for (std::size_t i = 0; i < errors.size(); ++i) {
        state.error_table[i] = std::max(errors[i], 1e-12);
      }
      record.val_mse = errors;
    }
    state.log.push_back(record);
    if (on_epoch) on_epoch(record, state);
  }

  model->sync_learned_prior();
  model->lp_finetuned = false;
  state.ema->sync_learned_prior();
  state.ema->trained_steps = model->trained_steps;
  return state;
}

// ---------------------------------------------------------------------------

LpResult finetune_lp(const std::vector<SequencePair>& train, IvpModel& model, const LpConfig& cfg) {
  detail::require(model->trained_steps > 0, "learned prior fine-tuning needs a trained model");
  detail::require(!train.empty(), "fine-tuning set must be non-empty");
  detail::require(cfg.epochs >= 1 && cfg.batch_size >= 1 && cfg.lr > 0.0, "invalid LP config");
  if (!model->lp_finetuned) model->sync_learned_prior();

  const int t_fut = model->config().t_fut;
  auto lp_params = model->lp_parameters();
  torch::optim::Adam optimizer(lp_params, torch::optim::AdamOptions(cfg.lr));
  auto order_rng = make_stream(cfg.seed, stream::kOrder, 1);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  LpResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      auto batch = make_batch(train, idx);
      torch::Tensor predicted, target;
      {
        torch::NoGradGuard no_grad;
        predicted = stacked_infer(model, batch.observed, t_fut).frames;
        target = model->encode_sequence(batch.future.to(predicted.options()));
      }
      const auto b = predicted.size(0);
      auto flat = predicted.reshape({b * t_fut, predicted.size(2), predicted.size(3), predicted.size(4)});
      auto features = model->learned_prior(flat);
      auto loss = torch::mse_loss(features, target.reshape(features.sizes()));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      model->lp_finetuned = true;
      total += loss.item<double>();
      ++batches;
    }
    result.epoch_loss.push_back(total / batches);
  }
  return result;
}

double feature_gap(IvpModel& model, const std::vector<SequencePair>& pairs, int batch_size) {
  detail::require(!pairs.empty(), "evaluation set must be non-empty");
  const int t_fut = model->config().t_fut;
  torch::NoGradGuard no_grad;
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(pairs.size(), start + batch_size); ++i) idx.push_back(i);
    auto batch = make_batch(pairs, idx);
    auto predicted = stacked_infer(model, batch.observed, t_fut).frames;
    const auto b = predicted.size(0);
    auto flat = predicted.reshape({b * t_fut, predicted.size(2), predicted.size(3), predicted.size(4)});
    auto lp = model->learned_prior(flat);
    auto target = model->encode(batch.future.to(predicted.options()).reshape(flat.sizes()));
    sum += (lp - target).pow(2).sum().item<double>();
    count += lp.numel();
  }
  return sum / static_cast<double>(count);
}

}  // namespace ivp
