#include "ivp/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "ivp/errors.hpp"
#include "ivp/rng.hpp"
#include "ivp/training.hpp"

namespace ivp {

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::mimo: return "mimo";
    case StrategyKind::miso_autoregressive: return "miso_autoregressive";
    case StrategyKind::miso_multi: return "miso_multi";
    case StrategyKind::stacked_ar: return "stacked_ar";
  }
  return "stacked_ar";
}

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "mimo") return StrategyKind::mimo;
  if (name == "miso_autoregressive") return StrategyKind::miso_autoregressive;
  if (name == "miso_multi") return StrategyKind::miso_multi;
  if (name == "stacked_ar") return StrategyKind::stacked_ar;
  throw ConfigError("unknown strategy '" + name + "'");
}

BackboneNetImpl::BackboneNetImpl(const ModelConfig& cfg, int in_frames, int out_frames)
    : cfg_(cfg), in_frames_(in_frames), out_frames_(out_frames) {
  cfg_.validate();
  encoder = register_module("encoder", Encoder(cfg_));
  predictor = register_module(
      "predictor", Predictor(static_cast<std::int64_t>(in_frames) * cfg_.enc_channels,
                             cfg_.enc_channels, cfg_, false));
  decoder = register_module("decoder", Decoder(cfg_, static_cast<std::int64_t>(out_frames) * cfg_.in_channels));
  if (cfg_.str_enabled) refiner = register_module("refiner", Refiner(cfg_));
}

torch::Tensor BackboneNetImpl::forward(const torch::Tensor& frames) {
  detail::require(frames.dim() == 5 && frames.size(1) == in_frames_ &&
                      frames.size(2) == cfg_.in_channels && frames.size(3) == cfg_.height &&
                      frames.size(4) == cfg_.width,
                  "backbone input must be [B, in_frames, C, H, W]");
  const auto b = frames.size(0);
  auto f = encoder(frames.reshape({b * in_frames_, cfg_.in_channels, cfg_.height, cfg_.width}));
  auto stacked = f.reshape({b, in_frames_ * f.size(1), f.size(2), f.size(3)});
  auto out = decoder(predictor(stacked));
  auto per_frame = out.reshape({b * out_frames_, cfg_.in_channels, cfg_.height, cfg_.width});
  if (cfg_.str_enabled) per_frame = refiner(per_frame);
  return per_frame.reshape({b, out_frames_, cfg_.in_channels, cfg_.height, cfg_.width});
}

std::int64_t backbone_parameter_count(const Encoder& encoder, const Predictor& predictor,
                                      const Decoder& decoder, const Refiner& refiner) {
  std::int64_t n = count_parameters(*encoder) + count_parameters(*predictor->blocks) +
                   count_parameters(*predictor->out_proj) + count_parameters(*decoder->blocks);
  if (!refiner.is_empty()) n += count_parameters(*refiner);
  return n;
}

std::string StrategyResult::budget_label() const {
  return models == 1 ? std::to_string(epochs_per_model)
                     : std::to_string(epochs_per_model) + "*" + std::to_string(models);
}

namespace {

constexpr std::uint64_t kStrategyOffset = 1000;

std::uint64_t model_index(StrategyKind kind, int i) {
  return (static_cast<std::uint64_t>(kind) + 1) * kStrategyOffset + static_cast<std::uint64_t>(i);
}

/// Adam + cosine loop shared by the backbone strategies. `loss_fn` maps a
/// batch (and a per-step rng) to a scalar loss.
template <typename LossFn>
void train_backbone(BackboneNet& net, const std::vector<SequencePair>& train,
                    const StrategyBudget& budget, std::uint64_t seed, std::uint64_t index,
                    LossFn&& loss_fn) {
  auto order_rng = make_stream(seed, stream::kOrder, index);
  auto aux_rng = make_stream(seed, stream::kTimestep, index);
  torch::optim::Adam optimizer(net->parameters(),
                               torch::optim::AdamOptions(budget.lr0).betas({0.9, 0.999}));
  const auto bs = static_cast<std::size_t>(budget.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((train.size() + bs - 1) / bs);
  const std::int64_t total = per_epoch * budget.epochs;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;
  net->train();
  for (int epoch = 0; epoch < budget.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      auto batch = make_batch(train, idx);
      auto loss = loss_fn(batch, aux_rng);
      if (!std::isfinite(loss.template item<double>())) {
        throw DivergenceError("non-finite loss in strategy training");
      }
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr_at(step, total, budget.lr0));
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      ++step;
    }
  }
  net->eval();
}

/// Per-step MSE for predictions produced batch-by-batch by `predict`.
template <typename PredictFn>
std::vector<double> per_step_mse(const std::vector<SequencePair>& test, int t_fut, PredictFn&& predict) {
  std::vector<double> sums(static_cast<std::size_t>(t_fut), 0.0);
  std::size_t count = 0;
  torch::NoGradGuard no_grad;
  for (std::size_t start = 0; start < test.size(); start += 16) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(test.size(), start + 16); ++i) idx.push_back(i);
    auto batch = make_batch(test, idx);
    auto pred = predict(batch.observed).to(torch::kFloat64);
    auto per = (pred - batch.future.to(torch::kFloat64)).pow(2).mean({2, 3, 4}).sum(0);
    for (int t = 0; t < t_fut; ++t) sums[static_cast<std::size_t>(t)] += per[t].template item<double>();
    count += idx.size();
  }
  for (double& s : sums) s /= static_cast<double>(count);
  return sums;
}

BackboneNet make_backbone(const ModelConfig& cfg, int in_frames, int out_frames, std::uint64_t seed,
                          std::uint64_t index) {
  torch::manual_seed(torch_seed(seed, index));
  return BackboneNet(cfg, in_frames, out_frames);
}

}  // namespace

StrategyResult run_strategy(StrategyKind kind, const std::vector<SequencePair>& train,
                            const std::vector<SequencePair>& test, const ModelConfig& cfg,
                            const StrategyBudget& budget, std::uint64_t seed,
                            const std::vector<int>& multi_order) {
  detail::require(budget.epochs >= 1, "strategy budget must be at least one epoch");
  detail::require(budget.batch_size >= 1 && budget.lr0 > 0.0, "invalid strategy budget");
  detail::require(!train.empty() && !test.empty(), "strategy runs need train and test data");
  cfg.validate();
  const int t_obs = cfg.t_obs, t_fut = cfg.t_fut;

  StrategyResult result;
  result.kind = kind;
  result.epochs_per_model = budget.epochs;

  switch (kind) {
    case StrategyKind::mimo: {
      auto net = make_backbone(cfg, t_obs, t_fut, seed, model_index(kind, 0));
      train_backbone(net, train, budget, seed, model_index(kind, 0),
                     [&](const Batch& b, Rng&) { return torch::mse_loss(net(b.observed), b.future); });
      result.per_step_mse = per_step_mse(test, t_fut, [&](const torch::Tensor& x) { return net(x); });
      result.single_params = count_parameters(*net);
      result.backbone_params =
          backbone_parameter_count(net->encoder, net->predictor, net->decoder, net->refiner);
      break;
    }
    case StrategyKind::miso_autoregressive: {
      auto net = make_backbone(cfg, t_obs, 1, seed, model_index(kind, 0));
      // Teacher-forced one-step training on every length-t_obs window of the
      // full (observed + future) sequence.
      train_backbone(net, train, budget, seed, model_index(kind, 0), [&](const Batch& b, Rng& rng) {
        auto full = torch::cat({b.observed, b.future}, 1);
        std::uniform_int_distribution<int> offset(0, t_fut - 1);
        const int s = offset(rng);
        auto input = full.slice(1, s, s + t_obs);
        auto target = full.slice(1, s + t_obs, s + t_obs + 1);
        return torch::mse_loss(net(input), target);
      });
      result.per_step_mse = per_step_mse(test, t_fut, [&](const torch::Tensor& x) {
        auto window = x;
        std::vector<torch::Tensor> out;
        for (int t = 0; t < t_fut; ++t) {
          auto next = net(window);  // [B, 1, C, H, W]
          out.push_back(next);
          window = torch::cat({window.slice(1, 1), next}, 1);  // FIFO
        }
        return torch::cat(out, 1);
      });
      result.single_params = count_parameters(*net);
      result.backbone_params =
          backbone_parameter_count(net->encoder, net->predictor, net->decoder, net->refiner);
      break;
    }
    case StrategyKind::miso_multi: {
      std::vector<int> order = multi_order;
      if (order.empty()) {
        order.resize(static_cast<std::size_t>(t_fut));
        std::iota(order.begin(), order.end(), 0);
      }
      auto sorted = order;
      std::sort(sorted.begin(), sorted.end());
      std::vector<int> expected(static_cast<std::size_t>(t_fut));
      std::iota(expected.begin(), expected.end(), 0);
      detail::require(sorted == expected, "multi_order must be a permutation of 0..t_fut-1");

      std::vector<BackboneNet> nets(static_cast<std::size_t>(t_fut), BackboneNet(nullptr));
      for (int i : order) {
        auto net = make_backbone(cfg, t_obs, 1, seed, model_index(kind, i));
        train_backbone(net, train, budget, seed, model_index(kind, i), [&](const Batch& b, Rng&) {
          return torch::mse_loss(net(b.observed), b.future.slice(1, i, i + 1));
        });
        nets[static_cast<std::size_t>(i)] = net;
      }
      result.per_step_mse = per_step_mse(test, t_fut, [&](const torch::Tensor& x) {
        std::vector<torch::Tensor> out;
        for (auto& net : nets) out.push_back(net(x));
        return torch::cat(out, 1);
      });
      result.models = t_fut;
      result.single_params = count_parameters(*nets.front());
      result.backbone_params = backbone_parameter_count(nets.front()->encoder, nets.front()->predictor,
                                                        nets.front()->decoder, nets.front()->refiner);
      break;
    }
    case StrategyKind::stacked_ar: {
      auto model = make_model(cfg, torch_seed(seed, model_index(kind, 0)));
      OptimConfig optim;
      optim.lr0 = budget.lr0;
      optim.batch_size = budget.batch_size;
      optim.total_epochs = budget.epochs;
      optim.seed = seed ^ model_index(kind, 0);
      // No weight averaging here: every strategy is compared on raw weights.
      optim.ema_start = std::numeric_limits<std::int64_t>::max();
      optim.val_every = std::max(1, budget.epochs / 4);
      auto state = fit(train, {}, model, optim);
      model->eval();
      result.per_step_mse = stacked_step_mse(model, test);
      result.single_params = count_parameters(*model);
      result.backbone_params =
          backbone_parameter_count(model->encoder, model->predictor, model->decoder, model->refiner);
      break;
    }
  }
  result.params = result.single_params * result.models;
  result.mean_mse = std::accumulate(result.per_step_mse.begin(), result.per_step_mse.end(), 0.0) /
                    static_cast<double>(result.per_step_mse.size());
  return result;
}

std::string ComparisonTable::to_text() const {
  std::ostringstream out;
  std::size_t steps = 0;
  for (const auto& r : rows) steps = std::max(steps, r.per_step_mse.size());
  out << "strategy\tparams\tbudget";
  for (std::size_t i = 1; i <= steps; ++i) out << "\tstep_" << i;
  out << "\tmean\n";
  out.precision(6);
  for (const auto& r : rows) {
    out << to_string(r.kind) << '\t' << r.params << '\t' << r.budget_label();
    for (double v : r.per_step_mse) out << '\t' << v;
    out << '\t' << r.mean_mse << '\n';
  }
  return out.str();
}

nlohmann::json ComparisonTable::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"strategy", to_string(r.kind)},
                   {"params", r.params},
                   {"single_params", r.single_params},
                   {"backbone_params", r.backbone_params},
                   {"models", r.models},
                   {"budget", r.budget_label()},
                   {"per_step_mse", r.per_step_mse},
                   {"mean_mse", r.mean_mse}});
  }
  return {{"rows", arr}};
}

ComparisonTable emit_comparison_table(const std::vector<StrategyResult>& results) {
  detail::require(!results.empty(), "comparison needs at least one strategy result");
  return ComparisonTable{results};
}

}  // namespace ivp
