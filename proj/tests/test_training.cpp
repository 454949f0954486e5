#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ivp/errors.hpp"
#include "ivp/training.hpp"

using namespace ivp;

namespace {

DataConfig tiny_data(int n = 8, std::uint64_t seed = 0) {
  DataConfig d;
  d.num_sequences = n;
  d.height = d.width = 16;
  d.t_obs = d.t_fut = 4;
  d.num_objects = 1;
  d.digit_size = 4;
  d.speed_min = 1;
  d.speed_max = 2;
  d.seed = seed;
  return d;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.height = c.width = 16;
  c.t_obs = c.t_fut = 4;
  c.enc_channels = 8;
  c.pred_channels = 16;
  c.enc_layers = c.dec_layers = 2;
  c.pred_layers = 2;
  c.pred_kernel = 3;
  c.time_embed_dim = 8;
  c.str_hidden = 4;
  c.str_kernel = 3;
  return c;
}

OptimConfig tiny_optim(int epochs) {
  OptimConfig o;
  o.total_epochs = epochs;
  o.batch_size = 4;
  o.val_every = 5;
  o.ema_start = 4;
  o.seed = 3;
  return o;
}

double flat_distance(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).pow(2).sum().item<double>();
  return sum;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

TEST_CASE("timestep sampler probabilities", "[training][sampler]") {
  std::vector<double> uniform{2.0, 2.0, 2.0, 2.0};
  for (double p : timestep_probabilities(uniform, 1.0)) CHECK(p == Catch::Approx(0.25).margin(1e-15));

  std::vector<double> errors{1.0, 2.0, 3.0, 4.0};
  auto p = timestep_probabilities(errors, 1.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(p[i] - errors[i] / 10.0) < 1e-15);

  auto sq = timestep_probabilities(errors, 0.5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(sq[i] - errors[i] * errors[i] / 30.0) < 1e-15);

  auto flat = timestep_probabilities(errors, 1e6);
  for (double v : flat) CHECK(std::abs(v - 0.25) < 1e-5);

  std::vector<double> tiny{1e-300, 1e-300};
  auto t = timestep_probabilities(tiny, 0.01);
  CHECK(std::abs(t[0] - 0.5) < 1e-12);

  std::vector<double> bad{1.0, 0.0};
  CHECK_THROWS_AS(timestep_probabilities(bad, 1.0), ContractError);
  CHECK_THROWS_AS(timestep_probabilities(errors, 0.0), ContractError);
  CHECK_THROWS_AS(timestep_probabilities(std::vector<double>{}, 1.0), ContractError);
}

TEST_CASE("sampled timesteps are 1-based and follow the table", "[training][sampler]") {
  std::vector<double> errors{0.0001, 1.0, 0.0001};
  auto rng = make_stream(0, stream::kTimestep);
  int middle = 0;
  for (int i = 0; i < 2000; ++i) {
    const int t = sample_timestep(errors, 1.0, rng);
    REQUIRE(t >= 1);
    REQUIRE(t <= 3);
    middle += t == 2;
  }
  CHECK(middle > 1990);
}

TEST_CASE("cosine schedule", "[training][schedule]") {
  CHECK(lr_at(0, 100, 1e-3) == 1e-3);
  CHECK(lr_at(100, 100, 1e-3) == 0.0);
  CHECK(lr_at(250, 100, 1e-3) == 0.0);
  CHECK(lr_at(-5, 100, 1e-3) == 1e-3);
  CHECK(std::abs(lr_at(50, 100, 1e-3) - 5e-4) < 1e-15);
  CHECK(std::abs(lr_at(25, 100, 2.0) - (1.0 + std::cos(std::numbers::pi / 4))) < 1e-15);
  for (int s = 1; s <= 100; ++s) CHECK(lr_at(s, 100, 1.0) <= lr_at(s - 1, 100, 1.0));
}

TEST_CASE("EMA update", "[training][ema]") {
  std::vector<torch::Tensor> shadow{torch::zeros({3}, torch::kFloat64)};
  std::vector<torch::Tensor> weights{torch::ones({3}, torch::kFloat64)};

  SECTION("one update") {
    CHECK(ema_update(shadow, weights, 2000, 0.995, 2000, 10));
    CHECK(std::abs(shadow[0][0].item<double>() - 0.005) < 1e-15);
  }
  SECTION("k updates have the closed form 1 - m^k") {
    int applied = 0;
    for (std::int64_t step = 1; step <= 2100; ++step) {
      applied += ema_update(shadow, weights, step, 0.995, 2000, 10);
    }
    CHECK(applied == 11);
    CHECK(std::abs(shadow[0][1].item<double>() - (1.0 - std::pow(0.995, 11))) < 1e-12);
  }
  SECTION("inactive before the start step and off cadence") {
    CHECK_FALSE(ema_update(shadow, weights, 1999, 0.995, 2000, 10));
    CHECK_FALSE(ema_update(shadow, weights, 2005, 0.995, 2000, 10));
    CHECK(shadow[0].abs().sum().item<double>() == 0.0);
  }
  SECTION("shape mismatch") {
    std::vector<torch::Tensor> other{torch::ones({4}, torch::kFloat64)};
    CHECK_THROWS_AS(ema_update(shadow, other, 2000, 0.995, 2000, 10), ContractError);
  }
}

TEST_CASE("optimizer config validation", "[training][config]") {
  OptimConfig o;
  CHECK_NOTHROW(o.validate());
  o.ema_momentum = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = OptimConfig{};
  o.alpha = 0.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = OptimConfig{};
  o.batch_size = 0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
}

TEST_CASE("fit is deterministic and keeps a positive error table", "[training][fit]") {
  auto data = gen_dataset(tiny_data());
  auto cfg = tiny_optim(10);
  auto a = make_model(tiny_model(), 1);
  auto b = make_model(tiny_model(), 1);
  auto sa = fit(data, {}, a, cfg);
  auto sb = fit(data, {}, b, cfg);
  REQUIRE(sa.log.size() == 10);
  for (std::size_t i = 0; i < sa.log.size(); ++i) {
    CHECK(sa.log[i].to_json_line() == sb.log[i].to_json_line());
  }
  CHECK(sa.step_losses == sb.step_losses);
  CHECK(sa.step == 20);
  CHECK(a->trained_steps == 20);
  REQUIRE(sa.error_table.size() == 4);
  for (double e : sa.error_table) CHECK(e > 0.0);
  CHECK(sa.log[4].val_mse.has_value());
  CHECK_FALSE(sa.log[3].val_mse.has_value());
  CHECK(flat_distance(a->main_parameters(), b->main_parameters()) == 0.0);

  auto c = make_model(tiny_model(), 1);
  auto other = cfg;
  other.seed = 4;
  auto sc = fit(data, {}, c, other);
  CHECK(sc.step_losses != sa.step_losses);
}

TEST_CASE("fit leaves the learned prior synced to the encoder", "[training][fit]") {
  auto data = gen_dataset(tiny_data(4));
  auto model = make_model(tiny_model(), 2);
  auto state = fit(data, {}, model, tiny_optim(2));
  auto enc = model->encoder->parameters();
  auto lp = model->lp_parameters();
  REQUIRE(enc.size() == lp.size());
  CHECK(flat_distance(enc, lp) == 0.0);
  CHECK(flat_distance(state.ema->encoder->parameters(), state.ema->lp_parameters()) == 0.0);
}

TEST_CASE("fit tracks raw weights until the EMA starts, then averages them", "[training][ema]") {
  auto data = gen_dataset(tiny_data(4));
  auto model = make_model(tiny_model(), 5);
  auto cfg = tiny_optim(30);
  cfg.val_every = 1000;
  cfg.ema_start = 10;
  cfg.ema_every = 2;
  cfg.ema_momentum = 0.9;
  std::vector<torch::Tensor> prev;
  int checked = 0;
  fit(data, {}, model, cfg, [&](const EpochRecord& record, const TrainState& state) {
    REQUIRE(record.step == state.step);
    auto raw = snapshot(model->main_parameters());
    auto ema = snapshot(state.ema->main_parameters());
    if (record.step < 10) {
      CHECK(flat_distance(raw, ema) == 0.0);
    } else if (record.step % 2 == 0) {
      double err = 0.0;
      for (std::size_t i = 0; i < raw.size(); ++i) {
        err = std::max(err, (ema[i] - (0.9 * prev[i] + 0.1 * raw[i])).abs().max().item<double>());
      }
      CHECK(err < 1e-6);
      CHECK(flat_distance(raw, ema) > 0.0);
      ++checked;
    } else {
      CHECK(flat_distance(ema, prev) == 0.0);
    }
    prev = std::move(ema);
  });
  CHECK(checked == 11);
}

TEST_CASE("learned-prior fine-tuning", "[training][lp]") {
  auto data = gen_dataset(tiny_data(4));
  auto model = make_model(tiny_model(), 6);
  LpConfig lp;
  lp.epochs = 1;
  lp.batch_size = 4;
  CHECK_THROWS_AS(finetune_lp(data, model, lp), ContractError);

  fit(data, {}, model, tiny_optim(5));
  auto before = snapshot(model->main_parameters());

  SECTION("the first loss is the gap of the encoder itself") {
    torch::Tensor expected;
    {
      torch::NoGradGuard no_grad;
      auto batch = make_batch(data);
      auto pred = stacked_infer(model, batch.observed, 4).frames.reshape({16, 1, 16, 16});
      expected = torch::mse_loss(model->encode(pred), model->encode(batch.future.reshape({16, 1, 16, 16})));
    }
    auto result = finetune_lp(data, model, lp);
    REQUIRE(result.epoch_loss.size() == 1);
    CHECK(std::abs(result.epoch_loss[0] - expected.item<double>()) < 1e-6 * (1.0 + expected.item<double>()));
    CHECK(model->lp_finetuned);
  }
  SECTION("only the learned prior changes and its loss falls") {
    lp.epochs = 30;
    lp.lr = 2e-3;
    auto result = finetune_lp(data, model, lp);
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());
    auto after = model->main_parameters();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
    CHECK(flat_distance(model->encoder->parameters(), model->lp_parameters()) > 0.0);
  }
}

TEST_CASE("stacked step MSE has one positive entry per step", "[training][eval]") {
  auto data = gen_dataset(tiny_data(3));
  auto model = make_model(tiny_model(), 7);
  auto errors = stacked_step_mse(model, data, 2);
  REQUIRE(errors.size() == 4);
  for (double e : errors) CHECK(e > 0.0);
  CHECK_THROWS_AS(stacked_step_mse(model, {}, 2), ContractError);
}
