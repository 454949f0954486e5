#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ivp/errors.hpp"
#include "ivp/model.hpp"
#include "ivp/queue.hpp"
#include "ivp/rng.hpp"

using namespace ivp;
using Catch::Matchers::WithinAbs;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.height = c.width = 16;
  c.t_obs = 4;
  c.t_fut = 4;
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

torch::Tensor steps(double t, std::int64_t b = 1) { return torch::full({b}, t, torch::kFloat64); }

}  // namespace

TEST_CASE("sinusoidal encoding at t = 0", "[model][time]") {
  auto raw = sinusoidal_encode(0.0, 16);
  REQUIRE(raw.size() == 16);
  for (std::size_t i = 0; i < raw.size(); i += 2) {
    CHECK(raw[i] == 0.0);
    CHECK(raw[i + 1] == 1.0);
  }
}

TEST_CASE("sinusoidal encoding closed form", "[model][time]") {
  auto raw = sinusoidal_encode(std::numbers::pi / 2, 8);
  CHECK_THAT(raw[0], WithinAbs(1.0, 1e-15));
  CHECK_THAT(raw[1], WithinAbs(0.0, 1e-15));
  const double t = 3.7;
  auto v = sinusoidal_encode(t, 8);
  for (int i = 0; i < 4; ++i) {
    const double div = std::pow(10000.0, 2.0 * i / 8);
    CHECK_THAT(v[2 * i], WithinAbs(std::sin(t / div), 1e-14));
    CHECK_THAT(v[2 * i + 1], WithinAbs(std::cos(t / div), 1e-14));
  }
}

TEST_CASE("fractional steps encode to finite bounded values", "[model][time]") {
  for (double v : sinusoidal_encode(2.5, 64)) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("odd encoding width and negative steps are rejected", "[model][time]") {
  CHECK_THROWS_AS(sinusoidal_encode(1.0, 7), ConfigError);
  CHECK_THROWS_AS(sinusoidal_encode(-1.0, 8), ContractError);
  CHECK_THROWS_AS(sinusoidal_encode(torch::tensor({1.0}), 5), ConfigError);
}

TEST_CASE("batched encoding matches the scalar form", "[model][time]") {
  auto batch = sinusoidal_encode(torch::tensor({0.0, 1.5, 7.0}, torch::kFloat64), 10);
  REQUIRE(batch.sizes() == torch::IntArrayRef({3, 10}));
  const double ts[] = {0.0, 1.5, 7.0};
  for (int b = 0; b < 3; ++b) {
    auto ref = sinusoidal_encode(ts[b], 10);
    for (int i = 0; i < 10; ++i) CHECK(batch[b][i].item<double>() == ref[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("time projection shape, zero map and step sensitivity", "[model][time]") {
  auto cfg = small_config();
  cfg.time_embed_dim = 64;
  auto model = make_model(cfg, 1);
  auto raw = model->time_encoding(torch::tensor({1.0, 5.0}, torch::kFloat64));
  auto projected = model->time_project(raw);
  CHECK(projected.sizes() == torch::IntArrayRef({2, cfg.pred_channels}));
  CHECK((projected[0] - projected[1]).abs().max().item<double>() > 0.0);

  TimeMlp mlp(64, 16);
  {
    torch::NoGradGuard no_grad;
    for (auto& p : mlp->parameters()) p.zero_();
  }
  CHECK(mlp->forward(raw).abs().max().item<double>() == 0.0);
}

TEST_CASE("per-layer time projections are separate modules", "[model][time]") {
  auto cfg = small_config();
  cfg.per_layer_time_mlp = true;
  auto model = make_model(cfg, 1);
  CHECK(model->predictor->time_mlps.size() == static_cast<std::size_t>(cfg.pred_layers));
  auto raw = model->time_encoding(steps(2.0));
  CHECK_FALSE(torch::equal(model->time_project(raw, 0), model->time_project(raw, 1)));
}

TEST_CASE("encoder and decoder shapes at desk scale", "[model][shape]") {
  ModelConfig cfg;  // 1x32x32, C_f = 64, four layers with two strided stages
  auto model = make_model(cfg, 2);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({3, 1, 32, 32});
  auto f = model->encode(x);
  CHECK(f.sizes() == torch::IntArrayRef({3, 64, 8, 8}));
  CHECK(torch::equal(model->encode(x), f));
  CHECK(model->decode(f).sizes() == x.sizes());
  CHECK(model->predictor->in_proj->options.in_channels() == 1280);
}

TEST_CASE("baseline block style keeps the shapes", "[model][shape]") {
  auto cfg = small_config();
  cfg.block_style = BlockStyle::baseline;
  auto model = make_model(cfg, 3);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 1, 16, 16});
  auto f = model->encode(x);
  CHECK(f.sizes() == torch::IntArrayRef({2, 8, 8, 8}));
  CHECK(model->decode(f).sizes() == x.sizes());
  CHECK(block_style_from_string(to_string(BlockStyle::baseline)) == BlockStyle::baseline);
  CHECK_THROWS_AS(block_style_from_string("fancy"), ConfigError);
}

TEST_CASE("sub-pixel stage maps 4k channels to k channels at twice the size", "[model][shape]") {
  DecoderBlock block(8, true, BlockStyle::improved);
  torch::NoGradGuard no_grad;
  auto y = block->forward(torch::rand({1, 8, 8, 8}));
  CHECK(y.sizes() == torch::IntArrayRef({1, 8, 16, 16}));
  auto direct = torch::pixel_shuffle(torch::arange(16.0).view({1, 4, 2, 2}), 2);
  CHECK(direct.sizes() == torch::IntArrayRef({1, 1, 4, 4}));
  CHECK(direct[0][0][0][1].item<double>() == 4.0);
}

TEST_CASE("predictor consumes the channel-stacked queues", "[model][predictor]") {
  auto cfg = small_config();
  auto model = make_model(cfg, 4);
  torch::NoGradGuard no_grad;
  auto q_obs = model->observe(torch::rand({2, 4, 1, 16, 16}));
  auto q_fut = model->empty_future_queue(2);
  auto out = model->predict_features(q_obs, q_fut, steps(1, 2));
  CHECK(out.sizes() == torch::IntArrayRef({2, 8, 8, 8}));
  CHECK(torch::equal(out, model->predict_features(q_obs, q_fut, steps(1, 2))));
  auto later = model->predict_features(q_obs, q_fut, steps(5, 2));
  CHECK((later - out).abs().max().item<double>() > 1e-8);
}

TEST_CASE("wrong queue lengths are contract errors", "[model][predictor]") {
  auto cfg = small_config();
  auto model = make_model(cfg, 4);
  torch::NoGradGuard no_grad;
  auto q_obs = model->observe(torch::rand({1, 4, 1, 16, 16}));
  FeatureQueue short_queue(1, 3, 8, 8, 8);
  CHECK_THROWS_AS(model->predict_features(q_obs, short_queue, steps(1)), ContractError);
  CHECK_THROWS_AS(model->encode(torch::rand({1, 1, 8, 8})), ContractError);
  CHECK_THROWS_AS(model->decode(torch::rand({1, 8, 4, 4})), ContractError);
}

TEST_CASE("refinement is the identity at initialization", "[model][str]") {
  auto cfg = small_config();
  auto model = make_model(cfg, 5);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({3, 1, 16, 16});
  auto y = model->refine(x);
  CHECK(y.sizes() == x.sizes());
  CHECK(torch::equal(y, x));
  cfg.str_enabled = false;
  auto plain = make_model(cfg, 5);
  CHECK(plain->refiner.is_empty());
  CHECK(count_parameters(*plain) < count_parameters(*model));
}

TEST_CASE("learned prior starts as an exact copy of the encoder", "[model][lp]") {
  auto model = make_model(small_config(), 6);
  torch::NoGradGuard no_grad;
  auto y = torch::rand({2, 1, 16, 16});
  CHECK(model->learned_prior(y).sizes() == model->encode(y).sizes());
  CHECK(torch::equal(model->learned_prior(y), model->encode(y)));
  for (auto& p : model->prior->parameters()) p.add_(0.01);
  CHECK_FALSE(torch::equal(model->learned_prior(y), model->encode(y)));
  model->sync_learned_prior();
  CHECK(torch::equal(model->learned_prior(y), model->encode(y)));
}

TEST_CASE("forward is single-output for integer, fractional and empty-queue steps", "[model][forward]") {
  auto cfg = small_config();
  auto model = make_model(cfg, 7);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({2, 4, 1, 16, 16});
  auto q = model->empty_future_queue(2);
  for (double t : {1.0, 2.0, 2.5, 4.0}) {
    auto y = model->forward(x, q, steps(t, 2));
    CHECK(y.sizes() == torch::IntArrayRef({2, 1, 16, 16}));
    CHECK(torch::isfinite(y).all().item<bool>());
  }
  CHECK_FALSE(torch::equal(model->forward(x, q, steps(1, 2)), model->forward(x, q, steps(3, 2))));
}

TEST_CASE("masking a slot and invalidating it give identical inputs", "[model][forward]") {
  auto cfg = small_config();
  auto model = make_model(cfg, 8);
  torch::NoGradGuard no_grad;
  auto x = torch::rand({1, 4, 1, 16, 16});
  auto full = FeatureQueue::from_features(model->encode_sequence(torch::rand({1, 4, 1, 16, 16})));
  auto invalidated = full;
  invalidated.invalidate(2);
  auto multiplied = FeatureQueue::from_features(
      full.features() * torch::tensor({1.0f, 1.0f, 0.0f, 1.0f}).view({1, 4, 1, 1, 1}));
  CHECK(torch::equal(invalidated.features(), multiplied.features()));
  CHECK(torch::equal(model->forward(x, invalidated, steps(4)), model->forward(x, multiplied, steps(4))));
}

TEST_CASE("main and learned-prior parameter sets partition the model", "[model]") {
  auto model = make_model(small_config(), 9);
  std::int64_t main = 0, lp = 0;
  for (auto& p : model->main_parameters()) main += p.numel();
  for (auto& p : model->lp_parameters()) lp += p.numel();
  CHECK(main + lp == count_parameters(*model));
  CHECK(lp == count_parameters(*model->encoder));
}

TEST_CASE("same seed gives the same weights", "[model]") {
  auto a = make_model(small_config(), 10);
  auto b = make_model(small_config(), 10);
  auto c = make_model(small_config(), 11);
  auto pa = a->parameters(), pb = b->parameters(), pc = c->parameters();
  bool same = true, differ = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    same &= torch::equal(pa[i], pb[i]);
    differ |= !torch::equal(pa[i], pc[i]);
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("invalid model configurations are rejected", "[model]") {
  auto cfg = small_config();
  cfg.time_embed_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.height = 15;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.enc_layers = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.pred_kernel = 4;
  CHECK_THROWS_AS(IvpModel(cfg), ConfigError);
}

TEST_CASE("autodiff matches central differences on a micro model", "[model][grad]") {
  ModelConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.t_obs = cfg.t_fut = 2;
  cfg.enc_channels = 4;
  cfg.pred_channels = 8;
  cfg.enc_layers = cfg.dec_layers = 2;
  cfg.pred_layers = 1;
  cfg.pred_kernel = 3;
  cfg.time_embed_dim = 4;
  cfg.str_hidden = 2;
  cfg.str_blocks = 1;
  cfg.str_kernel = 3;
  auto model = make_model(cfg, 12);
  model->to(torch::kFloat64);
  {
    torch::NoGradGuard no_grad;
    model->refiner->out->weight.normal_(0.0, 0.1);
  }
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(1);
  auto x = torch::rand({1, 2, 1, 8, 8}, gen, torch::kFloat64);
  auto y = torch::rand({1, 1, 8, 8}, gen, torch::kFloat64);
  auto q = FeatureQueue::from_features(model->encode_sequence(torch::rand({1, 2, 1, 8, 8}, gen, torch::kFloat64)).detach());
  auto loss = [&]() { return torch::mse_loss(model->forward(x, q, steps(2)), y); };
  auto params = model->main_parameters();
  loss().backward();
  auto rng = make_stream(1, stream::kPerturb);
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
    auto& p = params[which(rng)];
    std::uniform_int_distribution<std::int64_t> at(0, p.numel() - 1);
    const auto i = at(rng);
    auto flat = p.view({-1});
    const double orig = flat[i].item<double>();
    flat[i] = orig + 1e-4;
    const double up = loss().item<double>();
    flat[i] = orig - 1e-4;
    const double down = loss().item<double>();
    flat[i] = orig;
    const double numeric = (up - down) / 2e-4;
    const double analytic = p.grad().view({-1})[i].item<double>();
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
  }
  CHECK(worst < 1e-3);
}
