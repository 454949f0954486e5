#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "ivp/errors.hpp"
#include "ivp/metrics.hpp"

using namespace ivp;

namespace {

// Direct per-window statistics, no summed-area tables.
double brute_ssim(const torch::Tensor& x, const torch::Tensor& y, int win) {
  auto xd = x.to(torch::kFloat64).contiguous();
  auto yd = y.to(torch::kFloat64).contiguous();
  auto a = xd.accessor<double, 3>();
  auto b = yd.accessor<double, 3>();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int ch = 0; ch < x.size(0); ++ch) {
    for (int r = 0; r + win <= x.size(1); ++r) {
      for (int c = 0; c + win <= x.size(2); ++c) {
        const double n = win * win;
        double mx = 0, my = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            mx += a[ch][r + i][c + j];
            my += b[ch][r + i][c + j];
          }
        mx /= n;
        my /= n;
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double dx = a[ch][r + i][c + j] - mx, dy = b[ch][r + i][c + j] - my;
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
          }
        vx /= n;
        vy /= n;
        cov /= n;
        total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / count;
}

torch::Tensor from_bytes(std::initializer_list<double> values, std::int64_t h, std::int64_t w) {
  return torch::tensor(std::vector<double>(values), torch::kFloat64).view({1, h, w});
}

}  // namespace

TEST_CASE("frame errors", "[metrics]") {
  auto zero = torch::zeros({1, 4, 4});
  auto half = torch::full({1, 4, 4}, 0.5);
  auto e = frame_errors(half, zero);
  CHECK(e.mse == 0.25);
  CHECK(e.mae == 0.5);
  CHECK(std::abs(e.psnr - 6.020599913279624) < 1e-12);

  auto same = frame_errors(half, half);
  CHECK(same.mse == 0.0);
  CHECK(std::isinf(same.psnr));

  auto mixed = torch::tensor({0.0, 1.0, 0.25, 0.75}).view({1, 2, 2});
  auto m = frame_errors(mixed, torch::zeros({1, 2, 2}, torch::kFloat64));
  CHECK(std::abs(m.mse - (1.0 + 0.0625 + 0.5625) / 4.0) < 1e-15);
  CHECK(std::abs(m.mae - 0.5) < 1e-15);

  CHECK_THROWS_AS(frame_errors(zero, torch::zeros({1, 4, 5})), ContractError);
}

TEST_CASE("SSIM", "[metrics][ssim]") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(3);
  auto x = torch::rand({2, 8, 8}, gen, torch::kFloat64);
  auto y = torch::rand({2, 8, 8}, gen, torch::kFloat64);

  CHECK(std::abs(ssim(x, x) - 1.0) < 1e-12);
  for (int win : {1, 3, 5, 7, 8}) {
    INFO("window " << win);
    CHECK(std::abs(ssim(x, y, win) - brute_ssim(x, y, win)) < 1e-10);
  }
  CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-14);
  CHECK(ssim(x, 1.0 - x, 3) < 0.0);
  CHECK_THROWS_AS(ssim(x, y, 9), ContractError);
  CHECK_THROWS_AS(ssim(x, y, 0), ContractError);
  CHECK_THROWS_AS(ssim(x.view({2, 1, 8, 8}), y.view({2, 1, 8, 8})), ContractError);

  auto batch_x = torch::stack({x, y});
  auto batch_y = torch::stack({y, y});
  CHECK(std::abs(mean_ssim(batch_x, batch_y, 3) - 0.5 * (ssim(x, y, 3) + 1.0)) < 1e-12);
}

TEST_CASE("CSI contingency cases", "[metrics][csi]") {
  // Byte scale, threshold 127.5.
  const std::array<double, 1> theta{127.5};
  auto obs = from_bytes({255, 255, 0, 0}, 2, 2);

  auto perfect = csi(obs, obs, theta, ValueScale::byte);
  CHECK(perfect.per_threshold[0] == 1.0);

  auto half_hit = from_bytes({255, 0, 0, 0}, 2, 2);
  auto k = csi_counts(half_hit, obs, 127.5, ValueScale::byte);
  CHECK(k.hits == 1);
  CHECK(k.misses == 1);
  CHECK(k.false_alarms == 0);
  CHECK(csi(half_hit, obs, theta, ValueScale::byte).per_threshold[0] == 0.5);

  auto with_false_alarm = from_bytes({255, 255, 255, 0}, 2, 2);
  CHECK(csi(with_false_alarm, obs, theta, ValueScale::byte).mean == 2.0 / 3.0);

  auto disjoint = from_bytes({0, 0, 255, 255}, 2, 2);
  CHECK(csi(disjoint, obs, theta, ValueScale::byte).mean == 0.0);

  auto empty = from_bytes({0, 0, 0, 0}, 2, 2);
  CHECK(csi(empty, empty, theta, ValueScale::byte).mean == 1.0);

  // Pixels at the threshold count as events.
  auto at = from_bytes({127.5, 0, 0, 0}, 2, 2);
  CHECK(csi_counts(at, at, 127.5, ValueScale::byte).hits == 1);

  // Misses and false alarms swap with the arguments.
  auto swapped = csi_counts(obs, half_hit, 127.5, ValueScale::byte);
  CHECK(swapped.false_alarms == 1);
  CHECK(swapped.misses == 0);
}

TEST_CASE("CSI on unit-scaled fields", "[metrics][csi]") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(4);
  auto x = torch::rand({3, 1, 8, 8}, gen, torch::kFloat64);
  auto same = csi(x, x, kCsiThresholds);
  CHECK(same.per_threshold.size() == 6);
  CHECK(same.mean == 1.0);

  auto bytes = csi(x * 255.0, (x * 0.9) * 255.0, kCsiThresholds, ValueScale::byte);
  auto unit = csi(x, x * 0.9, kCsiThresholds);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(bytes.per_threshold[i] - unit.per_threshold[i]) < 1e-12);
  for (double v : unit.per_threshold) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // Shrinking the forecast only turns hits into misses.
  auto less = csi(x * 0.8, x, kCsiThresholds);
  for (std::size_t i = 0; i < 6; ++i) CHECK(less.per_threshold[i] <= unit.per_threshold[i] + 1e-12);
  CHECK_THROWS_AS(csi(x, x, std::span<const double>{}), ContractError);
}

TEST_CASE("metric reports", "[metrics][report]") {
  auto gen = torch::make_generator<at::CPUGeneratorImpl>(5);
  auto target = torch::rand({2, 3, 1, 8, 8}, gen);
  auto pred = target.clone();
  pred.select(1, 2).add_(0.1).clamp_(0.0, 1.0);

  auto report = evaluate_predictions(pred, target);
  for (const char* name : {"mse", "mae", "psnr", "ssim", "csi_m"}) {
    INFO(name);
    REQUIRE(report.per_step.at(name).size() == 3);
  }
  CHECK(report.per_step.at("mse")[0] == 0.0);
  CHECK(std::isinf(report.per_step.at("psnr")[0]));
  CHECK(report.per_step.at("ssim")[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(report.per_step.at("csi_m")[0] == 1.0);
  const double mse2 = (pred.select(1, 2) - target.select(1, 2)).to(torch::kFloat64).pow(2).mean().item<double>();
  CHECK(std::abs(report.per_step.at("mse")[2] - mse2) < 1e-12);
  CHECK(std::abs(report.aggregate.at("mse") - mse2 / 3.0) < 1e-12);
  CHECK(std::isinf(report.aggregate.at("psnr")));

  auto text = report.to_json().dump();
  auto back = MetricReport::from_json(nlohmann::json::parse(text));
  CHECK(std::isinf(back.aggregate.at("psnr")));
  CHECK(back.per_step.at("mse") == report.per_step.at("mse"));
  CHECK(back.per_step.at("ssim") == report.per_step.at("ssim"));

  CHECK_THROWS_AS(MetricReport::from_json(nlohmann::json::parse(R"({"per_step": {"mse": ["big"]}, "aggregate": {}})")),
                  FormatError);
  CHECK_THROWS_AS(MetricReport::from_json(nlohmann::json::parse("{}")), FormatError);
  CHECK_THROWS_AS(evaluate_predictions(pred[0], target[0]), ContractError);
}

TEST_CASE("non-finite JSON numbers", "[metrics][report]") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(number_from_json(number_to_json(inf)) == inf);
  CHECK(number_from_json(number_to_json(-inf)) == -inf);
  CHECK(std::isnan(number_from_json(number_to_json(std::nan("")))));
  CHECK(number_from_json(number_to_json(0.125)) == 0.125);
}
