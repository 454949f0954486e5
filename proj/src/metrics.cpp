#include "ivp/metrics.hpp"

#include <cmath>
#include <limits>

#include "ivp/errors.hpp"

namespace ivp {

namespace {

torch::Tensor as_double(const torch::Tensor& t) {
  return t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  detail::require(a.defined() && b.defined() && a.sizes() == b.sizes(),
                  "prediction and target shapes differ");
}

}  // namespace

FrameErrors frame_errors(const torch::Tensor& pred, const torch::Tensor& target) {
  check_same_shape(pred, target);
  detail::require(pred.numel() > 0, "empty frames");
  auto diff = as_double(pred) - as_double(target);
  FrameErrors e;
  e.mse = diff.pow(2).mean().item<double>();
  e.mae = diff.abs().mean().item<double>();
  e.psnr = e.mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / e.mse);
  return e;
}

double ssim(const torch::Tensor& pred, const torch::Tensor& target, int window, double k1, double k2) {
  check_same_shape(pred, target);
  detail::require(pred.dim() == 3, "ssim expects [C, H, W]");
  const auto channels = pred.size(0), h = pred.size(1), w = pred.size(2);
  detail::require(window >= 1 && window <= h && window <= w, "ssim window larger than image");
  const double c1 = (k1 * 1.0) * (k1 * 1.0);
  const double c2 = (k2 * 1.0) * (k2 * 1.0);
  auto x = as_double(pred);
  auto y = as_double(target);
  const double* px = x.data_ptr<double>();
  const double* py = y.data_ptr<double>();

  // Summed-area tables with a zero border row/column.
  const auto sw = w + 1;
  std::vector<double> sx((h + 1) * sw), sy(sx.size()), sxx(sx.size()), syy(sx.size()), sxy(sx.size());
  auto box = [&](const std::vector<double>& s, std::int64_t r, std::int64_t c) {
    return s[(r + window) * sw + (c + window)] - s[r * sw + (c + window)] -
           s[(r + window) * sw + c] + s[r * sw + c];
  };
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t ch = 0; ch < channels; ++ch) {
    const double* cx = px + ch * h * w;
    const double* cy = py + ch * h * w;
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        const auto i = (r + 1) * sw + (c + 1);
        const auto up = r * sw + (c + 1), left = (r + 1) * sw + c, diag = r * sw + c;
        const double vx = cx[r * w + c], vy = cy[r * w + c];
        sx[i] = vx + sx[up] + sx[left] - sx[diag];
        sy[i] = vy + sy[up] + sy[left] - sy[diag];
        sxx[i] = vx * vx + sxx[up] + sxx[left] - sxx[diag];
        syy[i] = vy * vy + syy[up] + syy[left] - syy[diag];
        sxy[i] = vx * vy + sxy[up] + sxy[left] - sxy[diag];
      }
    }
    for (std::int64_t r = 0; r + window <= h; ++r) {
      for (std::int64_t c = 0; c + window <= w; ++c) {
        const double mx = box(sx, r, c) / n, my = box(sy, r, c) / n;
        const double vx = box(sxx, r, c) / n - mx * mx;
        const double vy = box(syy, r, c) / n - my * my;
        const double cov = box(sxy, r, c) / n - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double mean_ssim(const torch::Tensor& pred, const torch::Tensor& target, int window) {
  check_same_shape(pred, target);
  detail::require(pred.dim() >= 3, "mean_ssim expects [..., C, H, W]");
  const auto c = pred.size(-3), h = pred.size(-2), w = pred.size(-1);
  auto p = pred.reshape({-1, c, h, w});
  auto t = target.reshape({-1, c, h, w});
  double total = 0.0;
  for (std::int64_t i = 0; i < p.size(0); ++i) total += ssim(p[i], t[i], window);
  return total / static_cast<double>(p.size(0));
}

CsiCounts csi_counts(const torch::Tensor& pred, const torch::Tensor& target, double threshold,
                     ValueScale scale) {
  check_same_shape(pred, target);
  const double theta = scale == ValueScale::unit ? threshold / 255.0 : threshold;
  auto p = as_double(pred) >= theta;
  auto o = as_double(target) >= theta;
  CsiCounts counts;
  counts.hits = (p & o).sum().item<std::int64_t>();
  counts.misses = (o & p.logical_not()).sum().item<std::int64_t>();
  counts.false_alarms = (p & o.logical_not()).sum().item<std::int64_t>();
  return counts;
}

CsiResult csi(const torch::Tensor& pred, const torch::Tensor& target, std::span<const double> thresholds,
              ValueScale scale) {
  detail::require(!thresholds.empty(), "CSI needs at least one threshold");
  CsiResult result;
  for (double theta : thresholds) {
    const auto k = csi_counts(pred, target, theta, scale);
    const auto denom = k.hits + k.misses + k.false_alarms;
    result.per_threshold.push_back(denom == 0 ? 1.0 : static_cast<double>(k.hits) / denom);
  }
  double sum = 0.0;
  for (double v : result.per_threshold) sum += v;
  result.mean = sum / static_cast<double>(result.per_threshold.size());
  return result;
}

nlohmann::json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw FormatError("bad numeric value '" + s + "'");
  }
  return j.get<double>();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["per_step"] = nlohmann::json::object();
  for (const auto& [name, values] : per_step) {
    auto arr = nlohmann::json::array();
    for (double v : values) arr.push_back(number_to_json(v));
    j["per_step"][name] = arr;
  }
  j["aggregate"] = nlohmann::json::object();
  for (const auto& [name, v] : aggregate) j["aggregate"][name] = number_to_json(v);
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    for (const auto& item : j.at("per_step").items()) {
      std::vector<double> values;
      for (const auto& v : item.value()) values.push_back(number_from_json(v));
      r.per_step[item.key()] = std::move(values);
    }
    for (const auto& item : j.at("aggregate").items()) {
      r.aggregate[item.key()] = number_from_json(item.value());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metric report: ") + e.what());
  }
  return r;
}

void MetricReport::finalize() {
  aggregate.clear();
  for (const auto& [name, values] : per_step) {
    double sum = 0.0;
    for (double v : values) sum += v;
    aggregate[name] = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  }
}

MetricReport evaluate_predictions(const torch::Tensor& pred, const torch::Tensor& target) {
  check_same_shape(pred, target);
  detail::require(pred.dim() == 5, "predictions must be [B, steps, C, H, W]");
  const auto steps = pred.size(1);
  const auto window = static_cast<int>(std::min<std::int64_t>({7, pred.size(3), pred.size(4)}));
  MetricReport report;
  for (std::int64_t s = 0; s < steps; ++s) {
    auto p = pred.select(1, s);
    auto t = target.select(1, s);
    double mse = 0.0, mae = 0.0, psnr = 0.0;
    for (std::int64_t b = 0; b < p.size(0); ++b) {
      const auto e = frame_errors(p[b], t[b]);
      mse += e.mse;
      mae += e.mae;
      psnr += e.psnr;
    }
    const double n = static_cast<double>(p.size(0));
    report.per_step["mse"].push_back(mse / n);
    report.per_step["mae"].push_back(mae / n);
    report.per_step["psnr"].push_back(psnr / n);
    report.per_step["ssim"].push_back(mean_ssim(p, t, window));
    report.per_step["csi_m"].push_back(csi(p, t, kCsiThresholds).mean);
  }
  report.finalize();
  return report;
}

}  // namespace ivp
