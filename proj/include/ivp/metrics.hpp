#pragma once

// Forecast verification metrics: MSE, MAE, PSNR, SSIM and thresholded CSI.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ivp {

struct FrameErrors {
  double mse = 0.0;
  double mae = 0.0;
  double psnr = 0.0;  ///< +infinity when mse == 0
};

/// Values are expected in [0, 1]; PSNR uses a peak of 1.
FrameErrors frame_errors(const torch::Tensor& pred, const torch::Tensor& target);

/// Windowed SSIM with a uniform `window` x `window` kernel over valid
/// positions, dynamic range 1, population statistics; mean over windows and
/// channels. Inputs are [C, H, W].
double ssim(const torch::Tensor& pred, const torch::Tensor& target, int window = 7,
            double k1 = 0.01, double k2 = 0.03);

/// Mean SSIM over every leading index of [..., C, H, W] inputs.
double mean_ssim(const torch::Tensor& pred, const torch::Tensor& target, int window = 7);

inline constexpr std::array<double, 6> kCsiThresholds{16, 74, 133, 160, 181, 219};

enum class ValueScale {
  unit,  ///< values in [0, 1]; thresholds given on 0..255 are divided by 255
  byte,  ///< values on 0..255
};

struct CsiCounts {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t false_alarms = 0;
};

/// Binarize both fields at >= threshold and count contingency cells.
CsiCounts csi_counts(const torch::Tensor& pred, const torch::Tensor& target, double threshold,
                     ValueScale scale = ValueScale::unit);

struct CsiResult {
  std::vector<double> per_threshold;
  double mean = 0.0;  ///< CSI-M
};

/// CSI = H / (H + M + F) per threshold; a threshold with no observed and no
/// predicted events scores 1.
CsiResult csi(const torch::Tensor& pred, const torch::Tensor& target,
              std::span<const double> thresholds, ValueScale scale = ValueScale::unit);

struct MetricReport {
  std::map<std::string, std::vector<double>> per_step;
  std::map<std::string, double> aggregate;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);

  /// Recompute `aggregate` as the mean of each per-step vector.
  void finalize();
};

/// Per-step mse / mae / psnr / ssim / csi_m for predictions and targets of
/// shape [B, steps, C, H, W] in [0, 1].
MetricReport evaluate_predictions(const torch::Tensor& pred, const torch::Tensor& target);

/// JSON numbers cannot carry infinities; they are written as "inf".
nlohmann::json number_to_json(double v);
double number_from_json(const nlohmann::json& j);

}  // namespace ivp
