#pragma once

// Static figure output: SVG line/bar charts and PGM frame strips.

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace ivp::plot {

struct Series {
  std::string name;
  std::vector<double> values;  ///< one per step, plotted at x = 1..n
};

/// Overlaid per-step curves with a legend. All series must share a length.
void write_curves_svg(const std::vector<Series>& series, const std::string& title,
                      const std::string& y_label, const std::filesystem::path& path);

struct Bar {
  std::string label;
  double value = 0.0;
};

void write_bars_svg(const std::vector<Bar>& bars, const std::string& title, const std::string& y_label,
                    const std::filesystem::path& path);

/// Rows of frames ([T, C, H, W] each, values in [0, 1], first channel shown)
/// tiled left to right with a one-pixel gap, written as binary PGM.
void write_frame_strip_pgm(const std::vector<torch::Tensor>& rows, const std::filesystem::path& path);

}  // namespace ivp::plot
