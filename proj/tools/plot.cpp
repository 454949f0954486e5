#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ivp::plot {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

void save(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

std::string header(const std::string& title, const std::string& y_label) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n"
    << "<text transform=\"translate(16," << kHeight / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
  return s.str();
}

struct Frame {
  double lo, hi;
  double y(double v) const {
    const double span = hi > lo ? hi - lo : 1.0;
    return kTop + (kHeight - kTop - kBottom) * (1.0 - (v - lo) / span);
  }
};

std::string y_axis(const Frame& f) {
  std::ostringstream s;
  const int x0 = kLeft, x1 = kWidth - kRight;
  s << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << x1 << "\" y2=\""
    << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.lo + (f.hi - f.lo) * i / 4.0;
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << f.y(v) + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n"
      << "<line x1=\"" << x0 << "\" y1=\"" << f.y(v) << "\" x2=\"" << x1 << "\" y2=\"" << f.y(v)
      << "\" stroke=\"#ddd\"/>\n";
  }
  return s.str();
}

}  // namespace

void write_curves_svg(const std::vector<Series>& series, const std::string& title,
                      const std::string& y_label, const std::filesystem::path& path) {
  if (series.empty()) throw std::invalid_argument("no series to plot");
  const auto n = series.front().values.size();
  double lo = 0.0, hi = 0.0;
  for (const auto& s : series) {
    if (s.values.size() != n || n == 0) throw std::invalid_argument("series lengths differ");
    for (double v : s.values) {
      if (std::isfinite(v)) hi = std::max(hi, v);
    }
  }
  const Frame f{lo, hi > 0.0 ? hi * 1.05 : 1.0};
  const double x0 = kLeft, x1 = kWidth - kRight;
  auto x = [&](std::size_t i) { return n == 1 ? (x0 + x1) / 2 : x0 + (x1 - x0) * i / (n - 1.0); };

  std::ostringstream s;
  s << header(title, y_label) << y_axis(f);
  for (std::size_t i = 0; i < n; ++i) {
    s << "<text x=\"" << x(i) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << i + 1
      << "</text>\n";
  }
  s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      const double v = std::isfinite(series[k].values[i]) ? series[k].values[i] : f.hi;
      s << x(i) << ',' << f.y(v) << ' ';
    }
    s << "\"/>\n";
    const int ly = kTop + 10 + 18 * static_cast<int>(k);
    s << "<line x1=\"" << x1 + 12 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << x1 + 38 << "\" y=\"" << ly + 4 << "\">" << escape(series[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  save(path, s.str());
}

void write_bars_svg(const std::vector<Bar>& bars, const std::string& title, const std::string& y_label,
                    const std::filesystem::path& path) {
  if (bars.empty()) throw std::invalid_argument("no bars to plot");
  double hi = 0.0;
  for (const auto& b : bars) hi = std::max(hi, b.value);
  const Frame f{0.0, hi > 0.0 ? hi * 1.05 : 1.0};
  const double x0 = kLeft, x1 = kWidth - kRight;
  const double slot = (x1 - x0) / static_cast<double>(bars.size());

  std::ostringstream s;
  s << header(title, y_label) << y_axis(f);
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const double left = x0 + slot * (k + 0.15);
    const double top = f.y(bars[k].value);
    s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << slot * 0.7 << "\" height=\""
      << kHeight - kBottom - top << "\" fill=\"" << kPalette[k % std::size(kPalette)] << "\"/>\n"
      << "<text x=\"" << x0 + slot * (k + 0.5) << "\" y=\"" << kHeight - kBottom + 16
      << "\" text-anchor=\"middle\">" << escape(bars[k].label) << "</text>\n"
      << "<text x=\"" << x0 + slot * (k + 0.5) << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\">"
      << num(bars[k].value) << "</text>\n";
  }
  s << "</svg>\n";
  save(path, s.str());
}

void write_frame_strip_pgm(const std::vector<torch::Tensor>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw std::invalid_argument("no frames to tile");
  const auto h = rows.front().size(2), w = rows.front().size(3);
  std::int64_t cols = 0;
  for (const auto& r : rows) {
    if (r.dim() != 4 || r.size(2) != h || r.size(3) != w) throw std::invalid_argument("frame shapes differ");
    cols = std::max(cols, r.size(0));
  }
  const auto rows_n = static_cast<std::int64_t>(rows.size());
  const auto width = cols * (w + 1) - 1, height = rows_n * (h + 1) - 1;
  std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width * height), 255);
  for (std::int64_t r = 0; r < rows_n; ++r) {
    auto frames = rows[static_cast<std::size_t>(r)].select(1, 0).to(torch::kFloat64).clamp(0.0, 1.0).contiguous();
    auto a = frames.accessor<double, 3>();
    for (std::int64_t c = 0; c < frames.size(0); ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          canvas[static_cast<std::size_t>((r * (h + 1) + y) * width + c * (w + 1) + x)] =
              static_cast<std::uint8_t>(std::lround(a[c][y][x] * 255.0));
        }
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
}

}  // namespace ivp::plot
