#include "ivp/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "ivp/errors.hpp"
#include "ivp/rng.hpp"

namespace ivp {

void DataConfig::validate() const {
  using detail::require_config;
  require_config(num_sequences >= 0, "num_sequences must be >= 0");
  require_config(channels >= 1, "channels must be >= 1");
  require_config(digit_size >= 1, "digit_size must be >= 1");
  require_config(height >= 2 * digit_size && width >= 2 * digit_size,
                 "height and width must be at least 2 * digit_size");
  require_config(t_obs >= 1 && t_fut >= 1, "t_obs and t_fut must be >= 1");
  require_config(num_objects >= 1, "num_objects must be >= 1");
  require_config(speed_min >= 0 && speed_max >= speed_min, "speed range must satisfy 0 <= min <= max");
  require_config(speed_max <= std::min(width, height) - digit_size,
                 "speed_max must not exceed the free travel span");
  require_config(height <= 65535 && width <= 65535 && channels <= 65535 && t_obs <= 65535 &&
                     t_fut <= 65535,
                 "dimension exceeds the u16 range of the dataset header");
}

void step_object(ObjectState& obj, int size, int width, int height) {
  auto reflect = [](int& pos, int& vel, int max_pos) {
    pos += vel;
    if (pos < 0) {
      pos = -pos;
      vel = -vel;
    } else if (pos > max_pos) {
      pos = 2 * max_pos - pos;
      vel = -vel;
    }
  };
  reflect(obj.x, obj.vx, width - size);
  reflect(obj.y, obj.vy, height - size);
}

namespace {

bool glyph_covers(Glyph glyph, int size, int row, int col) {
  switch (glyph) {
    case Glyph::square:
      return true;
    case Glyph::cross: {
      const int thick = std::max(1, size / 3);
      const int lo = (size - thick) / 2;
      const bool in_row = row >= lo && row < lo + thick;
      const bool in_col = col >= lo && col < lo + thick;
      return in_row || in_col;
    }
    case Glyph::ring: {
      const double c = (size - 1) / 2.0;
      const double dr = row - c;
      const double dc = col - c;
      const double d = std::sqrt(dr * dr + dc * dc);
      const double outer = size / 2.0;
      const double inner = std::max(0.0, outer - std::max(1.0, size / 4.0));
      return d <= outer && d >= inner;
    }
  }
  return false;
}

}  // namespace

void render_glyph(const ObjectState& obj, int size, float intensity, float* canvas, int width,
                  int height) {
  for (int r = 0; r < size; ++r) {
    const int y = obj.y + r;
    if (y < 0 || y >= height) continue;
    for (int c = 0; c < size; ++c) {
      const int x = obj.x + c;
      if (x < 0 || x >= width) continue;
      if (!glyph_covers(obj.glyph, size, r, c)) continue;
      float& px = canvas[static_cast<std::size_t>(y) * width + x];
      px = std::max(px, intensity);
    }
  }
}

SequencePair gen_sequence(const DataConfig& cfg, int index) {
  cfg.validate();
  detail::require(index >= 0 && index < cfg.num_sequences, "sequence index out of range");

  auto rng = make_stream(cfg.seed, stream::kData, static_cast<std::uint64_t>(index));
  std::uniform_int_distribution<int> glyph_dist(0, 2);
  std::uniform_int_distribution<int> xpos(0, cfg.width - cfg.digit_size);
  std::uniform_int_distribution<int> ypos(0, cfg.height - cfg.digit_size);
  std::uniform_int_distribution<int> speed(cfg.speed_min, cfg.speed_max);
  std::bernoulli_distribution sign(0.5);

  std::vector<ObjectState> objects(cfg.num_objects);
  for (auto& obj : objects) {
    obj.glyph = static_cast<Glyph>(glyph_dist(rng));
    obj.x = xpos(rng);
    obj.y = ypos(rng);
    obj.vx = speed(rng) * (sign(rng) ? 1 : -1);
    obj.vy = speed(rng) * (sign(rng) ? 1 : -1);
  }

  const int total = cfg.t_obs + cfg.t_fut;
  const auto plane = static_cast<std::size_t>(cfg.height) * cfg.width;
  auto frames = torch::zeros({total, cfg.channels, cfg.height, cfg.width}, torch::kFloat32);
  float* data = frames.data_ptr<float>();
  std::vector<float> canvas(plane);
  for (int t = 0; t < total; ++t) {
    std::fill(canvas.begin(), canvas.end(), 0.0f);
    for (const auto& obj : objects) {
      render_glyph(obj, cfg.digit_size, 1.0f, canvas.data(), cfg.width, cfg.height);
    }
    for (int ch = 0; ch < cfg.channels; ++ch) {
      std::copy(canvas.begin(), canvas.end(),
                data + (static_cast<std::size_t>(t) * cfg.channels + ch) * plane);
    }
    for (auto& obj : objects) step_object(obj, cfg.digit_size, cfg.width, cfg.height);
  }

  return {frames.slice(0, 0, cfg.t_obs).clone(), frames.slice(0, cfg.t_obs, total).clone()};
}

std::vector<SequencePair> gen_dataset(const DataConfig& cfg) {
  cfg.validate();
  std::vector<SequencePair> out;
  out.reserve(cfg.num_sequences);
  for (int i = 0; i < cfg.num_sequences; ++i) out.push_back(gen_sequence(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// IVPD container

namespace {

constexpr std::array<char, 4> kMagic{'I', 'V', 'P', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeU8 = 0;
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 2 * 5 + 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_quantized(std::string& out, const torch::Tensor& frames) {
  auto f = frames.to(torch::kFloat32).contiguous();
  const float* p = f.data_ptr<float>();
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    const float v = std::clamp(p[i], 0.0f, 1.0f);
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f))));
  }
}

}  // namespace

void write_dataset(const std::vector<SequencePair>& pairs, const std::filesystem::path& path) {
  std::int64_t t = 0, tf = 0, c = 0, h = 0, w = 0;
  if (!pairs.empty()) {
    const auto& first = pairs.front();
    detail::require(first.observed.dim() == 4 && first.future.dim() == 4,
                    "sequence frames must be [T, C, H, W]");
    t = first.observed.size(0);
    tf = first.future.size(0);
    c = first.observed.size(1);
    h = first.observed.size(2);
    w = first.observed.size(3);
    for (const auto& p : pairs) {
      detail::require(p.observed.sizes() == first.observed.sizes() &&
                          p.future.sizes() == first.future.sizes(),
                      "all pairs must share one shape signature");
      detail::require(p.future.size(1) == c && p.future.size(2) == h && p.future.size(3) == w,
                      "observed and future frames must share C, H, W");
    }
  }
  for (auto v : {t, tf, c, h, w}) detail::require(v <= 65535, "dimension exceeds u16 header range");

  std::string buf;
  buf.reserve(kHeaderBytes + pairs.size() * static_cast<std::size_t>((t + tf) * c * h * w));
  buf.append(kMagic.data(), kMagic.size());
  put_u16(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(pairs.size()));
  for (auto v : {t, tf, c, h, w}) put_u16(buf, static_cast<std::uint16_t>(v));
  buf.push_back(static_cast<char>(kDtypeU8));
  for (const auto& p : pairs) {
    append_quantized(buf, p.observed);
    append_quantized(buf, p.future);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open dataset for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing dataset: " + path.string());
}

std::vector<SequencePair> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset: " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes) throw FormatError("dataset header truncated");
  if (std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad dataset magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (get_u16(p + 4) != kVersion) throw FormatError("unsupported dataset version");
  const std::uint32_t n = get_u32(p + 6);
  const std::int64_t t = get_u16(p + 10), tf = get_u16(p + 12), c = get_u16(p + 14),
                     h = get_u16(p + 16), w = get_u16(p + 18);
  if (p[20] != kDtypeU8) throw FormatError("unsupported dataset dtype tag");

  const auto frame = static_cast<std::size_t>(c * h * w);
  const auto record = static_cast<std::size_t>(t + tf) * frame;
  const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(n) * record;
  if (buf.size() < expected) throw FormatError("dataset payload truncated");
  if (buf.size() > expected) throw FormatError("dataset payload larger than header declares");
  if (n > 0 && record == 0) throw FormatError("dataset header declares empty frames");

  auto decode = [&](std::size_t offset, std::int64_t frames) {
    auto out = torch::empty({frames, c, h, w}, torch::kFloat32);
    float* dst = out.data_ptr<float>();
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      dst[i] = static_cast<float>(p[offset + static_cast<std::size_t>(i)]) / 255.0f;
    }
    return out;
  };

  std::vector<SequencePair> pairs;
  pairs.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t base = kHeaderBytes + static_cast<std::size_t>(i) * record;
    pairs.push_back({decode(base, t), decode(base + static_cast<std::size_t>(t) * frame, tf)});
  }
  return pairs;
}

Batch make_batch(const std::vector<SequencePair>& pairs, const std::vector<std::size_t>& indices) {
  detail::require(!indices.empty(), "batch must be non-empty");
  std::vector<torch::Tensor> obs, fut;
  obs.reserve(indices.size());
  fut.reserve(indices.size());
  for (auto i : indices) {
    detail::require(i < pairs.size(), "batch index out of range");
    obs.push_back(pairs[i].observed);
    fut.push_back(pairs[i].future);
  }
  return {torch::stack(obs), torch::stack(fut)};
}

Batch make_batch(const std::vector<SequencePair>& pairs) {
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(pairs, idx);
}

}  // namespace ivp
