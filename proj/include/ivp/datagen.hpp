#pragma once

// Synthetic moving-shapes sequences and the on-disk dataset container.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ivp {

struct DataConfig {
  int num_sequences = 1000;
  int height = 32;
  int width = 32;
  int channels = 1;
  int t_obs = 10;
  int t_fut = 10;
  int num_objects = 2;
  int digit_size = 8;
  int speed_min = 1;  ///< pixels per frame, per axis
  int speed_max = 3;
  std::uint64_t seed = 0;

  /// Throws ConfigError when any invariant is violated.
  void validate() const;
};

/// Frames [T, C, H, W], float32, values in [0, 1].
using FrameSequence = torch::Tensor;

struct SequencePair {
  FrameSequence observed;
  FrameSequence future;
};

enum class Glyph : std::uint8_t { square, cross, ring };

/// One object's integer state on the pixel grid. `x`, `y` are the top-left
/// corner of its bounding box.
struct ObjectState {
  int x = 0;
  int y = 0;
  int vx = 0;
  int vy = 0;
  Glyph glyph = Glyph::square;
};

/// Advance one frame with elastic reflection so the `size`-wide box stays
/// within [0, width) x [0, height).
void step_object(ObjectState& obj, int size, int width, int height);

/// Draw a glyph's mask into a [H, W] canvas with max-compositing.
void render_glyph(const ObjectState& obj, int size, float intensity, float* canvas, int width,
                  int height);

/// Pure function of (cfg, index).
SequencePair gen_sequence(const DataConfig& cfg, int index);

std::vector<SequencePair> gen_dataset(const DataConfig& cfg);

/// Binary dataset container ("IVPD"); frames are u8-quantized.
void write_dataset(const std::vector<SequencePair>& pairs, const std::filesystem::path& path);
std::vector<SequencePair> read_dataset(const std::filesystem::path& path);

struct Batch {
  torch::Tensor observed;  ///< [B, T, C, H, W]
  torch::Tensor future;    ///< [B, T_fut, C, H, W]
};

Batch make_batch(const std::vector<SequencePair>& pairs, const std::vector<std::size_t>& indices);
Batch make_batch(const std::vector<SequencePair>& pairs);

}  // namespace ivp
