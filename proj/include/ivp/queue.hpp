#pragma once

// Observed / future feature queues and the training-time mask generator.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "ivp/rng.hpp"

namespace ivp {

/// Fixed-length ordered list of feature maps with per-slot validity.
/// Slots are 0-based here; slot `i` holds the feature for future step `i + 1`.
/// Invalid slots always hold zeros. Mutators copy the underlying tensor, so
/// copies of a queue never alias each other.
class FeatureQueue {
 public:
  FeatureQueue() = default;

  /// All-zero, all-invalid queue of `length` slots, features [batch, C, H, W].
  FeatureQueue(std::int64_t batch, std::int64_t length, std::int64_t channels, std::int64_t height,
               std::int64_t width, torch::TensorOptions options = torch::kFloat32);

  /// Every slot valid; `features` is [B, L, C, H, W].
  static FeatureQueue from_features(torch::Tensor features);

  std::int64_t length() const { return static_cast<std::int64_t>(valid_.size()); }
  std::int64_t batch() const { return features_.size(0); }
  std::int64_t valid_count() const;
  bool is_valid(std::int64_t slot) const;
  const std::vector<bool>& validity() const { return valid_; }

  /// [B, L, C, H, W]
  const torch::Tensor& features() const { return features_; }
  /// [B, C, H, W]
  torch::Tensor slot(std::int64_t index) const;

  void set(std::int64_t index, const torch::Tensor& feature);
  void invalidate(std::int64_t index);

  /// Only slots [0, n) keep their content and validity.
  FeatureQueue prefix(std::int64_t n) const;

 private:
  void check_slot(std::int64_t index) const;

  torch::Tensor features_;
  std::vector<bool> valid_;
};

/// Per-future-slot keep bits: 1 keeps the slot, 0 zeroes it.
struct MaskVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  bool operator==(const MaskVector&) const = default;
};

/// Training mask for target step `t` (1-based, 1 <= t <= t_fut). Slots with
/// 1-based index >= t are always zero; among the t - 1 earlier slots a count
/// k ~ U{0..t-1} is drawn and a uniform k-subset of them is zeroed.
MaskVector make_mask(int t, int t_fut, Rng& rng);

/// Same as `make_mask` with the drop count fixed to `k` (0 <= k <= t - 1).
MaskVector make_mask_with_count(int t, int t_fut, int k, Rng& rng);

/// All earlier slots visible, slots >= t hidden. No random dropping.
MaskVector causal_mask(int t, int t_fut);

/// Zero features where the mask bit is 0 and mark those slots invalid.
FeatureQueue apply_mask(const FeatureQueue& queue, const MaskVector& mask);

/// Masks stacked as a [B, L] float tensor for multiplicative use on
/// [B, L, C, H, W] features.
torch::Tensor mask_tensor(const std::vector<MaskVector>& masks, torch::TensorOptions options);

}  // namespace ivp
