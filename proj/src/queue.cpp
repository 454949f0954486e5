#include "ivp/queue.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "ivp/errors.hpp"

namespace ivp {

FeatureQueue::FeatureQueue(std::int64_t batch, std::int64_t length, std::int64_t channels,
                           std::int64_t height, std::int64_t width, torch::TensorOptions options)
    : features_(torch::zeros({batch, length, channels, height, width}, options)),
      valid_(static_cast<std::size_t>(length), false) {
  detail::require(batch >= 1 && length >= 1, "queue needs batch >= 1 and length >= 1");
}

FeatureQueue FeatureQueue::from_features(torch::Tensor features) {
  detail::require(features.dim() == 5, "queue features must be [B, L, C, H, W]");
  FeatureQueue q;
  q.features_ = std::move(features);
  q.valid_.assign(static_cast<std::size_t>(q.features_.size(1)), true);
  return q;
}

std::int64_t FeatureQueue::valid_count() const {
  return std::count(valid_.begin(), valid_.end(), true);
}

void FeatureQueue::check_slot(std::int64_t index) const {
  detail::require(index >= 0 && index < length(),
                  "queue slot " + std::to_string(index) + " out of range");
}

bool FeatureQueue::is_valid(std::int64_t index) const {
  check_slot(index);
  return valid_[static_cast<std::size_t>(index)];
}

torch::Tensor FeatureQueue::slot(std::int64_t index) const {
  check_slot(index);
  return features_.select(1, index);
}

void FeatureQueue::set(std::int64_t index, const torch::Tensor& feature) {
  check_slot(index);
  detail::require(feature.sizes() == features_.select(1, index).sizes(),
                  "feature shape does not match queue slot");
  torch::NoGradGuard no_grad;
  features_ = features_.clone();
  features_.select(1, index).copy_(feature);
  valid_[static_cast<std::size_t>(index)] = true;
}

void FeatureQueue::invalidate(std::int64_t index) {
  check_slot(index);
  torch::NoGradGuard no_grad;
  features_ = features_.clone();
  features_.select(1, index).zero_();
  valid_[static_cast<std::size_t>(index)] = false;
}

FeatureQueue FeatureQueue::prefix(std::int64_t n) const {
  detail::require(n >= 0 && n <= length(), "prefix length out of range");
  FeatureQueue out = *this;
  if (n == length()) return out;
  torch::NoGradGuard no_grad;
  out.features_ = features_.clone();
  out.features_.slice(1, n).zero_();
  std::fill(out.valid_.begin() + n, out.valid_.end(), false);
  return out;
}

MaskVector make_mask_with_count(int t, int t_fut, int k, Rng& rng) {
  detail::require(t_fut >= 1 && t >= 1 && t <= t_fut, "mask target step out of range [1, t_fut]");
  detail::require(k >= 0 && k <= t - 1, "mask drop count out of range [0, t - 1]");
  MaskVector mask;
  mask.bits.assign(static_cast<std::size_t>(t_fut), 0);
  // Slots 0 .. t-2 (1-based 1 .. t-1) precede the target and may stay visible.
  std::vector<int> history(static_cast<std::size_t>(t - 1));
  std::iota(history.begin(), history.end(), 0);
  for (int i : history) mask.bits[static_cast<std::size_t>(i)] = 1;
  // Partial Fisher-Yates: the first k entries form a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, t - 2);
    std::swap(history[static_cast<std::size_t>(i)], history[static_cast<std::size_t>(pick(rng))]);
    mask.bits[static_cast<std::size_t>(history[static_cast<std::size_t>(i)])] = 0;
  }
  return mask;
}

MaskVector make_mask(int t, int t_fut, Rng& rng) {
  detail::require(t_fut >= 1 && t >= 1 && t <= t_fut, "mask target step out of range [1, t_fut]");
  std::uniform_int_distribution<int> count(0, t - 1);
  const int k = count(rng);
  return make_mask_with_count(t, t_fut, k, rng);
}

MaskVector causal_mask(int t, int t_fut) {
  detail::require(t_fut >= 1 && t >= 1 && t <= t_fut, "mask target step out of range [1, t_fut]");
  MaskVector mask;
  mask.bits.assign(static_cast<std::size_t>(t_fut), 0);
  std::fill(mask.bits.begin(), mask.bits.begin() + (t - 1), 1);
  return mask;
}

FeatureQueue apply_mask(const FeatureQueue& queue, const MaskVector& mask) {
  detail::require(static_cast<std::int64_t>(mask.size()) == queue.length(),
                  "mask length must equal queue length");
  FeatureQueue out = queue;
  for (std::int64_t i = 0; i < queue.length(); ++i) {
    if (mask.bits[static_cast<std::size_t>(i)] == 0 && out.is_valid(i)) out.invalidate(i);
  }
  return out;
}

torch::Tensor mask_tensor(const std::vector<MaskVector>& masks, torch::TensorOptions options) {
  detail::require(!masks.empty(), "need at least one mask");
  const auto len = static_cast<std::int64_t>(masks.front().size());
  auto out = torch::empty({static_cast<std::int64_t>(masks.size()), len}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (std::size_t b = 0; b < masks.size(); ++b) {
    detail::require(static_cast<std::int64_t>(masks[b].size()) == len, "masks differ in length");
    for (std::int64_t i = 0; i < len; ++i) acc[b][i] = masks[b].bits[static_cast<std::size_t>(i)];
  }
  return out.to(options);
}

}  // namespace ivp
