#pragma once

// Checkpoint container ("IVPC"): format version, a JSON echo of the model
// configuration and training flags, then every named parameter as raw
// little-endian data.

#include <filesystem>
#include <optional>

#include "ivp/model.hpp"

namespace ivp {

void save_checkpoint(IvpModel& model, const std::filesystem::path& path);

/// Configuration stored in a checkpoint, without reading the weights.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Rebuild a model from a checkpoint. When `expected` is given and differs
/// from the stored configuration, throws ConfigError.
IvpModel load_checkpoint(const std::filesystem::path& path,
                         const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace ivp
