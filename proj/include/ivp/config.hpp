#pragma once

// Run configuration: nested JSON file, dotted-key overrides, validation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivp/datagen.hpp"
#include "ivp/model.hpp"
#include "ivp/training.hpp"

namespace ivp {

struct FinetuneConfig {
  bool enabled = false;
  int epochs = 50;
  double lr = 1e-3;
  int batch_size = 8;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  OptimConfig optim;
  FinetuneConfig finetune;
  std::string experiment = "train";
  std::string output_dir;
  std::uint64_t seed = 0;

  /// Validates every section and their cross-consistency.
  void validate() const;
};

nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const OptimConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Missing keys keep their defaults; unknown keys are a ConfigError.
DataConfig data_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
OptimConfig optim_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

/// Apply "section.key=value" overrides to a JSON document. Values parse as
/// JSON when possible, otherwise as strings.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Desk-scale profile used by the acceptance suite and the CLI defaults for
/// quick runs: 16x16 frames, T = T_fut = 10, a small backbone.
RunConfig toy_profile();

}  // namespace ivp
