#include "ivp/config.hpp"

#include <fstream>
#include <set>

#include "ivp/errors.hpp"

namespace ivp {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      throw ConfigError("unknown key '" + section + "." + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const DataConfig& c) {
  return {{"num_sequences", c.num_sequences}, {"height", c.height},       {"width", c.width},
          {"channels", c.channels},           {"t_obs", c.t_obs},         {"t_fut", c.t_fut},
          {"num_objects", c.num_objects},     {"digit_size", c.digit_size}, {"speed_min", c.speed_min},
          {"speed_max", c.speed_max},         {"seed", c.seed}};
}

json to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"height", c.height},
          {"width", c.width},
          {"t_obs", c.t_obs},
          {"t_fut", c.t_fut},
          {"enc_channels", c.enc_channels},
          {"pred_channels", c.pred_channels},
          {"enc_layers", c.enc_layers},
          {"dec_layers", c.dec_layers},
          {"pred_layers", c.pred_layers},
          {"pred_kernel", c.pred_kernel},
          {"time_embed_dim", c.time_embed_dim},
          {"block_style", to_string(c.block_style)},
          {"str_enabled", c.str_enabled},
          {"str_hidden", c.str_hidden},
          {"str_blocks", c.str_blocks},
          {"str_kernel", c.str_kernel},
          {"time_embedding", c.time_embedding},
          {"per_layer_time_mlp", c.per_layer_time_mlp}};
}

json to_json(const OptimConfig& c) {
  return {{"lr0", c.lr0},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"total_epochs", c.total_epochs},
          {"ema_momentum", c.ema_momentum},
          {"ema_start", c.ema_start},
          {"ema_every", c.ema_every},
          {"alpha", c.alpha},
          {"val_every", c.val_every},
          {"queue_training", to_string(c.queue_training)},
          {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
  return {{"data", to_json(c.data)},
          {"model", to_json(c.model)},
          {"optim", to_json(c.optim)},
          {"finetune",
           {{"enabled", c.finetune.enabled},
            {"epochs", c.finetune.epochs},
            {"lr", c.finetune.lr},
            {"batch_size", c.finetune.batch_size}}},
          {"experiment", c.experiment},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

DataConfig data_config_from_json(const json& j) {
  reject_unknown(j, {"num_sequences", "height", "width", "channels", "t_obs", "t_fut", "num_objects",
                     "digit_size", "speed_min", "speed_max", "seed"},
                 "data");
  DataConfig c;
  read(j, "num_sequences", c.num_sequences);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "channels", c.channels);
  read(j, "t_obs", c.t_obs);
  read(j, "t_fut", c.t_fut);
  read(j, "num_objects", c.num_objects);
  read(j, "digit_size", c.digit_size);
  read(j, "speed_min", c.speed_min);
  read(j, "speed_max", c.speed_max);
  read(j, "seed", c.seed);
  return c;
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, {"in_channels", "height", "width", "t_obs", "t_fut", "enc_channels",
                     "pred_channels", "enc_layers", "dec_layers", "pred_layers", "pred_kernel",
                     "time_embed_dim", "block_style", "str_enabled", "str_hidden", "str_blocks",
                     "str_kernel", "time_embedding", "per_layer_time_mlp"},
                 "model");
  ModelConfig c;
  read(j, "in_channels", c.in_channels);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "t_obs", c.t_obs);
  read(j, "t_fut", c.t_fut);
  read(j, "enc_channels", c.enc_channels);
  read(j, "pred_channels", c.pred_channels);
  read(j, "enc_layers", c.enc_layers);
  read(j, "dec_layers", c.dec_layers);
  read(j, "pred_layers", c.pred_layers);
  read(j, "pred_kernel", c.pred_kernel);
  read(j, "time_embed_dim", c.time_embed_dim);
  std::string style = to_string(c.block_style);
  read(j, "block_style", style);
  c.block_style = block_style_from_string(style);
  read(j, "str_enabled", c.str_enabled);
  read(j, "str_hidden", c.str_hidden);
  read(j, "str_blocks", c.str_blocks);
  read(j, "str_kernel", c.str_kernel);
  read(j, "time_embedding", c.time_embedding);
  read(j, "per_layer_time_mlp", c.per_layer_time_mlp);
  return c;
}

OptimConfig optim_config_from_json(const json& j) {
  reject_unknown(j, {"lr0", "beta1", "beta2", "batch_size", "total_epochs", "ema_momentum",
                     "ema_start", "ema_every", "alpha", "val_every", "queue_training", "seed"},
                 "optim");
  OptimConfig c;
  read(j, "lr0", c.lr0);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "batch_size", c.batch_size);
  read(j, "total_epochs", c.total_epochs);
  read(j, "ema_momentum", c.ema_momentum);
  read(j, "ema_start", c.ema_start);
  read(j, "ema_every", c.ema_every);
  read(j, "alpha", c.alpha);
  read(j, "val_every", c.val_every);
  std::string mode = to_string(c.queue_training);
  read(j, "queue_training", mode);
  c.queue_training = queue_training_from_string(mode);
  read(j, "seed", c.seed);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"data", "model", "optim", "finetune", "experiment", "output_dir", "seed"}, "");
  RunConfig c;
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("optim")) c.optim = optim_config_from_json(j.at("optim"));
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    reject_unknown(f, {"enabled", "epochs", "lr", "batch_size"}, "finetune");
    read(f, "enabled", c.finetune.enabled);
    read(f, "epochs", c.finetune.epochs);
    read(f, "lr", c.finetune.lr);
    read(f, "batch_size", c.finetune.batch_size);
  }
  read(j, "experiment", c.experiment);
  read(j, "output_dir", c.output_dir);
  read(j, "seed", c.seed);
  return c;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  optim.validate();
  detail::require_config(finetune.epochs >= 1 && finetune.lr > 0.0 && finetune.batch_size >= 1,
                         "invalid finetune section");
  detail::require_config(data.height == model.height && data.width == model.width &&
                             data.channels == model.in_channels,
                         "data and model frame shapes disagree");
  detail::require_config(data.t_obs == model.t_obs && data.t_fut == model.t_fut,
                         "data and model sequence lengths disagree");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config: " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like section.key=value: '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &doc;
    std::size_t pos = 0;
    while (true) {
      const auto dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (part.empty()) throw ConfigError("empty key segment in override '" + item + "'");
      if (!node->is_object()) throw ConfigError("override '" + item + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      pos = dot + 1;
    }
  }
}

RunConfig toy_profile() {
  RunConfig c;
  c.data.height = c.data.width = 16;
  c.data.digit_size = 4;
  c.data.speed_min = 1;
  c.data.speed_max = 2;
  c.data.num_sequences = 8;
  c.data.t_obs = c.data.t_fut = 10;
  c.model.height = c.model.width = 16;
  c.model.enc_channels = 16;
  c.model.pred_channels = 64;
  c.model.enc_layers = c.model.dec_layers = 2;
  c.model.pred_layers = 3;
  c.model.time_embed_dim = 32;
  c.model.str_hidden = 8;
  c.optim.batch_size = 8;
  c.optim.total_epochs = 2000;
  c.optim.ema_start = 1500;
  return c;
}

}  // namespace ivp
