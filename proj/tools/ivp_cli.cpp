// ivp: dataset generation, training, evaluation, ablations, strategy
// comparison and plotting.
//
// Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.

#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ivp/baselines.hpp"
#include "ivp/checkpoint.hpp"
#include "ivp/config.hpp"
#include "ivp/datagen.hpp"
#include "ivp/errors.hpp"
#include "ivp/metrics.hpp"
#include "ivp/model.hpp"
#include "ivp/strategy.hpp"
#include "ivp/training.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ivp;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kRuntimeError = 3;

/// Raised for bad paths and other operator input problems (exit code 2).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigSource {
  std::string file;
  std::string profile = "toy";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
  cmd->add_option("--config", src.file, "JSON run configuration");
  cmd->add_option("--profile", src.profile, "base profile before the file is applied")
      ->check(CLI::IsMember({"toy", "default"}));
  cmd->add_option("--set", src.sets, "override, e.g. optim.total_epochs=100");
  cmd->add_option("--seed", src.seed, "seed for data, weights and training streams");
}

RunConfig resolve_config(const ConfigSource& src) {
  json doc = to_json(src.profile == "toy" ? toy_profile() : RunConfig{});
  if (!src.file.empty()) {
    if (!fs::is_regular_file(src.file)) throw InputError("config file not found: " + src.file);
    std::ifstream in(src.file);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    doc.merge_patch(file);
  }
  apply_overrides(doc, src.sets);
  if (src.seed) {
    doc["seed"] = *src.seed;
    doc["data"]["seed"] = *src.seed;
    doc["optim"]["seed"] = *src.seed;
  }
  auto cfg = run_config_from_json(doc);
  cfg.validate();
  return cfg;
}

fs::path output_root() {
  const char* env = std::getenv("IVP_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path prepare_dir(const std::string& requested, const RunConfig* cfg) {
  fs::path dir;
  if (!requested.empty()) {
    dir = requested;
  } else if (cfg && !cfg->output_dir.empty()) {
    dir = cfg->output_dir;
  } else {
    dir = output_root() / (cfg ? cfg->experiment : std::string("run"));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  const auto probe = dir / ".write_probe";
  std::ofstream out(probe);
  if (ec || !out) throw InputError("output directory is not writable: " + dir.string());
  out.close();
  fs::remove(probe, ec);
  return dir;
}

std::vector<SequencePair> load_data(const std::string& path, const ModelConfig& model) {
  if (path.empty()) throw InputError("a dataset path is required");
  if (!fs::is_regular_file(path)) throw InputError("dataset not found: " + path);
  auto pairs = read_dataset(path);
  if (pairs.empty()) throw InputError("dataset is empty: " + path);
  const auto& p = pairs.front();
  const bool ok = p.observed.size(0) == model.t_obs && p.future.size(0) == model.t_fut &&
                  p.observed.size(1) == model.in_channels && p.observed.size(2) == model.height &&
                  p.observed.size(3) == model.width;
  if (!ok) {
    throw ConfigError("dataset " + path + " does not match the model's sequence lengths or frame shape");
  }
  return pairs;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, int>) {
        out.push_back(std::stoi(item, &used));
      } else {
        out.push_back(std::stod(item, &used));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::vector<std::size_t>> batches_of(std::size_t n, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += size) {
    std::vector<std::size_t> idx(std::min(size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    out.push_back(std::move(idx));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  ConfigSource src;
  std::string out;
  bool dry_run = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  auto cfg = resolve_config(a.src);
  if (a.dry_run) {
    std::cout << to_json(cfg.data).dump(2) << '\n';
    return kOk;
  }
  if (a.out.empty()) throw InputError("--out is required");
  const fs::path out(a.out);
  if (out.has_parent_path()) prepare_dir(out.parent_path().string(), nullptr);
  write_dataset(gen_dataset(cfg.data), out);
  std::cout << "wrote " << cfg.data.num_sequences << " sequences to " << out.string() << '\n';
  return kOk;
}

struct TrainArgs {
  ConfigSource src;
  std::string data, val, out;
  bool finetune = false;
  bool dry_run = false;
};

LpConfig lp_config(const RunConfig& cfg) {
  LpConfig lp;
  lp.epochs = cfg.finetune.epochs;
  lp.lr = cfg.finetune.lr;
  lp.batch_size = cfg.finetune.batch_size;
  lp.seed = cfg.seed;
  return lp;
}

int cmd_train(const TrainArgs& a) {
  auto cfg = resolve_config(a.src);
  if (a.finetune) cfg.finetune.enabled = true;
  if (a.dry_run) {
    std::cout << to_json(cfg).dump(2) << '\n';
    return kOk;
  }
  auto train = load_data(a.data, cfg.model);
  std::vector<SequencePair> val;
  if (!a.val.empty()) val = load_data(a.val, cfg.model);
  const auto dir = prepare_dir(a.out, &cfg);
  save_run_config(cfg, dir / "config.json");

  std::ofstream log(dir / "metrics.jsonl", std::ios::trunc);
  auto model = make_model(cfg.model, torch_seed(cfg.seed));
  auto state = fit(train, val, model, cfg.optim, [&](const EpochRecord& r, const TrainState&) {
    log << r.to_json_line() << '\n';
    log.flush();
    if (r.val_mse) {
      std::cerr << "epoch " << r.epoch << " loss " << r.loss << " val mean "
                << std::accumulate(r.val_mse->begin(), r.val_mse->end(), 0.0) / r.val_mse->size() << '\n';
    }
  });
  save_checkpoint(model, dir / "model.ckpt");
  save_checkpoint(state.ema, dir / "model_ema.ckpt");

  json summary{{"run_dir", dir.string()}, {"steps", state.step}, {"final_loss", state.log.back().loss}};
  if (cfg.finetune.enabled) {
    state.ema->eval();
    const double before = feature_gap(state.ema, val.empty() ? train : val);
    auto result = finetune_lp(train, state.ema, lp_config(cfg));
    const double after = feature_gap(state.ema, val.empty() ? train : val);
    std::ofstream lp_log(dir / "lp.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) {
      lp_log << json{{"epoch", i + 1}, {"loss", result.epoch_loss[i]}}.dump() << '\n';
    }
    save_checkpoint(state.ema, dir / "model_ema.ckpt");
    summary["feature_gap_before"] = before;
    summary["feature_gap_after"] = after;
  }
  std::cout << summary.dump() << '\n';
  return kOk;
}

struct FinetuneArgs {
  std::string checkpoint, data, out;
  LpConfig lp;
};

int cmd_finetune_lp(const FinetuneArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw InputError("checkpoint not found: " + a.checkpoint);
  if (a.out.empty()) throw InputError("--out is required");
  auto model = load_checkpoint(a.checkpoint);
  model->eval();
  auto train = load_data(a.data, model->config());
  const double before = feature_gap(model, train);
  auto result = finetune_lp(train, model, a.lp);
  const double after = feature_gap(model, train);
  save_checkpoint(model, a.out);
  std::cout << json{{"checkpoint", a.out},
                    {"epoch_loss", result.epoch_loss},
                    {"feature_gap_before", before},
                    {"feature_gap_after", after}}
                   .dump()
            << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, config, out, dump_frames;
  std::string queue_mode = "original";
  std::string queue_steps, times, combos;
  int ensemble_step = 0;
  std::uint64_t seed = 0;
  int batch_size = 16;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw InputError("checkpoint not found: " + a.checkpoint);
  std::optional<ModelConfig> expected;
  if (!a.config.empty()) {
    ConfigSource src;
    src.file = a.config;
    src.profile = "default";
    expected = resolve_config(src).model;
  }
  auto model = load_checkpoint(a.checkpoint, expected);
  model->eval();
  const auto& mcfg = model->config();
  auto pairs = load_data(a.data, mcfg);
  const int modes = !a.times.empty() + (a.ensemble_step > 0) + (a.queue_mode != "original" || !a.queue_steps.empty());
  if (modes > 1) throw ConfigError("--times, --ensemble-step and queue options are mutually exclusive");

  const auto batches = batches_of(pairs.size(), static_cast<std::size_t>(std::max(1, a.batch_size)));
  json out;
  std::vector<torch::Tensor> predicted;

  if (!a.times.empty()) {
    const auto times = parse_list<double>(a.times, "time");
    std::vector<std::int64_t> integer_cols;
    std::vector<std::int64_t> integer_steps;
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] == std::floor(times[i])) {
        integer_cols.push_back(static_cast<std::int64_t>(i));
        integer_steps.push_back(static_cast<std::int64_t>(times[i]) - 1);
      }
    }
    std::vector<torch::Tensor> preds, targets;
    for (const auto& idx : batches) {
      auto batch = make_batch(pairs, idx);
      auto frames = dense_infer(model, batch.observed, times);
      predicted.push_back(frames);
      if (!integer_cols.empty()) {
        preds.push_back(frames.index_select(1, torch::tensor(integer_cols)));
        targets.push_back(batch.future.index_select(1, torch::tensor(integer_steps)));
      }
    }
    out["mode"] = "dense";
    out["times"] = times;
    out["frames_per_sequence"] = times.size();
    if (!preds.empty()) {
      std::vector<int> steps;
      for (auto s : integer_steps) steps.push_back(static_cast<int>(s) + 1);
      out["steps"] = steps;
      auto r = evaluate_predictions(torch::cat(preds, 0), torch::cat(targets, 0)).to_json();
      out["per_step"] = r["per_step"];
      out["aggregate"] = r["aggregate"];
    }
  } else if (a.ensemble_step > 0) {
    const auto combos = parse_combos(a.combos);
    const int t = a.ensemble_step;
    std::vector<torch::Tensor> samples, means, targets;
    for (const auto& idx : batches) {
      auto batch = make_batch(pairs, idx);
      auto result = ensemble_predict(model, batch.observed, t, combos);
      samples.push_back(result.samples);
      means.push_back(result.mean);
      targets.push_back(batch.future.select(1, t - 1));
      predicted.push_back(torch::cat({result.samples.transpose(0, 1), result.mean.unsqueeze(1)}, 1));
    }
    auto target = torch::cat(targets, 0).to(torch::kFloat64);
    auto all = torch::cat(samples, 1).to(torch::kFloat64);
    std::vector<double> sample_mse;
    for (std::int64_t k = 0; k < all.size(0); ++k) {
      sample_mse.push_back((all[k] - target).pow(2).mean().item<double>());
    }
    out["mode"] = "ensemble";
    out["step"] = t;
    out["combos"] = a.combos;
    out["sample_mse"] = sample_mse;
    out["mean_mse"] = (torch::cat(means, 0).to(torch::kFloat64) - target).pow(2).mean().item<double>();
  } else {
    const auto mode = queue_mode_from_string(a.queue_mode);
    std::vector<int> steps;
    if (a.queue_steps.empty()) {
      steps.resize(static_cast<std::size_t>(mcfg.t_fut));
      std::iota(steps.begin(), steps.end(), 1);
    } else {
      steps = parse_list<int>(a.queue_steps, "step");
    }
    std::vector<std::int64_t> cols;
    for (int s : steps) {
      if (s < 1 || s > mcfg.t_fut) throw ConfigError("queue step out of range: " + std::to_string(s));
      cols.push_back(s - 1);
    }
    auto rng = make_stream(a.seed, stream::kPerturb);
    std::vector<torch::Tensor> targets;
    for (const auto& idx : batches) {
      auto batch = make_batch(pairs, idx);
      predicted.push_back(mode == QueueMode::original && a.queue_steps.empty()
                              ? stacked_infer(model, batch.observed, mcfg.t_fut).frames
                              : queue_experiment(model, batch.observed, mode, rng, steps));
      targets.push_back(batch.future.index_select(1, torch::tensor(cols)));
    }
    auto r = evaluate_predictions(torch::cat(predicted, 0), torch::cat(targets, 0)).to_json();
    out["mode"] = a.queue_mode;
    out["steps"] = steps;
    out["per_step"] = r["per_step"];
    out["aggregate"] = r["aggregate"];
  }

  if (!a.dump_frames.empty()) {
    auto frames = torch::cat(predicted, 0);
    std::vector<SequencePair> dump;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      dump.push_back({pairs[i].observed, frames[static_cast<std::int64_t>(i)].to(torch::kFloat32)});
    }
    write_dataset(dump, a.dump_frames);
    out["frames_file"] = a.dump_frames;
  }
  out["checkpoint"] = a.checkpoint;
  out["sequences"] = pairs.size();
  if (a.out.empty()) {
    std::cout << out.dump(2) << '\n';
  } else {
    write_text(a.out, out.dump(2) + "\n");
    std::cout << "wrote " << a.out << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  ConfigSource src;
  std::string data, test, out;
  int epochs = 0;
  std::vector<std::string> strategies;
};

std::pair<std::vector<SequencePair>, std::vector<SequencePair>> load_split(const SweepArgs& a,
                                                                           const RunConfig& cfg) {
  auto train = load_data(a.data, cfg.model);
  auto test = a.test.empty() ? train : load_data(a.test, cfg.model);
  return {std::move(train), std::move(test)};
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

int cmd_ablate(const SweepArgs& a) {
  auto cfg = resolve_config(a.src);
  if (a.epochs > 0) cfg.optim.total_epochs = a.epochs;
  auto [train, test] = load_split(a, cfg);
  const auto dir = prepare_dir(a.out, &cfg);
  save_run_config(cfg, dir / "config.json");

  StrategyBudget budget;
  budget.epochs = cfg.optim.total_epochs;
  budget.batch_size = cfg.optim.batch_size;
  budget.lr0 = cfg.optim.lr0;

  struct Rung {
    std::string name;
    std::int64_t params;
    std::vector<double> mse;
  };
  std::vector<Rung> rungs;
  auto record = [&](Rung r) {
    std::cerr << r.name << ": mean MSE " << mean_of(r.mse) << '\n';
    rungs.push_back(std::move(r));
  };

  auto mimo_cfg = cfg.model;
  mimo_cfg.block_style = BlockStyle::baseline;
  mimo_cfg.str_enabled = false;
  if (mimo_cfg.enc_channels % 2 != 0) throw ConfigError("baseline blocks need even enc_channels");
  auto r = run_strategy(StrategyKind::mimo, train, test, mimo_cfg, budget, cfg.seed);
  record({"baseline", r.params, r.per_step_mse});
  mimo_cfg.block_style = BlockStyle::improved;
  r = run_strategy(StrategyKind::mimo, train, test, mimo_cfg, budget, cfg.seed);
  record({"+improved_autoencoder", r.params, r.per_step_mse});
  mimo_cfg.str_enabled = true;
  r = run_strategy(StrategyKind::mimo, train, test, mimo_cfg, budget, cfg.seed);
  record({"+str", r.params, r.per_step_mse});

  auto implicit = [&](QueueTraining mode) {
    auto optim = cfg.optim;
    optim.queue_training = mode;
    auto model = make_model(cfg.model, torch_seed(cfg.seed));
    auto state = fit(train, {}, model, optim);
    state.ema->eval();
    return state.ema;
  };
  {
    auto model = implicit(QueueTraining::empty);
    std::vector<double> sums(static_cast<std::size_t>(cfg.model.t_fut), 0.0);
    auto rng = make_stream(cfg.seed, stream::kPerturb);
    torch::NoGradGuard no_grad;
    for (const auto& idx : batches_of(test.size(), 16)) {
      auto batch = make_batch(test, idx);
      auto pred = queue_experiment(model, batch.observed, QueueMode::all_zero, rng);
      auto per = (pred.to(torch::kFloat64) - batch.future.to(torch::kFloat64)).pow(2).mean({2, 3, 4}).sum(0);
      for (std::size_t t = 0; t < sums.size(); ++t) sums[t] += per[static_cast<std::int64_t>(t)].item<double>();
    }
    for (double& s : sums) s /= static_cast<double>(test.size());
    record({"+time_embedding", count_parameters(*model), sums});
  }
  {
    auto model = implicit(QueueTraining::unmasked);
    record({"+stacked_ar_without_mask", count_parameters(*model), stacked_step_mse(model, test)});
  }
  auto model = implicit(QueueTraining::generator);
  record({"+stacked_ar_with_mask", count_parameters(*model), stacked_step_mse(model, test)});
  finetune_lp(train, model, lp_config(cfg));
  record({"+learned_prior", count_parameters(*model), stacked_step_mse(model, test)});

  std::ostringstream tsv;
  tsv << "rung\tparams";
  for (int i = 1; i <= cfg.model.t_fut; ++i) tsv << "\tstep_" << i;
  tsv << "\tmean\n";
  json rows = json::array();
  for (const auto& rung : rungs) {
    tsv << rung.name << '\t' << rung.params;
    for (double v : rung.mse) tsv << '\t' << v;
    tsv << '\t' << mean_of(rung.mse) << '\n';
    rows.push_back({{"rung", rung.name}, {"params", rung.params}, {"per_step_mse", rung.mse},
                    {"mean_mse", mean_of(rung.mse)}});
  }
  write_text(dir / "ablation.tsv", tsv.str());
  write_text(dir / "ablation.json", json{{"rows", rows}}.dump(2) + "\n");
  std::cout << tsv.str();
  return kOk;
}

int cmd_compare(const SweepArgs& a) {
  auto cfg = resolve_config(a.src);
  std::vector<StrategyKind> kinds;
  for (const auto& s : a.strategies) kinds.push_back(strategy_from_string(s));
  if (kinds.empty()) {
    kinds = {StrategyKind::mimo, StrategyKind::miso_autoregressive, StrategyKind::miso_multi,
             StrategyKind::stacked_ar};
  }
  StrategyBudget budget;
  budget.epochs = a.epochs > 0 ? a.epochs : cfg.optim.total_epochs;
  budget.batch_size = cfg.optim.batch_size;
  budget.lr0 = cfg.optim.lr0;
  auto [train, test] = load_split(a, cfg);
  const auto dir = prepare_dir(a.out, &cfg);
  save_run_config(cfg, dir / "config.json");

  std::vector<StrategyResult> results;
  for (auto kind : kinds) {
    results.push_back(run_strategy(kind, train, test, cfg.model, budget, cfg.seed));
    std::cerr << to_string(kind) << ": mean MSE " << results.back().mean_mse << '\n';
  }
  auto table = emit_comparison_table(results);
  write_text(dir / "comparison.tsv", table.to_text());
  write_text(dir / "comparison.json", table.to_json().dump(2) + "\n");
  std::cout << table.to_text();
  return kOk;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::vector<std::string> runs;
  std::vector<std::string> names;
  std::string out, frames, truth;
  int sequence = 0;
};

/// Per-step MSE of a run directory: an evaluation report when present,
/// otherwise the last validated epoch of the training log.
std::optional<std::vector<double>> run_curve(const fs::path& dir) {
  if (fs::is_regular_file(dir / "report.json")) {
    std::ifstream in(dir / "report.json");
    auto j = json::parse(in);
    if (j.contains("per_step") && j["per_step"].contains("mse")) {
      std::vector<double> v;
      for (const auto& x : j["per_step"]["mse"]) v.push_back(number_from_json(x));
      return v;
    }
  }
  if (fs::is_regular_file(dir / "metrics.jsonl")) {
    std::ifstream in(dir / "metrics.jsonl");
    std::optional<std::vector<double>> last;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      if (j.contains("val_mse") && j["val_mse"].is_array()) last = j["val_mse"].get<std::vector<double>>();
    }
    return last;
  }
  return std::nullopt;
}

int cmd_plot(const PlotArgs& a) {
  if (a.out.empty()) throw InputError("--out is required");
  if (!a.names.empty() && a.names.size() != a.runs.size()) {
    throw ConfigError("--names must give one name per run");
  }
  std::vector<plot::Series> curves;
  std::vector<std::pair<std::string, json>> tables;
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    const fs::path dir(a.runs[i]);
    if (!fs::is_directory(dir)) throw InputError("run directory not found: " + dir.string());
    const std::string name = a.names.empty() ? dir.filename().string() : a.names[i];
    try {
      if (auto curve = run_curve(dir)) curves.push_back({name, *curve});
      for (const char* file : {"comparison.json", "ablation.json"}) {
        if (fs::is_regular_file(dir / file)) {
          std::ifstream in(dir / file);
          tables.emplace_back(name + "_" + fs::path(file).stem().string(), json::parse(in));
        }
      }
    } catch (const json::exception& e) {
      throw FormatError("unreadable records in " + dir.string() + ": " + e.what());
    }
  }
  const bool have_frames = !a.frames.empty();
  if (curves.empty() && tables.empty() && !have_frames) {
    std::cerr << "warning: no metric records found; nothing to plot\n";
    return kOk;
  }
  const fs::path out = prepare_dir(a.out, nullptr);
  std::vector<std::string> written;

  if (!curves.empty()) {
    for (const auto& c : curves) {
      if (c.values.size() != curves.front().values.size()) {
        throw ConfigError("runs disagree on the number of future steps (" + curves.front().name + ": " +
                          std::to_string(curves.front().values.size()) + ", " + c.name + ": " +
                          std::to_string(c.values.size()) + "); refusing to overlay them");
      }
    }
    plot::write_curves_svg(curves, "Per-step MSE", "MSE", out / "per_step_mse.svg");
    written.push_back("per_step_mse.svg");
  }
  for (const auto& [name, table] : tables) {
    std::vector<plot::Bar> bars;
    std::vector<plot::Series> series;
    for (const auto& row : table.at("rows")) {
      const std::string label = row.contains("strategy") ? row["strategy"].get<std::string>()
                                                         : row["rung"].get<std::string>();
      bars.push_back({label, row["mean_mse"].get<double>()});
      series.push_back({label, row["per_step_mse"].get<std::vector<double>>()});
    }
    if (bars.empty()) continue;
    plot::write_bars_svg(bars, name, "mean MSE", out / (name + "_bars.svg"));
    plot::write_curves_svg(series, name, "MSE", out / (name + "_curves.svg"));
    written.push_back(name + "_bars.svg");
    written.push_back(name + "_curves.svg");
  }
  if (have_frames) {
    if (!fs::is_regular_file(a.frames)) throw InputError("frames file not found: " + a.frames);
    auto pred = read_dataset(a.frames);
    if (a.sequence < 0 || static_cast<std::size_t>(a.sequence) >= pred.size()) {
      throw ConfigError("--sequence out of range");
    }
    const auto& p = pred[static_cast<std::size_t>(a.sequence)];
    std::vector<torch::Tensor> rows{p.observed, p.future};
    if (!a.truth.empty()) {
      if (!fs::is_regular_file(a.truth)) throw InputError("truth file not found: " + a.truth);
      auto truth = read_dataset(a.truth);
      if (static_cast<std::size_t>(a.sequence) >= truth.size()) throw ConfigError("--sequence out of range");
      rows.push_back(truth[static_cast<std::size_t>(a.sequence)].future);
    }
    plot::write_frame_strip_pgm(rows, out / "frames.pgm");
    written.push_back("frames.pgm");
  }
  for (const auto& w : written) std::cout << (out / w).string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ivp: implicit stacked-autoregressive video prediction"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic moving-shapes dataset");
  add_config_options(gen_cmd, gen.src);
  gen_cmd->add_option("--out", gen.out, "dataset file to write");
  gen_cmd->add_flag("--dry-run", gen.dry_run, "print the data configuration and exit");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  add_config_options(train_cmd, train.src);
  train_cmd->add_option("--data", train.data, "training dataset");
  train_cmd->add_option("--val", train.val, "validation dataset for the error table");
  train_cmd->add_option("--out", train.out, "run directory");
  train_cmd->add_flag("--finetune-lp", train.finetune, "fine-tune the learned prior after training");
  train_cmd->add_flag("--dry-run", train.dry_run, "validate and print the effective configuration");

  FinetuneArgs ft;
  auto* ft_cmd = app.add_subcommand("finetune-lp", "fine-tune the learned prior of a checkpoint");
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "input checkpoint")->required();
  ft_cmd->add_option("--data", ft.data, "training dataset")->required();
  ft_cmd->add_option("--out", ft.out, "output checkpoint")->required();
  ft_cmd->add_option("--epochs", ft.lp.epochs)->check(CLI::PositiveNumber);
  ft_cmd->add_option("--lr", ft.lp.lr)->check(CLI::PositiveNumber);
  ft_cmd->add_option("--batch-size", ft.lp.batch_size)->check(CLI::PositiveNumber);
  ft_cmd->add_option("--seed", ft.lp.seed);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint to evaluate")->required();
  ev_cmd->add_option("--data", ev.data, "evaluation dataset")->required();
  ev_cmd->add_option("--config", ev.config, "refuse unless the checkpoint matches this configuration");
  ev_cmd->add_option("--queue-mode", ev.queue_mode, "original|random_shuffle|all_first|all_step8|all_zero");
  ev_cmd->add_option("--queue-steps", ev.queue_steps, "comma-separated target steps");
  ev_cmd->add_option("--times", ev.times, "comma-separated (fractional) times for dense inference");
  ev_cmd->add_option("--ensemble-step", ev.ensemble_step, "target step for diverse prediction");
  ev_cmd->add_option("--combos", ev.combos, "kept-slot combinations, e.g. 1101,0011");
  ev_cmd->add_option("--dump-frames", ev.dump_frames, "write predicted frames as a dataset file");
  ev_cmd->add_option("--out", ev.out, "report file (stdout when omitted)");
  ev_cmd->add_option("--seed", ev.seed, "seed for queue perturbation");
  ev_cmd->add_option("--batch-size", ev.batch_size)->check(CLI::PositiveNumber);

  SweepArgs ab;
  auto* ab_cmd = app.add_subcommand("ablate", "train and evaluate the ablation ladder in order");
  add_config_options(ab_cmd, ab.src);
  ab_cmd->add_option("--data", ab.data, "training dataset")->required();
  ab_cmd->add_option("--test", ab.test, "test dataset (defaults to the training set)");
  ab_cmd->add_option("--out", ab.out, "output directory");
  ab_cmd->add_option("--epochs", ab.epochs, "epochs per rung");

  SweepArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-strategies", "MIMO / MISO-AR / MISO-multi / stacked-AR table");
  add_config_options(cmp_cmd, cmp.src);
  cmp_cmd->add_option("--data", cmp.data, "training dataset")->required();
  cmp_cmd->add_option("--test", cmp.test, "test dataset (defaults to the training set)");
  cmp_cmd->add_option("--out", cmp.out, "output directory");
  cmp_cmd->add_option("--epochs", cmp.epochs, "epochs per model");
  cmp_cmd->add_option("--strategies", cmp.strategies, "subset of mimo miso_autoregressive miso_multi stacked_ar");

  PlotArgs pl;
  auto* pl_cmd = app.add_subcommand("plot", "per-step curves, comparison bars and frame strips");
  pl_cmd->add_option("runs", pl.runs, "run directories");
  pl_cmd->add_option("--names", pl.names, "legend names, one per run");
  pl_cmd->add_option("--out", pl.out, "figure directory")->required();
  pl_cmd->add_option("--frames", pl.frames, "predicted frames written by eval --dump-frames");
  pl_cmd->add_option("--truth", pl.truth, "ground-truth dataset for the frame strip");
  pl_cmd->add_option("--sequence", pl.sequence, "sequence index for the frame strip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  torch::set_num_threads(1);
  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(train);
    if (ft_cmd->parsed()) return cmd_finetune_lp(ft);
    if (ev_cmd->parsed()) return cmd_eval(ev);
    if (ab_cmd->parsed()) return cmd_ablate(ab);
    if (cmp_cmd->parsed()) return cmd_compare(cmp);
    if (pl_cmd->parsed()) return cmd_plot(pl);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kInputError;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kInputError;
  } catch (const ContractError& e) {
    std::cerr << "invalid request: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}
