#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "manifest.hpp"
#include "msf/config.hpp"
#include "msf/errors.hpp"
#include "msf/experiments.hpp"
#include "msf/labels.hpp"
#include "msf/nnfilter.hpp"
#include "msf/ransac.hpp"
#include "msf/synth.hpp"
#include "msf/parallel.hpp"

namespace fs = std::filesystem;

namespace msf::cli {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

KeyValues load_config(const CommonOptions& common) {
  return common.config.empty() ? KeyValues{} : KeyValues::load(common.config);
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("out: output directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out);
  return fs::path(out);
}

std::vector<fs::path> list_scenes(const std::string& dir) {
  if (dir.empty()) throw ConfigError("scenes: scene directory is required");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("scene_") && name.ends_with(".txt")) {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

std::vector<SyntheticScene> load_scenes(const std::vector<fs::path>& paths, std::size_t jobs) {
  std::vector<SyntheticScene> scenes(paths.size());
  parallel_for(paths.size(), jobs, [&](std::size_t i) { scenes[i] = load_scene(paths[i].string()); });
  return scenes;
}

std::string scene_file_name(std::size_t index) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "scene_%05zu.txt", index);
  return buffer;
}

/// CSV file with a versioned schema comment and a column header.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& schema, const std::vector<std::string>& columns)
      : path_(path), out_(path), columns_(columns.size()) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << "# schema=" << schema << " columns=" << columns.size() << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw Error("CSV row width mismatch in " + path_.string());
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

std::string num(double v) { return format_double(v); }
std::string num(std::uint64_t v) { return std::to_string(v); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string sanitize(std::string text) {
  std::replace(text.begin(), text.end(), ',', ';');
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

void echo(std::map<std::string, std::string>& into, const KeyValues& kv) {
  for (const auto& [k, v] : kv.entries()) into[k] = v;
}

Problem resolve_problem(const CommonOptions& common, const KeyValues& kv) {
  return problem_from_string(common.problem.value_or(kv.get_string("problem", "essential")));
}

}  // namespace

int cmd_synth(const CommonOptions& common, const SynthOptions& options) {
  const auto start = Clock::now();
  const KeyValues kv = load_config(common);
  kv.require_known({"n_points", "min_depth", "max_depth", "image_width", "image_height", "fx", "fy",
                    "cx", "cy", "noise_sigma", "outlier_ratio", "motion", "planar_fraction", "seed"});
  SceneConfig base = SceneConfig::from_key_values(kv);
  base.validate();
  const fs::path out = prepare_out(common.out);

  std::vector<std::string> names(options.count);
  parallel_for(options.count, common.jobs, [&](std::size_t i) {
    SceneConfig config = base;
    config.seed = scene_seed(common.seed, i);
    names[i] = scene_file_name(i);
    save_scene(generate_scene(config), (out / names[i]).string());
  });

  RunManifest manifest;
  manifest.command = "synth";
  manifest.seed = common.seed;
  KeyValues echoed = base.to_key_values();
  echoed.set("seed", std::to_string(common.seed));
  echoed.set("count", std::to_string(options.count));
  echo(manifest.config, echoed);
  for (const auto& name : names) manifest.outputs.push_back({name, true});
  manifest.wall_time_s = seconds_since(start);
  write_manifest(manifest, out);
  return 0;
}

int cmd_train(const CommonOptions& common, const TrainOptions& options) {
  const auto start = Clock::now();
  const KeyValues kv = load_config(common);
  kv.require_known({"problem", "expert", "samples_per_scene", "learning_rate", "epochs",
                    "batch_size", "class_smoothing", "patience", "validation_fraction",
                    "aggregate_weight"});
  DatasetOptions data;
  data.problem = resolve_problem(common, kv);
  data.expert = expert_from_string(options.expert.value_or(kv.get_string("expert", "none")));
  data.samples_per_scene = kv.get_uint("samples_per_scene", data.samples_per_scene);
  data.seed = common.seed;
  data.jobs = common.jobs;
  if (data.samples_per_scene == 0) throw ConfigError("samples_per_scene: must be positive");

  TrainConfig config;
  config.learning_rate = kv.get_double("learning_rate", config.learning_rate);
  config.epochs = static_cast<int>(kv.get_int("epochs", config.epochs));
  config.batch_size = static_cast<int>(kv.get_int("batch_size", config.batch_size));
  config.class_smoothing = kv.get_double("class_smoothing", config.class_smoothing);
  config.patience = static_cast<int>(kv.get_int("patience", config.patience));
  config.validation_fraction = kv.get_double("validation_fraction", config.validation_fraction);
  config.aggregate_weight = kv.get_double("aggregate_weight", config.aggregate_weight);
  config.seed = common.seed;
  config.validate();

  const auto paths = list_scenes(options.scenes);
  if (paths.empty()) throw EmptyDataset("no scene files in " + options.scenes);
  const fs::path out = prepare_out(common.out);
  const std::vector<SyntheticScene> scenes = load_scenes(paths, common.jobs);
  config.image_width = scenes.front().config.image_width;
  config.image_height = scenes.front().config.image_height;

  const std::vector<LabeledSample> dataset = build_dataset(scenes, data);
  const TrainResult result = train(dataset, config);
  save_weights(result.network, (out / "weights.nefs").string());

  const int n = result.network.n_branches();
  std::vector<std::string> columns{"epoch", "train_loss", "validation_loss"};
  for (int b = 0; b < n; ++b) columns.push_back("validation_branch_" + std::to_string(b + 1));
  columns.push_back("validation_aggregate");
  CsvWriter log(out / "train_log.csv", "train_log/1", columns);
  for (const auto& e : result.history) {
    std::vector<std::string> cells{std::to_string(e.epoch), num(e.train_loss), num(e.validation_loss)};
    for (double v : e.validation_branch) cells.push_back(num(v));
    cells.push_back(num(e.validation_aggregate));
    log.row(cells);
  }
  log.close();

  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = common.seed;
  manifest.config = {{"scenes", options.scenes},
                     {"scene_count", std::to_string(scenes.size())},
                     {"problem", to_string(data.problem)},
                     {"expert", to_string(data.expert)},
                     {"samples_per_scene", std::to_string(data.samples_per_scene)},
                     {"learning_rate", num(config.learning_rate)},
                     {"epochs", std::to_string(config.epochs)},
                     {"batch_size", std::to_string(config.batch_size)},
                     {"class_smoothing", num(config.class_smoothing)},
                     {"patience", std::to_string(config.patience)},
                     {"validation_fraction", num(config.validation_fraction)},
                     {"aggregate_weight", num(config.aggregate_weight)},
                     {"best_epoch", std::to_string(result.best_epoch)}};
  manifest.outputs = {{"weights.nefs", true}, {"train_log.csv", true}};
  manifest.wall_time_s = seconds_since(start);
  write_manifest(manifest, out);
  return 0;
}

int cmd_eval_filter(const CommonOptions& common, const EvalFilterOptions& options) {
  const auto start = Clock::now();
  const KeyValues kv = load_config(common);
  kv.require_known({"problem"});
  const Problem problem = resolve_problem(common, kv);
  if (options.pool == 0) throw ConfigError("pool: must be positive");
  if (options.max_rate == 0 || options.max_rate > options.pool) {
    throw ConfigError("max_rate: must be in [1, pool]");
  }

  std::optional<FilterNetwork> network;
  if (!options.weights.empty()) network = load_weights(options.weights);
  if (network && network->m != sample_size(problem)) {
    throw ShapeMismatch("weights score samples of " + std::to_string(network->m) +
                        " correspondences, problem " + to_string(problem) + " needs " +
                        std::to_string(sample_size(problem)));
  }
  const auto paths = list_scenes(options.scenes);
  if (paths.empty()) throw EmptyDataset("no scene files in " + options.scenes);
  const fs::path out = prepare_out(common.out);
  const std::vector<SyntheticScene> scenes = load_scenes(paths, common.jobs);

  const auto rates = power_of_two_rates(options.max_rate);
  std::vector<std::vector<PrecisionRow>> rows(scenes.size());
  parallel_for(scenes.size(), common.jobs, [&](std::size_t i) {
    rows[i] = pool_precision(scenes[i], network ? &*network : nullptr, problem, options.pool, rates,
                             scene_seed(common.seed, i));
  });

  CsvWriter csv(out / "precision.csv", "precision/1",
                {"scene", "keep_rate", "kept", "good", "precision"});
  std::vector<PrecisionRow> total(rates.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t r = 0; r < rows[i].size(); ++r) {
      const auto& row = rows[i][r];
      csv.row({std::to_string(i), num(row.keep_rate), num(row.kept), num(row.good), num(row.precision())});
      total[r].keep_rate = row.keep_rate;
      total[r].kept += row.kept;
      total[r].good += row.good;
    }
  }
  for (const auto& row : total) {
    csv.row({"all", num(row.keep_rate), num(row.kept), num(row.good), num(row.precision())});
  }
  csv.close();

  RunManifest manifest;
  manifest.command = "eval-filter";
  manifest.seed = common.seed;
  manifest.config = {{"scenes", options.scenes},
                     {"scene_count", std::to_string(scenes.size())},
                     {"weights", options.weights},
                     {"problem", to_string(problem)},
                     {"pool", std::to_string(options.pool)},
                     {"max_rate", std::to_string(options.max_rate)}};
  manifest.outputs = {{"precision.csv", true}};
  manifest.wall_time_s = seconds_since(start);
  write_manifest(manifest, out);
  return 0;
}

int cmd_bench(const CommonOptions& common, const BenchOptions& options) {
  const auto start = Clock::now();
  const KeyValues kv = load_config(common);
  kv.require_known({"problem", "profile", "threshold", "confidence", "max_models", "max_samples",
                    "filter", "batch_size", "keep", "sprt", "sprt_epsilon", "sprt_delta",
                    "lo_iterations", "lo_multiplier", "seed"});
  UsacConfig base = UsacConfig::from_key_values(kv);
  if (common.problem) base.problem = problem_from_string(*common.problem);
  if (common.profile) base.apply_profile(profile_from_string(*common.profile));
  bool with_filter = !options.weights.empty();
  if (common.filter) {
    if (*common.filter == "on") {
      if (options.weights.empty()) throw ConfigError("filter: 'on' requires --weights");
      with_filter = true;
    } else if (*common.filter == "off") {
      with_filter = false;
    } else {
      throw ConfigError("filter: expected on or off, got '" + *common.filter + "'");
    }
  }
  base.filter = false;
  base.validate();

  std::optional<FilterNetwork> network;
  if (with_filter) network = load_weights(options.weights, sample_size(base.problem));
  const auto paths = list_scenes(options.scenes);
  if (paths.empty()) throw EmptyDataset("no scene files in " + options.scenes);
  const fs::path out = prepare_out(common.out);
  const std::vector<SyntheticScene> scenes = load_scenes(paths, common.jobs);

  const std::vector<std::string> modes = with_filter ? std::vector<std::string>{"off", "on"}
                                                     : std::vector<std::string>{"off"};
  std::vector<std::vector<BenchOutcome>> results(scenes.size());
  parallel_for(scenes.size(), common.jobs, [&](std::size_t i) {
    UsacConfig config = base;
    config.seed = scene_seed(common.seed, i);
    for (const auto& mode : modes) {
      config.filter = mode == "on";
      results[i].push_back(run_bench(scenes[i], config, config.filter ? &*network : nullptr,
                                     options.oracle));
    }
  });

  const std::vector<std::string> metric_names{
      "rotation_deg", "translation_deg", "pose_error_deg", "inliers",        "models_tested",
      "samples_scored", "samples_processed", "batches_drawn", "lo_runs"};
  auto metrics = [](const BenchOutcome& r) {
    return std::vector<double>{r.rotation_deg,
                               r.translation_deg,
                               r.pose_error_deg(),
                               static_cast<double>(r.inliers),
                               static_cast<double>(r.stats.models_tested),
                               static_cast<double>(r.stats.samples_scored),
                               static_cast<double>(r.stats.samples_processed),
                               static_cast<double>(r.stats.batches_drawn),
                               static_cast<double>(r.stats.lo_runs)};
  };
  std::vector<std::string> columns{"scene", "mode", "status"};
  columns.insert(columns.end(), metric_names.begin(), metric_names.end());
  columns.push_back("message");
  CsvWriter csv(out / "bench.csv", "bench/1", columns);
  CsvWriter timing(out / "timing.csv", "bench_timing/1", {"scene", "mode", "wall_ms"});

  bool any_ok = false;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    std::vector<std::vector<double>> columns_by_metric(metric_names.size());
    std::vector<double> wall;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const BenchOutcome& r = results[i][m];
      any_ok = any_ok || r.ok;
      const auto values = metrics(r);
      std::vector<std::string> cells{std::to_string(i), modes[m], r.ok ? "ok" : "error"};
      for (std::size_t k = 0; k < values.size(); ++k) {
        cells.push_back(num(values[k]));
        columns_by_metric[k].push_back(values[k]);
      }
      cells.push_back(sanitize(r.error));
      csv.row(cells);
      timing.row({std::to_string(i), modes[m], num(r.stats.wall_ms)});
      wall.push_back(r.stats.wall_ms);
    }
    for (const char* stat : {"median", "mean"}) {
      const bool is_median = std::string(stat) == "median";
      std::vector<std::string> cells{stat, modes[m], "summary"};
      for (const auto& column : columns_by_metric) {
        cells.push_back(num(is_median ? median(column) : mean(column)));
      }
      cells.push_back("");
      csv.row(cells);
      timing.row({stat, modes[m], num(is_median ? median(wall) : mean(wall))});
    }
  }
  csv.close();
  timing.close();

  RunManifest manifest;
  manifest.command = "bench";
  manifest.seed = common.seed;
  echo(manifest.config, base.to_key_values());
  manifest.config["scenes"] = options.scenes;
  manifest.config["scene_count"] = std::to_string(scenes.size());
  manifest.config["weights"] = options.weights;
  manifest.config["filter"] = with_filter ? "on" : "off";
  manifest.config["oracle"] = options.oracle ? "on" : "off";
  manifest.outputs = {{"bench.csv", true}, {"timing.csv", false}};
  manifest.wall_time_s = seconds_since(start);
  write_manifest(manifest, out);
  if (!any_ok) {
    std::cerr << "error: no scene produced a model\n";
    return 3;
  }
  return 0;
}

int cmd_score(const CommonOptions& common, const ScoreOptions& options) {
  const auto start = Clock::now();
  const FilterNetwork network = load_weights(options.weights);
  if (common.problem && sample_size(problem_from_string(*common.problem)) != network.m) {
    throw ShapeMismatch("weights score samples of " + std::to_string(network.m) +
                        " correspondences, problem " + *common.problem + " needs " +
                        std::to_string(sample_size(problem_from_string(*common.problem))));
  }
  std::ifstream in(options.samples);
  if (!in) throw IoError("cannot read " + options.samples);

  const std::size_t fields = static_cast<std::size_t>(network.m) * 4;
  std::vector<MinimalSample> samples;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(options.samples + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (values.size() < fields) {
      throw FormatError(options.samples + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(fields) + " values, got " + std::to_string(values.size()));
    }
    MinimalSample sample;
    for (std::size_t j = 0; j < static_cast<std::size_t>(network.m); ++j) {
      sample.push_back({values[4 * j], values[4 * j + 1], values[4 * j + 2], values[4 * j + 3]});
    }
    samples.push_back(std::move(sample));
  }

  const fs::path out = prepare_out(common.out);
  std::vector<std::string> columns{"row"};
  for (int b = 0; b < network.n_branches(); ++b) columns.push_back("branch_" + std::to_string(b + 1));
  columns.push_back("aggregate");
  CsvWriter csv(out / "scores.csv", "scores/1", columns);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ScoreOutput s = forward(network, samples[i]);
    std::vector<std::string> cells{std::to_string(i)};
    for (double v : s.branches) cells.push_back(num(v));
    cells.push_back(num(s.aggregate));
    csv.row(cells);
  }
  csv.close();

  RunManifest manifest;
  manifest.command = "score";
  manifest.seed = common.seed;
  manifest.config = {{"weights", options.weights},
                     {"samples", options.samples},
                     {"rows", std::to_string(samples.size())}};
  manifest.outputs = {{"scores.csv", true}};
  manifest.wall_time_s = seconds_since(start);
  write_manifest(manifest, out);
  return 0;
}

}  // namespace msf::cli
