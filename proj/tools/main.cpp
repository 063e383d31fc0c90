#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "commands.hpp"
#include "msf/errors.hpp"

namespace {

using namespace msf::cli;

void add_common(CLI::App* app, CommonOptions& common) {
  app->add_option("--seed", common.seed, "Master seed")->capture_default_str();
  app->add_option("--config", common.config, "key = value configuration file");
  app->add_option("--out", common.out, "Output directory")->required();
  app->add_option("--jobs", common.jobs, "Worker threads for per-scene work")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--problem", common.problem, "essential or fundamental")
      ->check(CLI::IsMember({"essential", "fundamental"}));
}

int data_error(const std::exception& e) {
  std::cerr << "data error: " << e.what() << '\n';
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural minimal-sample filtering for two-view epipolar estimation"};
  app.require_subcommand(1);

  CommonOptions common;
  common.jobs = std::max(1u, std::thread::hardware_concurrency());

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic two-view scenes");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--count", synth.count, "Number of scenes")->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Build a labelled dataset and train a filter");
  add_common(train_cmd, common);
  train_cmd->add_option("--scenes", train.scenes, "Scene directory")->required();
  train_cmd->add_option("--expert", train.expert, "Expert branch: none, driving or collection")
      ->check(CLI::IsMember({"none", "driving", "collection"}));

  EvalFilterOptions eval;
  auto* eval_cmd = app.add_subcommand("eval-filter", "Pool precision against keep rate");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--scenes", eval.scenes, "Scene directory")->required();
  eval_cmd->add_option("--weights", eval.weights, "Filter weights; omit for the unfiltered pool");
  eval_cmd->add_option("--pool", eval.pool, "Pool size per scene")->capture_default_str();
  eval_cmd->add_option("--max-rate", eval.max_rate, "Largest keep rate (powers of two)")
      ->capture_default_str();

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Run the robust estimator per scene");
  add_common(bench_cmd, common);
  bench_cmd->add_option("--scenes", bench.scenes, "Scene directory")->required();
  bench_cmd->add_option("--weights", bench.weights, "Filter weights");
  bench_cmd->add_option("--filter", common.filter, "Also run with the filter: on or off")
      ->check(CLI::IsMember({"on", "off"}));
  bench_cmd->add_option("--profile", common.profile, "large (10000/500) or small (128/12)")
      ->check(CLI::IsMember({"large", "small"}));
  bench_cmd->add_flag("--oracle", bench.oracle, "Use true inlier flags as quality scores");

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Score minimal samples from a CSV file");
  add_common(score_cmd, common);
  score_cmd->add_option("--weights", score.weights, "Filter weights")->required();
  score_cmd->add_option("--samples", score.samples, "Samples file, 4m values per row")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) return cmd_synth(common, synth);
    if (*train_cmd) return cmd_train(common, train);
    if (*eval_cmd) return cmd_eval_filter(common, eval);
    if (*bench_cmd) return cmd_bench(common, bench);
    if (*score_cmd) return cmd_score(common, score);
  } catch (const msf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const msf::FormatError& e) {
    return data_error(e);
  } catch (const msf::IoError& e) {
    return data_error(e);
  } catch (const msf::EmptyDataset& e) {
    return data_error(e);
  } catch (const msf::ShapeMismatch& e) {
    return data_error(e);
  } catch (const msf::NotEnoughData& e) {
    return data_error(e);
  } catch (const msf::GenerationFailed& e) {
    return data_error(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}
