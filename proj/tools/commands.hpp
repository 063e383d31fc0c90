#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace msf::cli {

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string config;  // optional key = value file
  std::string out;
  std::size_t jobs = 1;
  std::optional<std::string> problem;
  std::optional<std::string> filter;
  std::optional<std::string> profile;
};

struct SynthOptions {
  std::size_t count = 10;
};

struct TrainOptions {
  std::string scenes;
  std::optional<std::string> expert;
};

struct EvalFilterOptions {
  std::string scenes;
  std::string weights;  // empty: unfiltered rows only
  std::size_t pool = 65536;
  std::size_t max_rate = 256;
};

struct BenchOptions {
  std::string scenes;
  std::string weights;
  bool oracle = false;
};

struct ScoreOptions {
  std::string weights;
  std::string samples;
};

/// Each command returns its process exit code and throws msf::Error on
/// failure.
int cmd_synth(const CommonOptions& common, const SynthOptions& options);
int cmd_train(const CommonOptions& common, const TrainOptions& options);
int cmd_eval_filter(const CommonOptions& common, const EvalFilterOptions& options);
int cmd_bench(const CommonOptions& common, const BenchOptions& options);
int cmd_score(const CommonOptions& common, const ScoreOptions& options);

}  // namespace msf::cli
