#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "msf/config.hpp"
#include "msf/geometry.hpp"
#include "msf/nnfilter.hpp"
#include "msf/sampler.hpp"
#include "msf/solvers.hpp"

namespace msf {

enum class Profile { kLarge, kSmall };

const char* to_string(Profile profile);
Profile profile_from_string(const std::string& name);

struct SprtParams {
  bool enabled = true;
  double epsilon0 = 0.2;  // initial inlier ratio of a good model
  double delta0 = 0.05;   // initial consistency probability of a bad model
  double model_time = 200.0;        // model estimation cost, in point checks
  double models_per_sample = 2.38;  // average solver output count
};

struct LoParams {
  int inner_iterations = 4;
  double threshold_multiplier = 4.0;
};

struct UsacConfig {
  Problem problem = Problem::kEssential;
  double threshold = 2.0;   // px, Sampson
  double confidence = 0.99;
  std::uint64_t max_models = 100000;
  std::uint64_t max_samples = 100000;
  bool filter = false;
  std::size_t batch_size = 10000;
  std::size_t keep = 500;
  SprtParams sprt;
  LoParams lo;
  std::uint64_t seed = 0;

  void apply_profile(Profile profile);
  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Keys: problem, threshold, confidence, max_models, max_samples, filter
  /// (on|off), profile (large|small), batch_size, keep, sprt (on|off),
  /// sprt_epsilon, sprt_delta, lo_iterations, lo_multiplier, seed.
  static UsacConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

struct InlierSet {
  std::size_t count = 0;
  std::vector<std::size_t> indices;
};

/// Correspondences with Sampson error <= threshold.
InlierSet count_inliers(const FundamentalMatrix& model, std::span<const Correspondence> points,
                        double threshold);

/// Sequential probability ratio test state (Wald's SPRT for model
/// verification).
class SprtState {
 public:
  SprtState(const SprtParams& params, std::size_t n_points, Rng& rng);

  double epsilon() const { return epsilon_; }
  double delta() const { return delta_; }
  /// Decision threshold A; +inf when the test is disabled.
  double threshold() const { return threshold_; }
  const std::vector<std::size_t>& order() const { return order_; }

  /// Raises epsilon to the inlier ratio of a new best model.
  void update_epsilon(double inlier_ratio);
  /// Folds the inlier ratio seen by a rejected model into delta.
  void record_rejection(double inlier_ratio);

 private:
  void recompute();

  SprtParams params_;
  double epsilon_;
  double delta_;
  double threshold_;
  double epsilon_at_design_;
  double delta_at_design_;
  double rejected_sum_ = 0.0;
  std::size_t rejected_count_ = 0;
  std::vector<std::size_t> order_;
};

struct SprtDecision {
  bool accepted = false;
  std::size_t points_evaluated = 0;
  InlierSet inliers;  // exact for accepted models
};

/// Evaluates correspondences in the state's random order and rejects as soon
/// as the likelihood ratio exceeds A. Updates delta on rejection.
SprtDecision sprt_verify(const FundamentalMatrix& model, std::span<const Correspondence> points,
                         double threshold, SprtState& state);

struct RefinedModel {
  EpipolarModel model;
  InlierSet inliers;
  double mean_error = 0.0;
};

/// Iterated least squares on the inliers with a threshold schedule shrinking
/// from lo.threshold_multiplier x to 1 x; keeps the model with the most
/// inliers (ties: lower mean Sampson error). Degenerate fits end the loop.
RefinedModel local_optimize(const EpipolarModel& model, std::span<const Correspondence> points,
                            const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                            const UsacConfig& config);

/// log(1 - confidence) / log(1 - ratio^m), +inf when ratio is 0.
double iterations_needed(double inlier_ratio, int m, double confidence);

struct EstimateStats {
  std::uint64_t models_tested = 0;
  std::uint64_t samples_scored = 0;
  std::uint64_t samples_processed = 0;
  std::uint64_t batches_drawn = 0;
  std::uint64_t lo_runs = 0;
  double wall_ms = 0.0;
};

struct EstimateResult {
  EpipolarModel model;
  std::optional<Pose> pose;
  std::vector<std::size_t> inliers;
  EstimateStats stats;
};

/// USAC-style loop with optional minimal-sample filtering. Batches of
/// batch_size PROSAC samples are drawn; with filtering only the top `keep` by
/// network score are processed, best first. The loop stops once the number
/// of processed samples reaches the adaptive bound or a max_* limit. Throws
/// NotEnoughData, ShapeMismatch (network/problem mismatch) and NoModelFound.
EstimateResult estimate(std::span<const Correspondence> points, std::span<const double> quality,
                        const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                        const UsacConfig& config, const FilterNetwork* network = nullptr);

}  // namespace msf
