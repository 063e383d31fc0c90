#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msf/geometry.hpp"
#include "msf/sampler.hpp"
#include "msf/synth.hpp"

namespace msf {

struct LabelThresholds {
  double sampson_min = 2.0;  // px
  double sampson_max = 5.0;  // px
  double pose_min = 5.0;     // deg
  double pose_max = 30.0;    // deg
};

enum class ExpertMode { kNone, kDriving, kCollection };

const char* to_string(ExpertMode mode);
ExpertMode expert_from_string(const std::string& name);

struct LabeledSample {
  MinimalSample sample;
  double l1 = 0.0;
  double l2 = 0.0;
  bool l2_valid = false;  // true iff l1 == 1
  std::optional<double> l_expert;
};

/// 1 at or below e_min, 0 at or above e_max, linear in between.
double interpolate_label(double error, double e_min, double e_max);

/// Label from the largest Sampson error of the sample under the true model.
double sampson_label(std::span<const Correspondence> sample, const FundamentalMatrix& gt_model,
                     const LabelThresholds& thresholds = {});

/// Smallest max(rotation, translation) error over the minimal solver's
/// candidates; nullopt when the solver yields no usable pose.
std::optional<double> best_pose_error(std::span<const Correspondence> sample, const Pose& gt_pose,
                                      Problem problem, const CameraIntrinsics& k1,
                                      const CameraIntrinsics& k2);

/// Label from the best candidate's pose error; solver failure gives 0.
double pose_label(std::span<const Correspondence> sample, const Pose& gt_pose, Problem problem,
                  const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                  const LabelThresholds& thresholds = {});

/// Deviation of a pose from planar driving motion: the larger of the
/// rotation left after removing yaw and the elevation of the translation,
/// in degrees.
double driving_deviation_deg(const Pose& pose);

/// Deviation of the rotation axis from the nearer of the vertical axis and
/// the horizontal plane, in degrees (0 for the identity).
double collection_deviation_deg(const Pose& pose);

double expert_label_driving(const Pose& pose, const LabelThresholds& thresholds = {});
double expert_label_collection(const Pose& pose, const LabelThresholds& thresholds = {});

/// Expert label of a sample from its own solved poses: the best label over
/// the solver's candidates, 0 on solver failure.
double expert_label(std::span<const Correspondence> sample, ExpertMode mode, Problem problem,
                    const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                    const LabelThresholds& thresholds = {});

struct DatasetOptions {
  Problem problem = Problem::kEssential;
  ExpertMode expert = ExpertMode::kNone;
  std::size_t samples_per_scene = 512;
  std::uint64_t seed = 0;
  LabelThresholds thresholds;
  std::size_t jobs = 1;  // worker threads; output does not depend on it
};

/// Uniform minimal samples per scene with all labels. Scene i draws from its
/// own stream seeded by (seed, i). Throws NotEnoughData.
std::vector<LabeledSample> build_dataset(const std::vector<SyntheticScene>& scenes,
                                         const DatasetOptions& options);

/// Stream seeded by (master seed, index).
Rng derived_rng(std::uint64_t seed, std::uint64_t index);

/// Plain-text dataset file: header "# m=<m> expert=<mode> seed=<seed>",
/// then one comma-separated record per line.
void save_dataset(const std::vector<LabeledSample>& data, int m, ExpertMode expert,
                  std::uint64_t seed, const std::string& path);

struct DatasetFile {
  int m = 0;
  ExpertMode expert = ExpertMode::kNone;
  std::uint64_t seed = 0;
  std::vector<LabeledSample> samples;
};

DatasetFile load_dataset(const std::string& path);

}  // namespace msf
