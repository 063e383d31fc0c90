#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msf/config.hpp"
#include "msf/geometry.hpp"
#include "msf/sampler.hpp"

namespace msf {

enum class MotionKind { kGeneral, kDriving, kCollection };

const char* to_string(MotionKind kind);
MotionKind motion_from_string(const std::string& name);

struct SceneConfig {
  int n_points = 1000;
  double min_depth = 4.0;
  double max_depth = 40.0;
  double image_width = 1280.0;
  double image_height = 720.0;
  CameraIntrinsics intrinsics{800.0, 800.0, 640.0, 360.0};
  double noise_sigma = 0.5;
  double outlier_ratio = 0.0;
  MotionKind motion = MotionKind::kGeneral;
  double planar_fraction = 0.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Reads the keys below from a flat config; missing keys keep defaults.
  /// n_points, min_depth, max_depth, image_width, image_height, fx, fy, cx,
  /// cy, noise_sigma, outlier_ratio, motion, planar_fraction, seed.
  static SceneConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

struct SyntheticScene {
  SceneConfig config;
  bool planar = false;
  std::vector<Correspondence> correspondences;
  std::vector<double> quality;
  std::vector<std::uint8_t> inlier;
  Pose gt_pose;
  EssentialMatrix gt_essential;
  FundamentalMatrix gt_fundamental;
  CameraIntrinsics k1;
  CameraIntrinsics k2;
};

/// Relative motion drawn from one of the motion priors.
///   driving:    yaw in [-10, 10] deg, pitch/roll within 1 deg, travel
///               direction within 15 deg of forward and 2 deg of horizontal.
///   collection: rotation axis within 5 deg of vertical or of the horizontal
///               plane, angle up to 30 deg; travel elevation up to 20 deg.
///   general:    uniform axis, angle up to 30 deg, uniform direction.
Pose sample_motion(MotionKind kind, Rng& rng);

/// Projects random 3D points into two views, adds pixel noise to inliers
/// and replaces an outlier_ratio fraction (Bernoulli per point) with
/// second-image points at least 10 px Sampson error from the true model.
/// Throws GenerationFailed if fewer than n_points survive 10x oversampling.
SyntheticScene generate_scene(const SceneConfig& config);

/// Text format, header "NEFSCENE v1". Throws IoError / FormatError.
void save_scene(const SyntheticScene& scene, const std::string& path);
SyntheticScene load_scene(const std::string& path);

/// Minimum Sampson error an outlier is placed at, in pixels.
inline constexpr double kOutlierMinError = 10.0;

}  // namespace msf
