#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "msf/geometry.hpp"
#include "msf/sampler.hpp"
#include "msf/solvers.hpp"
#include "msf/synth.hpp"

namespace msf::test {

inline constexpr double kDeg = std::numbers::pi / 180.0;

inline SceneConfig scene_config(MotionKind motion, std::uint64_t seed, int n_points = 200,
                                double sigma = 0.0, double outliers = 0.0) {
  SceneConfig c;
  c.motion = motion;
  c.seed = seed;
  c.n_points = n_points;
  c.noise_sigma = sigma;
  c.outlier_ratio = outliers;
  return c;
}

inline SyntheticScene clean_scene(std::uint64_t seed, MotionKind motion = MotionKind::kGeneral,
                                  int n_points = 200) {
  return generate_scene(scene_config(motion, seed, n_points));
}

/// Projects a point given in camera-1 coordinates into both views.
inline Correspondence project(const Pose& pose, const Eigen::Vector3d& x, const CameraIntrinsics& k1,
                              const CameraIntrinsics& k2) {
  const Eigen::Vector3d p1 = k1.matrix() * x;
  const Eigen::Vector3d p2 = k2.matrix() * (pose.rotation * x + pose.translation);
  return {p1.x() / p1.z(), p1.y() / p1.z(), p2.x() / p2.z(), p2.y() / p2.z()};
}

inline double max_sampson(const FundamentalMatrix& f, std::span<const Correspondence> points) {
  double worst = 0.0;
  for (const auto& c : points) worst = std::max(worst, sampson_error(f, c));
  return worst;
}

inline double mean_sampson(const FundamentalMatrix& f, std::span<const Correspondence> points) {
  double sum = 0.0;
  for (const auto& c : points) sum += sampson_error(f, c);
  return points.empty() ? 0.0 : sum / static_cast<double>(points.size());
}

/// Distance between two matrices after unit-norm scaling, minimised over sign.
inline double projective_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d an = a / a.norm();
  const Eigen::Matrix3d bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

inline std::vector<Correspondence> inliers_of(const SyntheticScene& scene) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < scene.correspondences.size(); ++i) {
    if (scene.inlier[i]) out.push_back(scene.correspondences[i]);
  }
  return out;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace msf::test
