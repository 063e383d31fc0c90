#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace msf {

/// A putative point match between two images, in pixels (origin top-left).
struct Correspondence {
  double u1 = 0.0;
  double v1 = 0.0;
  double u2 = 0.0;
  double v2 = 0.0;

  /// The same match seen with the two images exchanged.
  Correspondence swapped() const { return {u2, v2, u1, v1}; }

  Eigen::Vector3d x1() const { return {u1, v1, 1.0}; }
  Eigen::Vector3d x2() const { return {u2, v2, 1.0}; }

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

/// m correspondences (5 for essential, 7 for fundamental estimation).
using MinimalSample = std::vector<Correspondence>;

enum class Problem { kEssential, kFundamental };

/// Minimal sample size for a problem.
constexpr int sample_size(Problem problem) {
  return problem == Problem::kEssential ? 5 : 7;
}

const char* to_string(Problem problem);
Problem problem_from_string(const std::string& name);

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;
  /// Pixel -> normalized image coordinates (homogeneous, last entry 1).
  Eigen::Vector3d normalize(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Relative pose of camera 2 w.r.t. camera 1: X2 = R X1 + t, with |t| = 1.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::UnitZ();
};

struct EssentialMatrix {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Zero();
};

/// Epipolar model in pixel units, x2^T F x1 = 0. Canonical scale is unit
/// Frobenius norm.
struct FundamentalMatrix {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Zero();

  /// Rescales to unit Frobenius norm.
  static FundamentalMatrix normalized(const Eigen::Matrix3d& m);
};

struct DepthPair {
  double depth1 = 0.0;
  double depth2 = 0.0;
};

struct PoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;

  double max() const { return rotation_deg > translation_deg ? rotation_deg : translation_deg; }
};

/// First-order (Sampson) distance of a correspondence to the epipolar
/// constraint, in pixels. +inf when both epipolar line gradients vanish.
double sampson_error(const FundamentalMatrix& model, const Correspondence& c);

/// F = K2^-T E K1^-1, rescaled to unit Frobenius norm.
FundamentalMatrix essential_to_fundamental(const EssentialMatrix& e,
                                           const CameraIntrinsics& k1,
                                           const CameraIntrinsics& k2);

/// E = K2^T F K1 projected onto the essential manifold (two equal singular
/// values, third zero), unit Frobenius norm.
EssentialMatrix fundamental_to_essential(const FundamentalMatrix& f,
                                         const CameraIntrinsics& k1,
                                         const CameraIntrinsics& k2);

/// E = [t]x R, unit Frobenius norm.
EssentialMatrix essential_from_pose(const Pose& pose);

/// The four (R, t) decompositions of E: {Ra, Rb} x {+t, -t}, in that order.
/// Throws DegenerateModel if the two leading singular values differ by more
/// than 10% relative.
std::array<Pose, 4> pose_from_essential(const EssentialMatrix& e);

/// Linear (DLT) triangulation; depths are signed distances along each
/// camera's optical axis. Throws NearParallelRays when the system's
/// condition number exceeds 1e12.
DepthPair triangulate_depths(const Pose& pose, const Correspondence& c,
                             const CameraIntrinsics& k1, const CameraIntrinsics& k2);

/// Picks the candidate with the most points in front of both cameras. Ties
/// go to the lowest index; nullopt unless the winner has a strict majority.
std::optional<Pose> cheirality_select(std::span<const Pose> candidates,
                                      std::span<const Correspondence> sample,
                                      const CameraIntrinsics& k1,
                                      const CameraIntrinsics& k2);

/// Rotation angle of R_est R_gt^T and sign-agnostic translation angle, in
/// degrees.
PoseError pose_error(const Pose& estimated, const Pose& ground_truth);

// Rotation helpers.
double rotation_angle_deg(const Eigen::Matrix3d& r);
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle_rad);
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Hartley normalization: similarity T with T * centroid = 0 and RMS
/// distance sqrt(2) for the given 2D points.
Eigen::Matrix3d hartley_normalization(std::span<const Eigen::Vector2d> points);

}  // namespace msf
