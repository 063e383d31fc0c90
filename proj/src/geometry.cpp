#include "msf/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "msf/errors.hpp"

namespace msf {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Angle between two 3-vectors in radians, stable near 0 and pi.
double vector_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

const char* to_string(Problem problem) {
  return problem == Problem::kEssential ? "essential" : "fundamental";
}

Problem problem_from_string(const std::string& name) {
  if (name == "essential") return Problem::kEssential;
  if (name == "fundamental") return Problem::kFundamental;
  throw ConfigError("unknown problem '" + name + "' (expected essential|fundamental)");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d CameraIntrinsics::inverse() const {
  Eigen::Matrix3d k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

FundamentalMatrix FundamentalMatrix::normalized(const Eigen::Matrix3d& m) {
  const double norm = m.norm();
  return {norm > 0.0 ? Eigen::Matrix3d(m / norm) : m};
}

double sampson_error(const FundamentalMatrix& model, const Correspondence& c) {
  const Eigen::Matrix3d& f = model.matrix;
  const Eigen::Vector3d x1 = c.x1();
  const Eigen::Vector3d x2 = c.x2();
  const Eigen::Vector3d line2 = f * x1;
  const Eigen::Vector3d line1 = f.transpose() * x2;
  const double residual = x2.dot(line2);
  const double denom = line2(0) * line2(0) + line2(1) * line2(1) +
                       line1(0) * line1(0) + line1(1) * line1(1);
  if (denom < 1e-300) return std::numeric_limits<double>::infinity();
  return std::abs(residual) / std::sqrt(denom);
}

FundamentalMatrix essential_to_fundamental(const EssentialMatrix& e,
                                           const CameraIntrinsics& k1,
                                           const CameraIntrinsics& k2) {
  return FundamentalMatrix::normalized(k2.inverse().transpose() * e.matrix * k1.inverse());
}

EssentialMatrix fundamental_to_essential(const FundamentalMatrix& f,
                                         const CameraIntrinsics& k1,
                                         const CameraIntrinsics& k2) {
  const Eigen::Matrix3d e = k2.matrix().transpose() * f.matrix * k1.matrix();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv(1.0, 1.0, 0.0);
  Eigen::Matrix3d projected = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  return {projected / projected.norm()};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v(2), v(1), v(2), 0.0, -v(0), -v(1), v(0), 0.0;
  return s;
}

EssentialMatrix essential_from_pose(const Pose& pose) {
  Eigen::Matrix3d e = skew(pose.translation) * pose.rotation;
  return {e / e.norm()};
}

std::array<Pose, 4> pose_from_essential(const EssentialMatrix& e) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e.matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  if (!(s(0) > 0.0) || (s(0) - s(1)) > 0.1 * s(0)) {
    throw DegenerateModel("matrix is not essential: singular values " + std::to_string(s(0)) +
                          ", " + std::to_string(s(1)));
  }
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u.col(2) *= -1.0;
  if (v.determinant() < 0.0) v.col(2) *= -1.0;

  Eigen::Matrix3d w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d ra = u * w * v.transpose();
  const Eigen::Matrix3d rb = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();
  return {Pose{ra, t}, Pose{ra, -t}, Pose{rb, t}, Pose{rb, -t}};
}

DepthPair triangulate_depths(const Pose& pose, const Correspondence& c,
                             const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  const Eigen::Vector3d q1 = k1.normalize(c.u1, c.v1);
  const Eigen::Vector3d q2 = k2.normalize(c.u2, c.v2);
  const Eigen::Matrix3d& r = pose.rotation;
  const Eigen::Vector3d& t = pose.translation;

  // Conditioning of the two-ray depth system [R q1, -q2] d = -t: with unit
  // columns its condition number is (1 + |cos|) / sin of the ray angle.
  const Eigen::Vector3d ray1 = (r * q1).normalized();
  const Eigen::Vector3d ray2 = q2.normalized();
  const double sin_angle = ray1.cross(ray2).norm();
  const double cos_angle = std::abs(ray1.dot(ray2));
  if (!(sin_angle * 1e12 > 1.0 + cos_angle)) {
    throw NearParallelRays("triangulation rays are parallel");
  }

  Eigen::Matrix4d a;
  a.row(0) << -1.0, 0.0, q1(0), 0.0;
  a.row(1) << 0.0, -1.0, q1(1), 0.0;
  a.row(2) = q2(0) * Eigen::RowVector4d(r(2, 0), r(2, 1), r(2, 2), t(2)) -
             Eigen::RowVector4d(r(0, 0), r(0, 1), r(0, 2), t(0));
  a.row(3) = q2(1) * Eigen::RowVector4d(r(2, 0), r(2, 1), r(2, 2), t(2)) -
             Eigen::RowVector4d(r(1, 0), r(1, 1), r(1, 2), t(1));
  for (int i = 0; i < 4; ++i) a.row(i).normalize();

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d x = svd.matrixV().col(3);
  const Eigen::Vector3d point = x.head<3>();
  const double depth1 = point(2) / x(3);
  const double depth2 = (r * point + t * x(3))(2) / x(3);
  return {depth1, depth2};
}

std::optional<Pose> cheirality_select(std::span<const Pose> candidates,
                                      std::span<const Correspondence> sample,
                                      const CameraIntrinsics& k1,
                                      const CameraIntrinsics& k2) {
  int best_index = -1;
  int best_count = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    int count = 0;
    for (const Correspondence& c : sample) {
      try {
        const DepthPair d = triangulate_depths(candidates[i], c, k1, k2);
        if (d.depth1 > 0.0 && d.depth2 > 0.0) ++count;
      } catch (const NearParallelRays&) {
      }
    }
    if (count > best_count) {
      best_count = count;
      best_index = static_cast<int>(i);
    }
    if (best_count == static_cast<int>(sample.size())) break;
  }
  if (best_index < 0 || 2 * best_count <= static_cast<int>(sample.size())) return std::nullopt;
  return candidates[static_cast<std::size_t>(best_index)];
}

double rotation_angle_deg(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_term = 0.5 * vee.norm();
  const double cos_term = 0.5 * (r.trace() - 1.0);
  return std::atan2(sin_term, cos_term) * kRadToDeg;
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

PoseError pose_error(const Pose& estimated, const Pose& ground_truth) {
  PoseError err;
  err.rotation_deg =
      rotation_angle_deg(estimated.rotation * ground_truth.rotation.transpose());
  const double angle = vector_angle(estimated.translation, ground_truth.translation) * kRadToDeg;
  err.translation_deg = std::min(angle, 180.0 - angle);
  return err;
}

Eigen::Matrix3d hartley_normalization(std::span<const Eigen::Vector2d> points) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double sq = 0.0;
  for (const auto& p : points) sq += (p - centroid).squaredNorm();
  const double rms = std::sqrt(sq / static_cast<double>(points.size()));
  const double scale = rms > 0.0 ? std::sqrt(2.0) / rms : 1.0;
  Eigen::Matrix3d t;
  t << scale, 0.0, -scale * centroid(0), 0.0, scale, -scale * centroid(1), 0.0, 0.0, 1.0;
  return t;
}

}  // namespace msf
