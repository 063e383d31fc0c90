#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "msf/errors.hpp"
#include "msf/solvers.hpp"

namespace msf {

namespace {

using Matrix9d = Eigen::Matrix<double, 9, 9>;
using Vector9d = Eigen::Matrix<double, 9, 1>;

Eigen::Matrix3d reshape(const Vector9d& v) {
  Eigen::Matrix3d m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

// Row of the design matrix for x2^T F x1 = 0 with F flattened row-major.
Eigen::Matrix<double, 1, 9> epipolar_row(const Eigen::Vector3d& x1, const Eigen::Vector3d& x2) {
  Eigen::Matrix<double, 1, 9> row;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) row(3 * i + j) = x2(i) * x1(j);
  }
  return row;
}

Eigen::Matrix3d adjugate(const Eigen::Matrix3d& m) {
  Eigen::Matrix3d adj;
  adj(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  adj(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
  adj(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  adj(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
  adj(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  adj(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
  adj(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  adj(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
  adj(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return adj;
}

Eigen::Matrix3d enforce_rank2(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = svd.singularValues();
  s(2) = 0.0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// Sign-agnostic distance between unit-norm models.
double model_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return std::min((a - b).norm(), (a + b).norm());
}

constexpr int kSampsonReweightPasses = 3;
constexpr int kManifoldIterations = 10;

// Signed Sampson distances of all points under the essential matrix of `pose`.
void sampson_residuals(const Pose& pose, std::span<const Correspondence> points,
                       const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                       Eigen::VectorXd& out) {
  const Eigen::Matrix3d f = essential_to_fundamental(essential_from_pose(pose), k1, k2).matrix;
  out.resize(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d x1 = points[i].x1();
    const Eigen::Vector3d x2 = points[i].x2();
    const Eigen::Vector3d l2 = f * x1;
    const Eigen::Vector3d l1 = f.transpose() * x2;
    const double d = l2.head<2>().squaredNorm() + l1.head<2>().squaredNorm();
    out(static_cast<Eigen::Index>(i)) = d > 0.0 ? x2.dot(l2) / std::sqrt(d) : 0.0;
  }
}

// Pose moved by a rotation increment (first three entries) and a tangent
// step of the unit translation (last two).
Pose perturb(const Pose& pose, const Eigen::Matrix<double, 5, 1>& delta) {
  Pose out;
  const Eigen::Vector3d w = delta.head<3>();
  const double angle = w.norm();
  out.rotation = angle > 0.0 ? Eigen::Matrix3d(axis_angle(w / angle, angle) * pose.rotation)
                             : pose.rotation;
  const Eigen::Vector3d& t = pose.translation;
  const Eigen::Vector3d helper =
      std::abs(t.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d b1 = t.cross(helper).normalized();
  const Eigen::Vector3d b2 = t.cross(b1);
  out.translation = (t + delta(3) * b1 + delta(4) * b2).normalized();
  return out;
}

// Levenberg-Marquardt on (R, t) minimising squared Sampson distances, so the
// result stays on the essential manifold.
EssentialMatrix refine_on_manifold(const EssentialMatrix& e, std::span<const Correspondence> points,
                                   const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  Pose pose;
  try {
    pose = pose_from_essential(e)[0];
  } catch (const DegenerateModel&) {
    return e;
  }
  Eigen::VectorXd r;
  Eigen::VectorXd trial;
  sampson_residuals(pose, points, k1, k2, r);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  constexpr double kStep = 1e-7;
  Eigen::Matrix<double, Eigen::Dynamic, 5> jac(r.size(), 5);
  for (int iter = 0; iter < kManifoldIterations; ++iter) {
    for (int k = 0; k < 5; ++k) {
      Eigen::Matrix<double, 5, 1> d = Eigen::Matrix<double, 5, 1>::Zero();
      d(k) = kStep;
      sampson_residuals(perturb(pose, d), points, k1, k2, trial);
      jac.col(k) = (trial - r) / kStep;
    }
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
    const Eigen::Matrix<double, 5, 1> jtr = jac.transpose() * r;
    bool improved = false;
    for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      a.diagonal() *= 1.0 + lambda;
      const Eigen::Matrix<double, 5, 1> delta = a.ldlt().solve(-jtr);
      if (!delta.allFinite()) break;
      const Pose next = perturb(pose, delta);
      sampson_residuals(next, points, k1, k2, trial);
      const double next_cost = trial.squaredNorm();
      if (next_cost < cost) {
        pose = next;
        r = trial;
        improved = cost - next_cost > 1e-12 * cost;
        cost = next_cost;
        lambda = std::max(lambda * 0.1, 1e-9);
        if (!improved) break;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return essential_from_pose(pose);
}

struct NormalizedPoints {
  Eigen::Matrix3d t1;
  Eigen::Matrix3d t2;
  std::vector<Eigen::Vector3d> x1;
  std::vector<Eigen::Vector3d> x2;
};

NormalizedPoints normalize_points(const std::vector<Eigen::Vector2d>& p1,
                                  const std::vector<Eigen::Vector2d>& p2) {
  NormalizedPoints out;
  out.t1 = hartley_normalization(p1);
  out.t2 = hartley_normalization(p2);
  out.x1.reserve(p1.size());
  out.x2.reserve(p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    out.x1.push_back(out.t1 * p1[i].homogeneous());
    out.x2.push_back(out.t2 * p2[i].homogeneous());
  }
  return out;
}

// Least-squares null vector of the stacked (optionally weighted) epipolar
// rows; throws when the design matrix has rank below 8.
Eigen::Matrix3d solve_linear_eight_point(const NormalizedPoints& pts,
                                         const std::vector<double>& weights = {}) {
  const auto n = static_cast<Eigen::Index>(pts.x1.size());
  Eigen::Matrix<double, Eigen::Dynamic, 9> a(std::max<Eigen::Index>(n, 9), 9);
  a.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    a.row(i) = epipolar_row(pts.x1[k], pts.x2[k]);
    if (!weights.empty()) a.row(i) *= weights[k];
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 9>> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(7) > 1e-10 * s(0))) {
    throw DegenerateSample("eight-point design matrix has rank below 8");
  }
  return reshape(svd.matrixV().col(8));
}

}  // namespace

std::vector<FundamentalMatrix> seven_point_fundamental(std::span<const Correspondence> sample) {
  if (sample.size() != 7) throw ShapeMismatch("seven-point solver needs exactly 7 correspondences");
  std::vector<Eigen::Vector2d> p1;
  std::vector<Eigen::Vector2d> p2;
  for (const auto& c : sample) {
    p1.emplace_back(c.u1, c.v1);
    p2.emplace_back(c.u2, c.v2);
  }
  const NormalizedPoints pts = normalize_points(p1, p2);

  Matrix9d a = Matrix9d::Zero();
  for (int i = 0; i < 7; ++i) a.row(i) = epipolar_row(pts.x1[i], pts.x2[i]);
  Eigen::JacobiSVD<Matrix9d> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(6) > 1e-10 * s(0))) {
    throw DegenerateSample("seven-point design matrix has rank below 7");
  }
  const Eigen::Matrix3d f1 = reshape(svd.matrixV().col(7));
  const Eigen::Matrix3d f2 = reshape(svd.matrixV().col(8));

  // det(f2 + t d) = c0 + c1 t + c2 t^2 + c3 t^3.
  const Eigen::Matrix3d d = f1 - f2;
  const double c0 = f2.determinant();
  const double c1 = (adjugate(f2) * d).trace();
  const double c2 = (adjugate(d) * f2).trace();
  const double c3 = d.determinant();

  std::vector<double> roots;
  try {
    roots = solve_cubic(c3, c2, c1, c0);
  } catch (const DegenerateInput&) {
    return {};
  }

  std::vector<FundamentalMatrix> out;
  for (double t : roots) {
    Eigen::Matrix3d f = f2 + t * d;
    f = pts.t2.transpose() * f * pts.t1;
    f = enforce_rank2(f / f.norm());
    const FundamentalMatrix candidate = FundamentalMatrix::normalized(f);
    bool duplicate = false;
    for (const auto& existing : out) {
      if (model_distance(existing.matrix, candidate.matrix) < 1e-8) duplicate = true;
    }
    if (!duplicate) out.push_back(candidate);
  }
  return out;
}

EpipolarModel eight_point_least_squares(std::span<const Correspondence> points, Problem problem,
                                        const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  if (points.size() < 8) throw NotEnoughData("eight-point solver needs at least 8 correspondences");
  std::vector<Eigen::Vector2d> p1;
  std::vector<Eigen::Vector2d> p2;
  p1.reserve(points.size());
  p2.reserve(points.size());
  for (const auto& c : points) {
    if (problem == Problem::kEssential) {
      p1.push_back(k1.normalize(c.u1, c.v1).head<2>());
      p2.push_back(k2.normalize(c.u2, c.v2).head<2>());
    } else {
      p1.emplace_back(c.u1, c.v1);
      p2.emplace_back(c.u2, c.v2);
    }
  }
  const NormalizedPoints pts = normalize_points(p1, p2);
  // Algebraic fit, then reweighting passes that turn the algebraic residual
  // into the Sampson distance of the previous estimate.
  std::vector<double> weights;
  Eigen::Matrix3d m;
  for (int pass = 0;; ++pass) {
    m = pts.t2.transpose() * enforce_rank2(solve_linear_eight_point(pts, weights)) * pts.t1;
    if (pass == kSampsonReweightPasses) break;
    const Eigen::Matrix3d f = problem == Problem::kEssential
                                  ? Eigen::Matrix3d(k2.inverse().transpose() * m * k1.inverse())
                                  : m;
    weights.assign(points.size(), 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Eigen::Vector3d l2 = f * points[i].x1();
      const Eigen::Vector3d l1 = f.transpose() * points[i].x2();
      const double d = l2.head<2>().squaredNorm() + l1.head<2>().squaredNorm();
      weights[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
      sum += weights[i];
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) break;
    for (auto& w : weights) w *= static_cast<double>(points.size()) / sum;
  }

  EpipolarModel model;
  if (problem == Problem::kEssential) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double mean = 0.5 * (svd.singularValues()(0) + svd.singularValues()(1));
    const Eigen::Vector3d sv(mean, mean, 0.0);
    Eigen::Matrix3d e = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
    model.essential = refine_on_manifold(EssentialMatrix{e / e.norm()}, points, k1, k2);
    model.fundamental = essential_to_fundamental(*model.essential, k1, k2);
  } else {
    model.fundamental = FundamentalMatrix::normalized(m);
  }
  return model;
}

std::vector<EpipolarModel> solve_minimal(Problem problem, std::span<const Correspondence> sample,
                                         const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  std::vector<EpipolarModel> models;
  if (problem == Problem::kEssential) {
    for (const auto& e : five_point_essential(sample, k1, k2)) {
      models.push_back({essential_to_fundamental(e, k1, k2), e});
    }
  } else {
    for (const auto& f : seven_point_fundamental(sample)) models.push_back({f, std::nullopt});
  }
  return models;
}

std::optional<Pose> pose_from_model(const EpipolarModel& model,
                                    std::span<const Correspondence> points,
                                    const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  const EssentialMatrix e =
      model.essential ? *model.essential : fundamental_to_essential(model.fundamental, k1, k2);
  try {
    const auto candidates = pose_from_essential(e);
    return cheirality_select(candidates, points, k1, k2);
  } catch (const DegenerateModel&) {
    return std::nullopt;
  }
}

}  // namespace msf
