#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "msf/errors.hpp"
#include "msf/geometry.hpp"
#include "support.hpp"

namespace msf {
namespace {

using test::kDeg;

// Exact two-sided geometric distance: minimum over the pencil of epipolar
// line pairs of the summed squared point-to-line distances.
double geometric_distance(const FundamentalMatrix& model, const Correspondence& c) {
  const Eigen::Matrix3d& f = model.matrix;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d e1 = svd.matrixV().col(2);
  const Eigen::Vector3d x1 = c.x1();
  const Eigen::Vector3d x2 = c.x2();
  auto line_distance2 = [](const Eigen::Vector3d& l, const Eigen::Vector3d& x) {
    const double r = l.dot(x);
    return r * r / (l(0) * l(0) + l(1) * l(1));
  };
  // Lines through e1 are spanned by e1 x p for p on a circle around x1.
  auto cost = [&](double theta) {
    const Eigen::Vector3d p = x1 + Eigen::Vector3d(std::cos(theta), std::sin(theta), 0.0);
    const Eigen::Vector3d l1 = e1.cross(p);
    const Eigen::Vector3d l2 = f * p;
    return line_distance2(l1, x1) + line_distance2(l2, x2);
  };
  const int grid = 20000;
  double best_theta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double theta = std::numbers::pi * i / grid;
    const double v = cost(theta);
    if (v < best) {
      best = v;
      best_theta = theta;
    }
  }
  double lo = best_theta - std::numbers::pi / grid;
  double hi = best_theta + std::numbers::pi / grid;
  for (int i = 0; i < 200; ++i) {
    const double a = lo + (hi - lo) / 3.0;
    const double b = hi - (hi - lo) / 3.0;
    if (cost(a) < cost(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  return std::sqrt(cost(0.5 * (lo + hi)));
}

// Sampson distance written out from the Jacobian of the epipolar residual.
double sampson_reference(const Eigen::Matrix3d& f, const Correspondence& c) {
  const double x1[3] = {c.u1, c.v1, 1.0};
  const double x2[3] = {c.u2, c.v2, 1.0};
  double r = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r += x2[i] * f(i, j) * x1[j];
  }
  double j[4] = {0, 0, 0, 0};
  for (int i = 0; i < 3; ++i) {
    j[0] += x2[i] * f(i, 0);
    j[1] += x2[i] * f(i, 1);
    j[2] += f(0, i) * x1[i];
    j[3] += f(1, i) * x1[i];
  }
  return std::abs(r) / std::sqrt(j[0] * j[0] + j[1] * j[1] + j[2] * j[2] + j[3] * j[3]);
}

double singular_ratio(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  return svd.singularValues()(2) / svd.singularValues()(0);
}

TEST(Sampson, ZeroOnNoiseFreeCorrespondences) {
  const auto scene = test::clean_scene(1);
  for (const auto& c : scene.correspondences) EXPECT_LT(sampson_error(scene.gt_fundamental, c), 1e-9);
}

TEST(Sampson, MatchesGeometricDistanceForOnePixelDisplacement) {
  const auto scene = test::clean_scene(2);
  for (std::size_t i = 0; i < 50; ++i) {
    Correspondence c = scene.correspondences[i];
    const Eigen::Vector3d l2 = scene.gt_fundamental.matrix * c.x1();
    const Eigen::Vector2d n = l2.head<2>().normalized();
    c.u2 += n.x();
    c.v2 += n.y();
    const double oracle = geometric_distance(scene.gt_fundamental, c);
    EXPECT_LE(oracle, 1.0 + 1e-9);
    EXPECT_NEAR(sampson_error(scene.gt_fundamental, c), oracle, 0.05 * oracle);
  }
}

TEST(Sampson, MatchesReferenceFormulaOnRandomInput) {
  Rng rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::Matrix3d m;
    for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = normal(rng);
    const FundamentalMatrix f{m};
    const Correspondence c{test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720),
                           test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720)};
    const double expected = sampson_reference(m, c);
    EXPECT_NEAR(sampson_error(f, c), expected, 1e-12 * std::max(1.0, expected));
  }
}

TEST(Sampson, SymmetricUnderImageSwapAndTranspose) {
  Rng rng(4);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::Matrix3d m;
    for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = normal(rng);
    const Correspondence c{test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720),
                           test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720)};
    const double a = sampson_error(FundamentalMatrix{m}, c);
    const double b = sampson_error(FundamentalMatrix{m.transpose()}, c.swapped());
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, a));
  }
}

TEST(EssentialToFundamental, IdentityIntrinsicsGiveScaledEssential) {
  Rng rng(5);
  const EssentialMatrix e = essential_from_pose(sample_motion(MotionKind::kGeneral, rng));
  const FundamentalMatrix f = essential_to_fundamental(e, {}, {});
  EXPECT_LT(test::projective_distance(f.matrix, e.matrix), 1e-12);
}

TEST(EssentialToFundamental, SceneCorrespondencesSatisfyEpipolarConstraint) {
  const auto scene = test::clean_scene(6);
  const FundamentalMatrix f = essential_to_fundamental(scene.gt_essential, scene.k1, scene.k2);
  EXPECT_NEAR(f.matrix.norm(), 1.0, 1e-12);
  EXPECT_LT(singular_ratio(f.matrix), 1e-7);
  for (const auto& c : scene.correspondences) EXPECT_LT(std::abs(c.x2().dot(f.matrix * c.x1())), 1e-9);
}

TEST(EssentialToFundamental, DoubledFocalLengthsMatchRecomputation) {
  const auto scene = test::clean_scene(7);
  CameraIntrinsics k1 = scene.k1, k2 = scene.k2;
  k1.fx *= 2, k1.fy *= 2, k2.fx *= 2, k2.fy *= 2;
  const FundamentalMatrix f = essential_to_fundamental(scene.gt_essential, k1, k2);
  const Eigen::Matrix3d oracle = k2.matrix().inverse().transpose() * scene.gt_essential.matrix *
                                 k1.matrix().inverse();
  EXPECT_LT(test::projective_distance(f.matrix, oracle), 1e-12);
  EXPECT_LT(singular_ratio(f.matrix), 1e-7);
  const FundamentalMatrix original = essential_to_fundamental(scene.gt_essential, scene.k1, scene.k2);
  EXPECT_GT(test::projective_distance(f.matrix, original.matrix), 1e-3);
}

TEST(EssentialFromPose, SatisfiesEssentialInvariants) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const EssentialMatrix e = essential_from_pose(sample_motion(MotionKind::kGeneral, rng));
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(e.matrix);
    const auto s = svd.singularValues();
    EXPECT_LT(s(2), 1e-7 * e.matrix.norm());
    EXPECT_NEAR(s(0), s(1), 1e-6 * s(0));
    EXPECT_NEAR(e.matrix.norm(), 1.0, 1e-12);
  }
}

TEST(PoseFromEssential, OneCandidateMatchesConstructingPose) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const Pose pose = sample_motion(MotionKind::kGeneral, rng);
    const auto candidates = pose_from_essential(essential_from_pose(pose));
    double best_r = 1e9, best_t = 1e9;
    for (const auto& c : candidates) {
      const double r = rotation_angle_deg(c.rotation * pose.rotation.transpose());
      const double t = std::acos(std::clamp(c.translation.dot(pose.translation), -1.0, 1.0)) / kDeg;
      if (r + t < best_r + best_t) {
        best_r = r;
        best_t = t;
      }
    }
    EXPECT_LT(best_r, 1e-6);
    EXPECT_LT(best_t, 1e-6);
  }
}

TEST(PoseFromEssential, CanonicalForwardMotion) {
  const Pose forward;
  const auto candidates = pose_from_essential(essential_from_pose(forward));
  bool found = false;
  for (const auto& c : candidates) {
    found = found || ((c.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12 &&
                      (c.translation - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
  }
  EXPECT_TRUE(found);
}

TEST(PoseFromEssential, RecomposedCandidatesReproduceEssential) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const EssentialMatrix e = essential_from_pose(sample_motion(MotionKind::kGeneral, rng));
    for (const auto& c : pose_from_essential(e)) {
      EXPECT_NEAR(c.rotation.determinant(), 1.0, 1e-9);
      EXPECT_LT((c.rotation.transpose() * c.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-9);
      EXPECT_NEAR(c.translation.norm(), 1.0, 1e-9);
      EXPECT_LT(test::projective_distance(essential_from_pose(c).matrix, e.matrix), 1e-9);
    }
  }
}

TEST(PoseFromEssential, RejectsMatrixOffTheEssentialManifold) {
  EssentialMatrix e{Eigen::Vector3d(1.0, 0.5, 0.0).asDiagonal()};
  EXPECT_THROW(pose_from_essential(e), DegenerateModel);
}

TEST(Triangulation, RecoversDepthUnderForwardMotion) {
  const Pose pose;  // R = I, t = (0, 0, 1)
  const CameraIntrinsics k{800, 800, 640, 360};
  const Eigen::Vector3d x(0.7, -0.4, 5.0);
  const DepthPair d = triangulate_depths(pose, test::project(pose, x, k, k), k, k);
  EXPECT_NEAR(d.depth1, 5.0, 1e-6);
  EXPECT_NEAR(d.depth2, 6.0, 1e-6);
}

TEST(Triangulation, PointBehindFirstCameraHasNegativeDepth) {
  Pose pose;
  pose.translation = Eigen::Vector3d(1.0, 0.0, 0.0);
  const CameraIntrinsics k{800, 800, 640, 360};
  const Eigen::Vector3d x(0.3, 0.2, -4.0);
  const DepthPair d = triangulate_depths(pose, test::project(pose, x, k, k), k, k);
  EXPECT_LT(d.depth1, 0.0);
  EXPECT_NEAR(d.depth1, -4.0, 1e-6);
}

TEST(Triangulation, PointOnBaselineRaysThrowsNearParallelRays) {
  const Pose pose;  // both rays through the epipole coincide with the baseline
  const CameraIntrinsics k{800, 800, 640, 360};
  const Correspondence c{640.0, 360.0, 640.0, 360.0};
  EXPECT_THROW(triangulate_depths(pose, c, k, k), NearParallelRays);
}

TEST(Cheirality, SelectsGroundTruthOnNoiseFreeSample) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scene = test::clean_scene(100 + seed, MotionKind::kGeneral, 20);
    const std::span<const Correspondence> sample(scene.correspondences.data(), 5);
    const auto candidates = pose_from_essential(scene.gt_essential);
    const auto chosen = cheirality_select(candidates, sample, scene.k1, scene.k2);
    ASSERT_TRUE(chosen.has_value());
    const PoseError err = pose_error(*chosen, scene.gt_pose);
    EXPECT_LT(err.rotation_deg, 1e-6);
    EXPECT_LT((chosen->translation - scene.gt_pose.translation).norm(), 1e-9);
    for (const auto& c : sample) {
      const DepthPair d = triangulate_depths(*chosen, c, scene.k1, scene.k2);
      EXPECT_GT(d.depth1, 0.0);
      EXPECT_GT(d.depth2, 0.0);
    }
  }
}

TEST(Cheirality, TieGoesToLowestIndex) {
  const auto scene = test::clean_scene(11, MotionKind::kGeneral, 20);
  const std::span<const Correspondence> sample(scene.correspondences.data(), 5);
  Pose nudged = scene.gt_pose;
  nudged.rotation = axis_angle(Eigen::Vector3d::UnitY(), 0.2 * kDeg) * nudged.rotation;
  const std::array<Pose, 2> forward{scene.gt_pose, nudged};
  const std::array<Pose, 2> reversed{nudged, scene.gt_pose};
  const auto a = cheirality_select(forward, sample, scene.k1, scene.k2);
  const auto b = cheirality_select(reversed, sample, scene.k1, scene.k2);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->rotation, scene.gt_pose.rotation);
  EXPECT_EQ(b->rotation, nudged.rotation);
}

TEST(Cheirality, RandomOutlierSamplesAreHandled) {
  Rng rng(12);
  const CameraIntrinsics k{800, 800, 640, 360};
  for (int trial = 0; trial < 200; ++trial) {
    MinimalSample sample;
    for (int i = 0; i < 5; ++i) {
      sample.push_back({test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720),
                        test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720)});
    }
    const Pose pose = sample_motion(MotionKind::kGeneral, rng);
    const auto candidates = pose_from_essential(essential_from_pose(pose));
    const auto chosen = cheirality_select(candidates, sample, k, k);
    if (!chosen) continue;
    bool listed = false;
    for (const auto& c : candidates) listed = listed || c.rotation == chosen->rotation;
    EXPECT_TRUE(listed);
  }
}

TEST(PoseError, IdenticalPosesGiveZero) {
  Rng rng(13);
  const Pose p = sample_motion(MotionKind::kGeneral, rng);
  const PoseError e = pose_error(p, p);
  EXPECT_NEAR(e.rotation_deg, 0.0, 1e-6);
  EXPECT_NEAR(e.translation_deg, 0.0, 1e-6);
}

TEST(PoseError, ConstructedTenDegreeRotation) {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const Pose gt = sample_motion(MotionKind::kGeneral, rng);
    Eigen::Vector3d axis(test::uniform(rng, -1, 1), test::uniform(rng, -1, 1), test::uniform(rng, -1, 1));
    Pose est = gt;
    est.rotation = axis_angle(axis.normalized(), 10.0 * kDeg) * gt.rotation;
    const PoseError e = pose_error(est, gt);
    EXPECT_NEAR(e.rotation_deg, 10.0, 1e-9);
    EXPECT_NEAR(e.translation_deg, 0.0, 1e-6);
  }
}

TEST(PoseError, TranslationSignIsIgnored) {
  Rng rng(15);
  const Pose gt = sample_motion(MotionKind::kGeneral, rng);
  Pose est = gt;
  est.translation = -gt.translation;
  EXPECT_NEAR(pose_error(est, gt).translation_deg, 0.0, 1e-6);
}

TEST(PoseError, IsASymmetricPremetric) {
  Rng rng(16);
  for (int trial = 0; trial < 500; ++trial) {
    const Pose a = sample_motion(MotionKind::kGeneral, rng);
    const Pose b = sample_motion(MotionKind::kGeneral, rng);
    const PoseError ab = pose_error(a, b);
    const PoseError ba = pose_error(b, a);
    EXPECT_GE(ab.rotation_deg, 0.0);
    EXPECT_GE(ab.translation_deg, 0.0);
    EXPECT_NEAR(ab.rotation_deg, ba.rotation_deg, 1e-12);
    EXPECT_NEAR(ab.translation_deg, ba.translation_deg, 1e-12);
  }
}

TEST(Problem, NamesRoundTrip) {
  EXPECT_EQ(problem_from_string("essential"), Problem::kEssential);
  EXPECT_EQ(problem_from_string("fundamental"), Problem::kFundamental);
  EXPECT_STREQ(to_string(Problem::kFundamental), "fundamental");
  EXPECT_THROW(problem_from_string("homography"), ConfigError);
}

}  // namespace
}  // namespace msf
