#include <gtest/gtest.h>

#include "msf/errors.hpp"
#include "msf/ransac.hpp"
#include "support.hpp"

namespace msf {
namespace {

UsacConfig essential_config(std::uint64_t seed) {
  UsacConfig c;
  c.seed = seed;
  return c;
}

TEST(CountInliers, MatchesBruteForce) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 90, 300, 0.5, 0.4));
  for (double threshold : {0.5, 1.0, 2.0, 8.0}) {
    const InlierSet set = count_inliers(scene.gt_fundamental, scene.correspondences, threshold);
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < scene.correspondences.size(); ++i) {
      if (sampson_error(scene.gt_fundamental, scene.correspondences[i]) <= threshold) expected.push_back(i);
    }
    EXPECT_EQ(set.indices, expected);
    EXPECT_EQ(set.count, expected.size());
  }
  EXPECT_EQ(count_inliers(scene.gt_fundamental, scene.correspondences, 0.0).count, 0u);
}

TEST(Sprt, AcceptsTrueModelWithExactCount) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 91, 400, 0.5, 0.5));
  Rng rng(91);
  SprtState state(SprtParams{}, scene.correspondences.size(), rng);
  const SprtDecision d = sprt_verify(scene.gt_fundamental, scene.correspondences, 2.0, state);
  ASSERT_TRUE(d.accepted);
  EXPECT_EQ(d.points_evaluated, scene.correspondences.size());
  EXPECT_EQ(d.inliers.indices, count_inliers(scene.gt_fundamental, scene.correspondences, 2.0).indices);
}

TEST(Sprt, RejectsGarbageEarly) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 92, 400, 0.5, 0.5));
  Rng rng(92);
  SprtState state(SprtParams{}, scene.correspondences.size(), rng);
  state.update_epsilon(0.5);
  double evaluated = 0;
  int rejected = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Random();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    s(2) = 0;
    const FundamentalMatrix f{svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose()};
    const SprtDecision d = sprt_verify(f, scene.correspondences, 2.0, state);
    evaluated += static_cast<double>(d.points_evaluated);
    rejected += d.accepted ? 0 : 1;
  }
  EXPECT_GT(rejected, trials * 9 / 10);
  EXPECT_LT(evaluated / trials, static_cast<double>(scene.correspondences.size()) / 4.0);
}

TEST(Sprt, DisabledThresholdIsInfinite) {
  Rng rng(93);
  SprtParams params;
  params.enabled = false;
  SprtState state(params, 10, rng);
  EXPECT_TRUE(std::isinf(state.threshold()));
  std::vector<std::size_t> sorted = state.order();
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Sprt, EnabledAndDisabledAgreeOnTheResult) {
  int agree = 0;
  const int scenes = 30;
  for (int s = 0; s < scenes; ++s) {
    const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 940 + s, 300, 0.5, 0.4));
    UsacConfig on = essential_config(s);
    UsacConfig off = on;
    off.sprt.enabled = false;
    const auto a = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, on);
    const auto b = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, off);
    const double diff = std::abs(static_cast<double>(a.inliers.size()) - static_cast<double>(b.inliers.size()));
    agree += diff <= 0.02 * 300 ? 1 : 0;
  }
  EXPECT_GE(agree, scenes * 95 / 100);
}

TEST(LocalOptimization, ImprovesNoisyMinimalModels) {
  int improved = 0, lower_error = 0, trials = 0;
  for (int s = 0; s < 50; ++s) {
    const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 950 + s, 300, 1.0, 0.3));
    Rng rng(950 + s);
    const auto inliers = test::inliers_of(scene);
    const auto sample = gather(inliers, draw_uniform(inliers.size(), 5, rng));
    std::vector<EpipolarModel> models;
    try {
      models = solve_minimal(Problem::kEssential, sample, scene.k1, scene.k2);
    } catch (const Error&) {
      continue;
    }
    if (models.empty()) continue;
    const UsacConfig config = essential_config(0);
    auto best = models.front();
    std::size_t best_count = 0;
    for (const auto& m : models) {
      const auto c = count_inliers(m.fundamental, scene.correspondences, config.threshold).count;
      if (c > best_count) {
        best_count = c;
        best = m;
      }
    }
    const RefinedModel refined = local_optimize(best, scene.correspondences, scene.k1, scene.k2, config);
    ++trials;
    EXPECT_GE(refined.inliers.count, best_count);
    improved += refined.inliers.count > best_count ? 1 : 0;
    lower_error += test::mean_sampson(refined.model.fundamental, inliers) <= test::mean_sampson(best.fundamental, inliers);
  }
  EXPECT_GE(improved, trials * 9 / 10);
  EXPECT_GE(lower_error, trials * 9 / 10);
}

TEST(LocalOptimization, GroundTruthOnCleanDataIsAFixedPoint) {
  const auto scene = test::clean_scene(103);
  const RefinedModel refined = local_optimize({scene.gt_fundamental, std::nullopt}, scene.correspondences,
                                              scene.k1, scene.k2, essential_config(0));
  EXPECT_EQ(refined.inliers.count, scene.correspondences.size());
  EXPECT_LT(test::projective_distance(refined.model.fundamental.matrix, scene.gt_fundamental.matrix), 1e-9);
}

TEST(LocalOptimization, ExactlyEightInliers) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 104, 200, 0.5));
  std::vector<Correspondence> points(scene.correspondences.begin(), scene.correspondences.begin() + 8);
  Rng rng(104);
  while (points.size() < 60) {
    Correspondence c{test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720), test::uniform(rng, 0, 1280),
                     test::uniform(rng, 0, 720)};
    if (sampson_error(scene.gt_fundamental, c) > 40.0) points.push_back(c);
  }
  const EpipolarModel model{scene.gt_fundamental, std::nullopt};
  ASSERT_EQ(count_inliers(model.fundamental, points, 2.0).count, 8u);
  const RefinedModel refined = local_optimize(model, points, scene.k1, scene.k2, essential_config(0));
  EXPECT_GE(refined.inliers.count, 8u);
  EXPECT_TRUE(refined.model.fundamental.matrix.allFinite());
}

TEST(LocalOptimization, FewerThanEightInliersReturnsInput) {
  const auto scene = test::clean_scene(96);
  std::vector<Correspondence> points(scene.correspondences.begin(), scene.correspondences.begin() + 7);
  Rng rng(96);
  for (int i = 0; i < 50; ++i) {
    points.push_back({test::uniform(rng, 0, 1280), test::uniform(rng, 0, 720), test::uniform(rng, 0, 1280),
                      test::uniform(rng, 0, 720)});
  }
  EpipolarModel model{scene.gt_fundamental, std::nullopt};
  const auto inliers = count_inliers(model.fundamental, points, 2.0);
  ASSERT_LT(inliers.count, 8u);
  const RefinedModel refined = local_optimize(model, points, scene.k1, scene.k2, essential_config(0));
  EXPECT_EQ(refined.model.fundamental.matrix, model.fundamental.matrix);
  EXPECT_EQ(refined.inliers.indices, inliers.indices);
}

TEST(LocalOptimization, RepeatedApplicationIsStable) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 97, 300, 0.5, 0.3));
  const UsacConfig config = essential_config(0);
  const RefinedModel once = local_optimize({scene.gt_fundamental, std::nullopt}, scene.correspondences,
                                           scene.k1, scene.k2, config);
  const RefinedModel twice = local_optimize(once.model, scene.correspondences, scene.k1, scene.k2, config);
  EXPECT_GE(twice.inliers.count, once.inliers.count);
  EXPECT_LE(twice.inliers.count, once.inliers.count + 2);
  EXPECT_LT(test::projective_distance(once.model.fundamental.matrix, twice.model.fundamental.matrix), 1e-2);
}

TEST(IterationsNeeded, FormulaAndEdges) {
  EXPECT_NEAR(iterations_needed(0.5, 5, 0.99), std::log(0.01) / std::log(1.0 - std::pow(0.5, 5)), 1e-9);
  EXPECT_NEAR(iterations_needed(0.5, 5, 0.99), 145.0, 1.0);
  EXPECT_TRUE(std::isinf(iterations_needed(0.0, 5, 0.99)));
  EXPECT_EQ(iterations_needed(1.0, 5, 0.99), 0.0);
  double previous = std::numeric_limits<double>::infinity();
  for (double r = 0.05; r < 1.0; r += 0.05) {
    const double n = iterations_needed(r, 7, 0.99);
    EXPECT_LT(n, previous);
    EXPECT_GT(n, iterations_needed(r, 7, 0.9));
    EXPECT_GT(n, iterations_needed(r, 5, 0.99));
    previous = n;
  }
}

TEST(Estimate, RecoversPoseWithMostlyInliers) {
  int good = 0;
  const int runs = 100;
  for (int s = 0; s < runs; ++s) {
    const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 1000 + s, 200, 0.5, 0.2));
    const auto result = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, essential_config(s));
    const Pose pose = result.pose ? *result.pose : Pose{};
    const PoseError err = pose_error(pose, scene.gt_pose);
    good += std::max(err.rotation_deg, err.translation_deg) < 2.0 ? 1 : 0;
  }
  EXPECT_GE(good, runs * 95 / 100);
}

TEST(Estimate, DeterministicAndInliersReproducible) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kDriving, 98, 300, 0.5, 0.5));
  const UsacConfig config = essential_config(7);
  const auto a = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, config);
  const auto b = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, config);
  EXPECT_EQ(a.model.fundamental.matrix, b.model.fundamental.matrix);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.stats.models_tested, b.stats.models_tested);
  EXPECT_EQ(a.inliers, count_inliers(a.model.fundamental, scene.correspondences, config.threshold).indices);
}

TEST(Estimate, FundamentalProblem) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 99, 300, 0.5, 0.3));
  UsacConfig config = essential_config(1);
  config.problem = Problem::kFundamental;
  const auto result = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, config);
  EXPECT_GE(result.inliers.size(), 190u);
  EXPECT_LT(test::mean_sampson(result.model.fundamental, test::inliers_of(scene)), 1.5);
}

TEST(Estimate, ConstantNetworkTerminatesAndFindsModel) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 100, 300, 0.5, 0.4));
  const FilterNetwork net = FilterNetwork::create(5, 3, 1280, 720, 1).zeros_like();
  UsacConfig config = essential_config(2);
  config.filter = true;
  config.apply_profile(Profile::kSmall);
  const auto result = estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, config, &net);
  EXPECT_GT(result.stats.batches_drawn, 0u);
  EXPECT_GE(result.inliers.size(), 170u);
}

TEST(Estimate, NetworkProblemMismatchThrows) {
  const auto scene = generate_scene(test::scene_config(MotionKind::kGeneral, 101, 100, 0.5));
  const FilterNetwork net = FilterNetwork::create(7, 2, 1280, 720, 1);
  UsacConfig config = essential_config(0);
  config.filter = true;
  EXPECT_THROW(estimate(scene.correspondences, scene.quality, scene.k1, scene.k2, config, &net), ShapeMismatch);
}

TEST(Estimate, DegenerateAndTinyInputs) {
  const auto scene = test::clean_scene(102, MotionKind::kGeneral, 50);
  std::vector<Correspondence> same(50, scene.correspondences[0]);
  std::vector<double> quality(50, 1.0);
  UsacConfig config = essential_config(0);
  config.max_samples = 1000;
  EXPECT_THROW(estimate(same, quality, scene.k1, scene.k2, config), NoModelFound);
  std::vector<Correspondence> four(scene.correspondences.begin(), scene.correspondences.begin() + 4);
  EXPECT_THROW(estimate(four, std::vector<double>(4, 1.0), scene.k1, scene.k2, config), NotEnoughData);
}

TEST(UsacConfig, ValidationProfilesAndRoundTrip) {
  UsacConfig c;
  c.threshold = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = UsacConfig{};
  c.confidence = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);

  c = UsacConfig{};
  c.apply_profile(Profile::kSmall);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.keep, 12u);
  EXPECT_EQ(profile_from_string("small"), Profile::kSmall);
  EXPECT_THROW(profile_from_string("medium"), ConfigError);

  c.problem = Problem::kFundamental;
  c.threshold = 1.25;
  c.sprt.enabled = false;
  c.lo.inner_iterations = 6;
  c.seed = 77;
  const UsacConfig back = UsacConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.problem, c.problem);
  EXPECT_EQ(back.threshold, c.threshold);
  EXPECT_EQ(back.sprt.enabled, false);
  EXPECT_EQ(back.lo.inner_iterations, 6);
  EXPECT_EQ(back.batch_size, 128u);
  EXPECT_EQ(back.keep, 12u);
  EXPECT_EQ(back.seed, 77u);
}

}  // namespace
}  // namespace msf
