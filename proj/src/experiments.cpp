#include "msf/experiments.hpp"

#include <algorithm>
#include <numeric>

#include "msf/errors.hpp"
#include "msf/labels.hpp"

namespace msf {

bool is_good_sample(std::span<const Correspondence> sample, const SyntheticScene& scene,
                    Problem problem, const GoodSampleCriteria& criteria) {
  for (const auto& c : sample) {
    if (!(sampson_error(scene.gt_fundamental, c) < criteria.max_sampson_px)) return false;
  }
  const auto error = best_pose_error(sample, scene.gt_pose, problem, scene.k1, scene.k2);
  return error && *error < criteria.max_pose_deg;
}

std::vector<std::size_t> power_of_two_rates(std::size_t max_rate) {
  std::vector<std::size_t> rates;
  for (std::size_t r = 1; r <= max_rate; r *= 2) rates.push_back(r);
  return rates;
}

std::vector<PrecisionRow> pool_precision(const SyntheticScene& scene, const FilterNetwork* network,
                                         Problem problem, std::size_t pool_size,
                                         const std::vector<std::size_t>& keep_rates,
                                         std::uint64_t seed, const GoodSampleCriteria& criteria) {
  const int m = sample_size(problem);
  if (network && network->m != m) {
    throw ShapeMismatch("network scores samples of " + std::to_string(network->m) +
                        " correspondences, problem needs " + std::to_string(m));
  }
  Rng rng(seed);
  std::vector<SampleIndices> pool;
  pool.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) {
    pool.push_back(draw_uniform(scene.correspondences.size(), m, rng));
  }
  std::vector<std::size_t> rank(pool_size);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  if (network) {
    const std::vector<double> scores = score_batch(*network, scene.correspondences, pool);
    std::stable_sort(rank.begin(), rank.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  }

  // Top sets are nested, so each sample is judged at most once.
  std::vector<std::int8_t> verdict(pool_size, -1);
  auto good = [&](std::size_t i) {
    if (verdict[i] < 0) {
      verdict[i] = is_good_sample(gather(scene.correspondences, pool[i]), scene, problem, criteria);
    }
    return verdict[i] == 1;
  };

  std::vector<PrecisionRow> rows;
  for (std::size_t rate : keep_rates) {
    PrecisionRow row;
    row.keep_rate = rate;
    row.kept = pool_size / rate;
    for (std::size_t r = 0; r < row.kept; ++r) row.good += good(rank[r]) ? 1 : 0;
    rows.push_back(row);
  }
  return rows;
}

BenchOutcome run_bench(const SyntheticScene& scene, const UsacConfig& config,
                       const FilterNetwork* network, bool oracle) {
  BenchOutcome out;
  std::vector<double> quality = scene.quality;
  if (oracle) {
    for (std::size_t i = 0; i < quality.size(); ++i) quality[i] = scene.inlier[i] ? 1.0 : 0.0;
  }
  try {
    const EstimateResult result =
        estimate(scene.correspondences, quality, scene.k1, scene.k2, config, network);
    out.stats = result.stats;
    out.inliers = result.inliers.size();
    std::optional<Pose> pose = result.pose;
    if (!pose) {
      pose = pose_from_model(result.model, scene.correspondences, scene.k1, scene.k2);
    }
    if (!pose) {
      out.error = "no pose passes the cheirality test";
      return out;
    }
    const PoseError e = pose_error(*pose, scene.gt_pose);
    out.rotation_deg = e.rotation_deg;
    out.translation_deg = e.translation_deg;
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
  Rng rng = derived_rng(seed, index);
  return rng();
}

std::vector<SyntheticScene> generate_scenes(const SceneConfig& base, std::size_t count,
                                            std::uint64_t seed) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneConfig config = base;
    config.seed = scene_seed(seed, i);
    scenes.push_back(generate_scene(config));
  }
  return scenes;
}

}  // namespace msf
