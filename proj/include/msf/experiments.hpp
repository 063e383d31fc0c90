#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msf/nnfilter.hpp"
#include "msf/ransac.hpp"
#include "msf/synth.hpp"

namespace msf {

/// A sample counts as good when every correspondence is within
/// max_sampson_px of the true model and its best solver candidate is within
/// max_pose_deg of the true pose.
struct GoodSampleCriteria {
  double max_sampson_px = 2.0;
  double max_pose_deg = 10.0;
};

bool is_good_sample(std::span<const Correspondence> sample, const SyntheticScene& scene,
                    Problem problem, const GoodSampleCriteria& criteria = {});

struct PrecisionRow {
  std::size_t keep_rate = 1;
  std::size_t kept = 0;
  std::size_t good = 0;
  double precision() const { return kept == 0 ? 0.0 : static_cast<double>(good) / kept; }
};

/// Draws a uniform pool, sorts it by network score (stable; no sorting when
/// `network` is null) and reports the precision of the top pool/r samples
/// for every keep rate r.
std::vector<PrecisionRow> pool_precision(const SyntheticScene& scene, const FilterNetwork* network,
                                         Problem problem, std::size_t pool_size,
                                         const std::vector<std::size_t>& keep_rates,
                                         std::uint64_t seed,
                                         const GoodSampleCriteria& criteria = {});

/// Keep rates 1, 2, 4, ... up to max_rate.
std::vector<std::size_t> power_of_two_rates(std::size_t max_rate);

struct BenchOutcome {
  bool ok = false;
  std::string error;
  double rotation_deg = 180.0;
  double translation_deg = 180.0;
  std::size_t inliers = 0;
  EstimateStats stats;

  double pose_error_deg() const { return std::max(rotation_deg, translation_deg); }
};

/// One estimate() run on a scene. With `oracle`, quality scores are replaced
/// by the true inlier flags. Failures are reported, not thrown.
BenchOutcome run_bench(const SyntheticScene& scene, const UsacConfig& config,
                       const FilterNetwork* network, bool oracle);

/// Synthetic scenes with seeds derived from (seed, index).
std::vector<SyntheticScene> generate_scenes(const SceneConfig& base, std::size_t count,
                                            std::uint64_t seed);

/// Seed of scene `index` for a run seeded with `seed`.
std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace msf
