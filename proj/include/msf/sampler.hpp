#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "msf/geometry.hpp"

namespace msf {

using Rng = std::mt19937_64;

/// Indices into a correspondence list.
using SampleIndices = std::vector<std::size_t>;

/// Correspondence indices sorted by descending quality; ties keep the
/// original index order.
using QualityOrder = std::vector<std::size_t>;

QualityOrder quality_order(std::span<const double> scores);

/// m distinct indices in [0, n), uniformly without replacement.
/// Throws NotEnoughData if n < m.
SampleIndices draw_uniform(std::size_t n, int m, Rng& rng);

/// PROSAC sampler state: iteration counter t and hypothesis-set size n(t).
class ProsacSampler {
 public:
  static constexpr double kDefaultGrowthLimit = 200000.0;

  /// Throws NotEnoughData if the order has fewer than m entries.
  ProsacSampler(QualityOrder order, int m, double growth_limit = kDefaultGrowthLimit);

  /// Next semi-random sample: the n(t)-th ranked correspondence plus m-1
  /// drawn from the top n(t)-1. Once the schedule saturates (n = N and t
  /// past its growth time) samples are uniform over all correspondences.
  SampleIndices draw(Rng& rng);

  /// N consecutive draws.
  std::vector<SampleIndices> draw_batch(std::size_t count, Rng& rng);

  std::uint64_t iteration() const { return t_; }
  std::size_t subset_size() const { return n_; }
  int sample_size() const { return m_; }
  std::size_t size() const { return order_.size(); }

 private:
  QualityOrder order_;
  int m_;
  std::uint64_t t_ = 0;
  std::size_t n_;
  double growth_ = 0.0;          // T_n
  double growth_time_ = 1.0;     // T'_n
};

/// Gathers the correspondences named by `indices`.
MinimalSample gather(std::span<const Correspondence> points, const SampleIndices& indices);

}  // namespace msf
