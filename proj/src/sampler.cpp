#include "msf/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msf/errors.hpp"

namespace msf {

namespace {

// Appends `count` distinct indices from [0, n) that are not already in `out`.
void append_distinct(std::size_t n, int count, Rng& rng, SampleIndices& out) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (int k = 0; k < count; ++k) {
    std::size_t idx;
    do {
      idx = pick(rng);
    } while (std::find(out.begin(), out.end(), idx) != out.end());
    out.push_back(idx);
  }
}

}  // namespace

QualityOrder quality_order(std::span<const double> scores) {
  QualityOrder order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

SampleIndices draw_uniform(std::size_t n, int m, Rng& rng) {
  if (n < static_cast<std::size_t>(m)) {
    throw NotEnoughData("need " + std::to_string(m) + " correspondences, have " + std::to_string(n));
  }
  SampleIndices out;
  out.reserve(static_cast<std::size_t>(m));
  append_distinct(n, m, rng, out);
  return out;
}

ProsacSampler::ProsacSampler(QualityOrder order, int m, double growth_limit)
    : order_(std::move(order)), m_(m), n_(static_cast<std::size_t>(m)) {
  const std::size_t total = order_.size();
  if (total < static_cast<std::size_t>(m)) {
    throw NotEnoughData("need " + std::to_string(m) + " correspondences, have " +
                        std::to_string(total));
  }
  // T_m = T_N * prod_{i<m} (m - i) / (N - i).
  growth_ = growth_limit;
  for (int i = 0; i < m; ++i) {
    growth_ *= static_cast<double>(m - i) / static_cast<double>(total - static_cast<std::size_t>(i));
  }
}

SampleIndices ProsacSampler::draw(Rng& rng) {
  ++t_;
  const std::size_t total = order_.size();
  while (n_ < total && static_cast<double>(t_) > growth_time_) {
    const double next = growth_ * static_cast<double>(n_ + 1) /
                        static_cast<double>(n_ + 1 - static_cast<std::size_t>(m_));
    growth_time_ += std::ceil(next - growth_);
    growth_ = next;
    ++n_;
  }

  SampleIndices ranks;
  ranks.reserve(static_cast<std::size_t>(m_));
  if (n_ == total && static_cast<double>(t_) > growth_time_) {
    append_distinct(total, m_, rng, ranks);
  } else {
    ranks.push_back(n_ - 1);
    if (m_ > 1) append_distinct(n_ - 1, m_ - 1, rng, ranks);
  }
  for (std::size_t& r : ranks) r = order_[r];
  return ranks;
}

std::vector<SampleIndices> ProsacSampler::draw_batch(std::size_t count, Rng& rng) {
  std::vector<SampleIndices> batch;
  batch.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.push_back(draw(rng));
  return batch;
}

MinimalSample gather(std::span<const Correspondence> points, const SampleIndices& indices) {
  MinimalSample out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(points[i]);
  return out;
}

}  // namespace msf
