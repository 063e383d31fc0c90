#include "msf/ransac.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "msf/errors.hpp"

namespace msf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean_error(const FundamentalMatrix& f, std::span<const Correspondence> points,
                  const InlierSet& inliers) {
  if (inliers.count == 0) return kInf;
  double sum = 0.0;
  for (std::size_t i : inliers.indices) sum += sampson_error(f, points[i]);
  return sum / static_cast<double>(inliers.count);
}

bool better(const InlierSet& a, double error_a, const InlierSet& b, double error_b) {
  return a.count > b.count || (a.count == b.count && error_a < error_b);
}

bool parse_switch(const KeyValues& kv, const std::string& key, bool fallback) {
  const std::string v = kv.get_string(key, fallback ? "on" : "off");
  if (v == "on") return true;
  if (v == "off") return false;
  throw ConfigError(key + ": expected on|off, got '" + v + "'");
}

}  // namespace

const char* to_string(Profile profile) { return profile == Profile::kSmall ? "small" : "large"; }

Profile profile_from_string(const std::string& name) {
  if (name == "large") return Profile::kLarge;
  if (name == "small") return Profile::kSmall;
  throw ConfigError("profile: unknown profile '" + name + "' (expected large|small)");
}

void UsacConfig::apply_profile(Profile profile) {
  if (profile == Profile::kSmall) {
    batch_size = 128;
    keep = 12;
  } else {
    batch_size = 10000;
    keep = 500;
  }
}

void UsacConfig::validate() const {
  if (!(threshold > 0.0)) throw ConfigError("threshold: must be positive");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence: must be in (0, 1)");
  if (max_models == 0) throw ConfigError("max_models: must be positive");
  if (max_samples == 0) throw ConfigError("max_samples: must be positive");
  if (batch_size == 0) throw ConfigError("batch_size: must be positive");
  if (keep == 0 || keep > batch_size) throw ConfigError("keep: must be in [1, batch_size]");
  if (!(sprt.epsilon0 > 0.0 && sprt.epsilon0 < 1.0)) {
    throw ConfigError("sprt_epsilon: must be in (0, 1)");
  }
  if (!(sprt.delta0 > 0.0 && sprt.delta0 < sprt.epsilon0)) {
    throw ConfigError("sprt_delta: must be in (0, sprt_epsilon)");
  }
  if (lo.inner_iterations < 1) throw ConfigError("lo_iterations: must be positive");
  if (!(lo.threshold_multiplier >= 1.0)) throw ConfigError("lo_multiplier: must be >= 1");
}

UsacConfig UsacConfig::from_key_values(const KeyValues& kv) {
  UsacConfig c;
  c.problem = problem_from_string(kv.get_string("problem", to_string(c.problem)));
  c.apply_profile(profile_from_string(kv.get_string("profile", "large")));
  c.threshold = kv.get_double("threshold", c.threshold);
  c.confidence = kv.get_double("confidence", c.confidence);
  c.max_models = kv.get_uint("max_models", c.max_models);
  c.max_samples = kv.get_uint("max_samples", c.max_samples);
  c.filter = parse_switch(kv, "filter", c.filter);
  c.batch_size = kv.get_uint("batch_size", c.batch_size);
  c.keep = kv.get_uint("keep", c.keep);
  c.sprt.enabled = parse_switch(kv, "sprt", c.sprt.enabled);
  c.sprt.epsilon0 = kv.get_double("sprt_epsilon", c.sprt.epsilon0);
  c.sprt.delta0 = kv.get_double("sprt_delta", c.sprt.delta0);
  c.lo.inner_iterations = static_cast<int>(kv.get_int("lo_iterations", c.lo.inner_iterations));
  c.lo.threshold_multiplier = kv.get_double("lo_multiplier", c.lo.threshold_multiplier);
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

KeyValues UsacConfig::to_key_values() const {
  KeyValues kv;
  kv.set("problem", to_string(problem));
  kv.set("threshold", format_double(threshold));
  kv.set("confidence", format_double(confidence));
  kv.set("max_models", std::to_string(max_models));
  kv.set("max_samples", std::to_string(max_samples));
  kv.set("filter", filter ? "on" : "off");
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("keep", std::to_string(keep));
  kv.set("sprt", sprt.enabled ? "on" : "off");
  kv.set("sprt_epsilon", format_double(sprt.epsilon0));
  kv.set("sprt_delta", format_double(sprt.delta0));
  kv.set("lo_iterations", std::to_string(lo.inner_iterations));
  kv.set("lo_multiplier", format_double(lo.threshold_multiplier));
  kv.set("seed", std::to_string(seed));
  return kv;
}

InlierSet count_inliers(const FundamentalMatrix& model, std::span<const Correspondence> points,
                        double threshold) {
  InlierSet out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (sampson_error(model, points[i]) <= threshold) out.indices.push_back(i);
  }
  out.count = out.indices.size();
  return out;
}

SprtState::SprtState(const SprtParams& params, std::size_t n_points, Rng& rng)
    : params_(params),
      epsilon_(params.epsilon0),
      delta_(params.delta0),
      threshold_(kInf),
      epsilon_at_design_(params.epsilon0),
      delta_at_design_(params.delta0),
      order_(n_points) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng);
  recompute();
}

void SprtState::recompute() {
  epsilon_at_design_ = epsilon_;
  delta_at_design_ = delta_;
  if (!params_.enabled || !(epsilon_ > delta_)) {
    threshold_ = kInf;
    return;
  }
  const double e = epsilon_;
  const double d = delta_;
  const double c = (1.0 - d) * std::log((1.0 - d) / (1.0 - e)) + d * std::log(d / e);
  const double k = params_.model_time * c / params_.models_per_sample + 1.0;
  double a = k;
  for (int i = 0; i < 20; ++i) a = k + std::log(a);
  threshold_ = a;
}

void SprtState::update_epsilon(double inlier_ratio) {
  if (inlier_ratio <= epsilon_) return;
  epsilon_ = std::min(inlier_ratio, 1.0 - 1e-9);
  if (std::abs(epsilon_ - epsilon_at_design_) > 0.05 * epsilon_at_design_) recompute();
}

void SprtState::record_rejection(double inlier_ratio) {
  rejected_sum_ += inlier_ratio;
  ++rejected_count_;
  delta_ = std::clamp(rejected_sum_ / static_cast<double>(rejected_count_), 1e-6, 1.0 - 1e-6);
  if (std::abs(delta_ - delta_at_design_) > 0.05 * delta_at_design_) recompute();
}

SprtDecision sprt_verify(const FundamentalMatrix& model, std::span<const Correspondence> points,
                         double threshold, SprtState& state) {
  SprtDecision out;
  const double e = state.epsilon();
  const double d = state.delta();
  const double a = state.threshold();
  const double good = d / e;
  const double bad = (1.0 - d) / (1.0 - e);
  double ratio = 1.0;
  const auto& order = state.order();
  for (std::size_t j = 0; j < order.size(); ++j) {
    const std::size_t i = order[j];
    if (sampson_error(model, points[i]) <= threshold) {
      out.inliers.indices.push_back(i);
      ratio *= good;
    } else {
      ratio *= bad;
    }
    if (ratio > a) {
      out.points_evaluated = j + 1;
      out.inliers.count = out.inliers.indices.size();
      state.record_rejection(static_cast<double>(out.inliers.count) /
                             static_cast<double>(out.points_evaluated));
      return out;
    }
  }
  out.accepted = true;
  out.points_evaluated = order.size();
  std::sort(out.inliers.indices.begin(), out.inliers.indices.end());
  out.inliers.count = out.inliers.indices.size();
  return out;
}

RefinedModel local_optimize(const EpipolarModel& model, std::span<const Correspondence> points,
                            const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                            const UsacConfig& config) {
  RefinedModel best{model, count_inliers(model.fundamental, points, config.threshold), 0.0};
  best.mean_error = mean_error(model.fundamental, points, best.inliers);
  if (best.inliers.count < 8) return best;

  EpipolarModel current = model;
  const int steps = config.lo.inner_iterations;
  for (int step = 0; step < steps; ++step) {
    const double multiplier =
        steps == 1 ? 1.0
                   : config.lo.threshold_multiplier -
                         (config.lo.threshold_multiplier - 1.0) * step / (steps - 1);
    const InlierSet support =
        count_inliers(current.fundamental, points, config.threshold * multiplier);
    if (support.count < 8) break;
    std::vector<Correspondence> subset;
    subset.reserve(support.count);
    for (std::size_t i : support.indices) subset.push_back(points[i]);
    try {
      current = eight_point_least_squares(subset, config.problem, k1, k2);
    } catch (const DegenerateSample&) {
      break;
    }
    RefinedModel candidate{current, count_inliers(current.fundamental, points, config.threshold),
                           0.0};
    candidate.mean_error = mean_error(current.fundamental, points, candidate.inliers);
    if (better(candidate.inliers, candidate.mean_error, best.inliers, best.mean_error)) {
      best = std::move(candidate);
    }
  }
  return best;
}

double iterations_needed(double inlier_ratio, int m, double confidence) {
  const double p = std::pow(std::clamp(inlier_ratio, 0.0, 1.0), m);
  if (p <= 0.0) return kInf;
  if (p >= 1.0) return 0.0;
  return std::log(1.0 - confidence) / std::log1p(-p);
}

EstimateResult estimate(std::span<const Correspondence> points, std::span<const double> quality,
                        const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                        const UsacConfig& config, const FilterNetwork* network) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const int m = sample_size(config.problem);
  if (points.size() < static_cast<std::size_t>(m)) {
    throw NotEnoughData("need at least " + std::to_string(m) + " correspondences, have " +
                        std::to_string(points.size()));
  }
  if (!quality.empty() && quality.size() != points.size()) {
    throw ShapeMismatch("quality scores do not match the correspondence count");
  }
  const bool filtering = config.filter;
  if (filtering) {
    if (network == nullptr) throw ConfigError("filter: on requires a network");
    if (network->m != m) {
      throw ShapeMismatch("network scores samples of " + std::to_string(network->m) +
                          " correspondences, problem needs " + std::to_string(m));
    }
  }

  QualityOrder order;
  if (quality.empty()) {
    order.resize(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  } else {
    order = quality_order(quality);
  }
  Rng rng(config.seed);
  ProsacSampler sampler(std::move(order), m);
  SprtState sprt(config.sprt, points.size(), rng);

  EstimateResult result;
  EstimateStats& stats = result.stats;
  std::optional<RefinedModel> best;
  double bound = kInf;
  const std::size_t keep = filtering ? config.keep : config.batch_size;
  bool done = false;

  while (!done) {
    std::vector<SampleIndices> batch = sampler.draw_batch(config.batch_size, rng);
    ++stats.batches_drawn;
    std::vector<std::size_t> rank(batch.size());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    if (filtering) {
      const std::vector<double> scores = score_batch(*network, points, batch);
      stats.samples_scored += batch.size();
      std::stable_sort(rank.begin(), rank.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    }

    for (std::size_t r = 0; r < keep; ++r) {
      if (static_cast<double>(stats.samples_processed) >= bound ||
          stats.models_tested >= config.max_models ||
          stats.samples_processed >= config.max_samples) {
        done = true;
        break;
      }
      ++stats.samples_processed;
      const MinimalSample sample = gather(points, batch[rank[r]]);
      std::vector<EpipolarModel> models;
      try {
        models = solve_minimal(config.problem, sample, k1, k2);
      } catch (const Error&) {
        continue;
      }
      for (const EpipolarModel& model : models) {
        if (config.problem == Problem::kEssential && !pose_from_model(model, sample, k1, k2)) {
          continue;
        }
        if (stats.models_tested >= config.max_models) break;
        ++stats.models_tested;
        SprtDecision decision = sprt_verify(model.fundamental, points, config.threshold, sprt);
        if (!decision.accepted) continue;
        if (best && decision.inliers.count <= best->inliers.count) continue;

        RefinedModel candidate{model, std::move(decision.inliers), 0.0};
        candidate.mean_error = mean_error(model.fundamental, points, candidate.inliers);
        if (candidate.inliers.count >= 8) {
          ++stats.lo_runs;
          RefinedModel refined = local_optimize(model, points, k1, k2, config);
          if (better(refined.inliers, refined.mean_error, candidate.inliers, candidate.mean_error)) {
            candidate = std::move(refined);
          }
        }
        best = std::move(candidate);
        const double ratio =
            static_cast<double>(best->inliers.count) / static_cast<double>(points.size());
        sprt.update_epsilon(ratio);
        bound = std::min(bound, iterations_needed(ratio, m, config.confidence));
      }
    }
  }

  if (!best) throw NoModelFound("no minimal sample produced a verified model");
  if (best->inliers.count >= 8) {
    ++stats.lo_runs;
    RefinedModel refined = local_optimize(best->model, points, k1, k2, config);
    if (better(refined.inliers, refined.mean_error, best->inliers, best->mean_error)) {
      best = std::move(refined);
    }
  }
  result.model = best->model;
  result.inliers = count_inliers(result.model.fundamental, points, config.threshold).indices;
  if (config.problem == Problem::kEssential) {
    std::vector<Correspondence> support;
    support.reserve(result.inliers.size());
    for (std::size_t i : result.inliers) support.push_back(points[i]);
    result.pose = pose_from_model(result.model, support, k1, k2);
  }
  stats.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace msf
