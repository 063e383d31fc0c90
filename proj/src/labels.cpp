#include "msf/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "msf/errors.hpp"
#include "msf/parallel.hpp"
#include "msf/solvers.hpp"

namespace msf {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Cheirality-resolved poses of every solver candidate; empty on failure.
std::vector<Pose> candidate_poses(std::span<const Correspondence> sample, Problem problem,
                                  const CameraIntrinsics& k1, const CameraIntrinsics& k2) {
  std::vector<Pose> poses;
  std::vector<EpipolarModel> models;
  try {
    models = solve_minimal(problem, sample, k1, k2);
  } catch (const Error&) {
    return poses;
  }
  for (const auto& model : models) {
    if (auto pose = pose_from_model(model, sample, k1, k2)) poses.push_back(*pose);
  }
  return poses;
}

double expert_value(const Pose& pose, ExpertMode mode, const LabelThresholds& t) {
  return mode == ExpertMode::kDriving ? expert_label_driving(pose, t)
                                      : expert_label_collection(pose, t);
}

double best_expert(const std::vector<Pose>& poses, ExpertMode mode, const LabelThresholds& t) {
  double best = 0.0;
  for (const Pose& p : poses) best = std::max(best, expert_value(p, mode, t));
  return best;
}

std::optional<double> best_error(const std::vector<Pose>& poses, const Pose& gt) {
  std::optional<double> best;
  for (const Pose& p : poses) {
    const double e = pose_error(p, gt).max();
    if (!best || e < *best) best = e;
  }
  return best;
}

}  // namespace

const char* to_string(ExpertMode mode) {
  switch (mode) {
    case ExpertMode::kDriving:
      return "driving";
    case ExpertMode::kCollection:
      return "collection";
    case ExpertMode::kNone:
      break;
  }
  return "none";
}

ExpertMode expert_from_string(const std::string& name) {
  if (name == "none") return ExpertMode::kNone;
  if (name == "driving") return ExpertMode::kDriving;
  if (name == "collection") return ExpertMode::kCollection;
  throw ConfigError("expert: unknown mode '" + name + "' (expected none|driving|collection)");
}

double interpolate_label(double error, double e_min, double e_max) {
  if (error <= e_min) return 1.0;
  if (error >= e_max) return 0.0;
  return (e_max - error) / (e_max - e_min);
}

double sampson_label(std::span<const Correspondence> sample, const FundamentalMatrix& gt_model,
                     const LabelThresholds& thresholds) {
  double worst = 0.0;
  for (const auto& c : sample) worst = std::max(worst, sampson_error(gt_model, c));
  return interpolate_label(worst, thresholds.sampson_min, thresholds.sampson_max);
}

std::optional<double> best_pose_error(std::span<const Correspondence> sample, const Pose& gt_pose,
                                      Problem problem, const CameraIntrinsics& k1,
                                      const CameraIntrinsics& k2) {
  return best_error(candidate_poses(sample, problem, k1, k2), gt_pose);
}

double pose_label(std::span<const Correspondence> sample, const Pose& gt_pose, Problem problem,
                  const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                  const LabelThresholds& thresholds) {
  const auto error = best_pose_error(sample, gt_pose, problem, k1, k2);
  if (!error) return 0.0;
  return interpolate_label(*error, thresholds.pose_min, thresholds.pose_max);
}

double driving_deviation_deg(const Pose& pose) {
  const Eigen::Matrix3d& r = pose.rotation;
  // Yaw rotation about the vertical (y) axis closest to R.
  const double yaw = std::atan2(r(0, 2) - r(2, 0), r(0, 0) + r(2, 2));
  const Eigen::Matrix3d residual = axis_angle(Eigen::Vector3d::UnitY(), yaw).transpose() * r;
  const double off_vertical = rotation_angle_deg(residual);
  const Eigen::Vector3d t = pose.translation.normalized();
  const double elevation = std::asin(std::clamp(std::abs(t.y()), 0.0, 1.0)) * kRadToDeg;
  return std::max(off_vertical, elevation);
}

double collection_deviation_deg(const Pose& pose) {
  const Eigen::AngleAxisd aa(pose.rotation);
  if (std::abs(aa.angle()) < 1e-9) return 0.0;
  const double vertical = std::clamp(std::abs(aa.axis().normalized().y()), 0.0, 1.0);
  const double from_vertical = std::acos(vertical) * kRadToDeg;
  const double from_horizontal = std::asin(vertical) * kRadToDeg;
  return std::min(from_vertical, from_horizontal);
}

double expert_label_driving(const Pose& pose, const LabelThresholds& thresholds) {
  return interpolate_label(driving_deviation_deg(pose), thresholds.pose_min, thresholds.pose_max);
}

double expert_label_collection(const Pose& pose, const LabelThresholds& thresholds) {
  return interpolate_label(collection_deviation_deg(pose), thresholds.pose_min,
                           thresholds.pose_max);
}

double expert_label(std::span<const Correspondence> sample, ExpertMode mode, Problem problem,
                    const CameraIntrinsics& k1, const CameraIntrinsics& k2,
                    const LabelThresholds& thresholds) {
  if (mode == ExpertMode::kNone) return 0.0;
  return best_expert(candidate_poses(sample, problem, k1, k2), mode, thresholds);
}

Rng derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

std::vector<LabeledSample> build_dataset(const std::vector<SyntheticScene>& scenes,
                                         const DatasetOptions& options) {
  const int m = sample_size(options.problem);
  const std::size_t per_scene = options.samples_per_scene;
  std::vector<LabeledSample> out(scenes.size() * per_scene);
  parallel_for(scenes.size(), options.jobs, [&](std::size_t s) {
    const SyntheticScene& scene = scenes[s];
    Rng rng = derived_rng(options.seed, s);
    for (std::size_t i = 0; i < per_scene; ++i) {
      LabeledSample& item = out[s * per_scene + i];
      item.sample = gather(scene.correspondences,
                           draw_uniform(scene.correspondences.size(), m, rng));
      item.l1 = sampson_label(item.sample, scene.gt_fundamental, options.thresholds);
      item.l2_valid = item.l1 == 1.0;
      const auto poses = candidate_poses(item.sample, options.problem, scene.k1, scene.k2);
      const auto error = best_error(poses, scene.gt_pose);
      item.l2 = error ? interpolate_label(*error, options.thresholds.pose_min,
                                          options.thresholds.pose_max)
                      : 0.0;
      if (options.expert != ExpertMode::kNone) {
        item.l_expert = best_expert(poses, options.expert, options.thresholds);
      }
    }
  });
  return out;
}

void save_dataset(const std::vector<LabeledSample>& data, int m, ExpertMode expert,
                  std::uint64_t seed, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  out << "# m=" << m << " expert=" << to_string(expert) << " seed=" << seed << '\n';
  for (const auto& item : data) {
    if (static_cast<int>(item.sample.size()) != m) {
      throw ShapeMismatch("dataset record has " + std::to_string(item.sample.size()) +
                          " correspondences, expected " + std::to_string(m));
    }
    for (const auto& c : item.sample) {
      out << format_double(c.u1) << ',' << format_double(c.v1) << ',' << format_double(c.u2)
          << ',' << format_double(c.v2) << ',';
    }
    out << format_double(item.l1) << ',' << format_double(item.l2) << ','
        << (item.l2_valid ? 1 : 0);
    if (item.l_expert) out << ',' << format_double(*item.l_expert);
    out << '\n';
  }
  if (!out) throw IoError("failed writing dataset file '" + path + "'");
}

DatasetFile load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset file '" + path + "'");
  DatasetFile file;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw FormatError("dataset file: missing header line");
  }
  {
    std::istringstream tokens(line.substr(2));
    std::string token;
    std::string text;
    while (tokens >> token) text += token + "\n";
    try {
      const KeyValues kv = KeyValues::parse(text);
      file.m = static_cast<int>(kv.get_int("m", 0));
      file.expert = expert_from_string(kv.get_string("expert", "none"));
      file.seed = kv.get_uint("seed", 0);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("dataset file: bad header: ") + e.what());
    }
  }
  if (file.m != 5 && file.m != 7) throw FormatError("dataset file: m must be 5 or 7");
  const std::size_t base = static_cast<std::size_t>(file.m) * 4 + 3;
  const std::size_t expected = base + (file.expert == ExpertMode::kNone ? 0 : 1);
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError("dataset file line " + std::to_string(number) + ": bad number '" +
                          field + "'");
      }
    }
    if (v.size() != expected) {
      throw FormatError("dataset file line " + std::to_string(number) + ": expected " +
                        std::to_string(expected) + " fields, found " + std::to_string(v.size()));
    }
    LabeledSample item;
    for (int j = 0; j < file.m; ++j) {
      const std::size_t o = static_cast<std::size_t>(j) * 4;
      item.sample.push_back({v[o], v[o + 1], v[o + 2], v[o + 3]});
    }
    item.l1 = v[base - 3];
    item.l2 = v[base - 2];
    item.l2_valid = v[base - 1] != 0.0;
    if (expected > base) item.l_expert = v[base];
    file.samples.push_back(std::move(item));
  }
  return file;
}

}  // namespace msf
