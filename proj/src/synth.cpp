#include "msf/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>

#include "msf/errors.hpp"

namespace msf {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::Vector3d random_unit_vector(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Direction with the given azimuth (from +z towards +x) and elevation
// (towards -y, i.e. up in image coordinates).
Eigen::Vector3d direction(double azimuth, double elevation) {
  return {std::sin(azimuth) * std::cos(elevation), -std::sin(elevation),
          std::cos(azimuth) * std::cos(elevation)};
}

// Rotates `axis` by up to `max_tilt` radians in a random direction.
Eigen::Vector3d tilt(const Eigen::Vector3d& axis, double max_tilt, Rng& rng) {
  Eigen::Vector3d perp = axis.cross(random_unit_vector(rng));
  while (perp.norm() < 1e-9) perp = axis.cross(random_unit_vector(rng));
  return axis_angle(perp, uniform(rng, 0.0, max_tilt)) * axis;
}

double sample_beta(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

bool inside(double u, double v, const SceneConfig& c) {
  return u >= 0.0 && u <= c.image_width && v >= 0.0 && v <= c.image_height;
}

void write_values(std::ostream& out, const char* tag, const double* v, int n) {
  out << tag;
  for (int i = 0; i < n; ++i) out << ' ' << format_double(v[i]);
  out << '\n';
}

std::vector<double> read_values(std::istream& in, const std::string& tag, int n) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scene file: missing '" + tag + "' line");
  std::istringstream row(line);
  std::string found;
  row >> found;
  if (found != tag) throw FormatError("scene file: expected '" + tag + "', found '" + found + "'");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) {
    std::string token;
    if (!(row >> token)) throw FormatError("scene file: short '" + tag + "' line");
    try {
      std::size_t used = 0;
      x = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw FormatError("scene file: bad number '" + token + "' in '" + tag + "'");
    }
  }
  return v;
}

}  // namespace

const char* to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::kDriving:
      return "driving";
    case MotionKind::kCollection:
      return "collection";
    case MotionKind::kGeneral:
      break;
  }
  return "general";
}

MotionKind motion_from_string(const std::string& name) {
  if (name == "general") return MotionKind::kGeneral;
  if (name == "driving") return MotionKind::kDriving;
  if (name == "collection") return MotionKind::kCollection;
  throw ConfigError("motion: unknown kind '" + name + "' (expected general|driving|collection)");
}

void SceneConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (n_points < 8) fail("n_points", "must be at least 8");
  if (!(min_depth > 0.0)) fail("min_depth", "must be positive");
  if (!(max_depth > min_depth)) fail("max_depth", "must exceed min_depth");
  if (!(image_width > 0.0)) fail("image_width", "must be positive");
  if (!(image_height > 0.0)) fail("image_height", "must be positive");
  if (!(intrinsics.fx > 0.0)) fail("fx", "must be positive");
  if (!(intrinsics.fy > 0.0)) fail("fy", "must be positive");
  if (!std::isfinite(intrinsics.cx)) fail("cx", "must be finite");
  if (!std::isfinite(intrinsics.cy)) fail("cy", "must be finite");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma", "must be >= 0");
  if (!(outlier_ratio >= 0.0 && outlier_ratio < 1.0)) fail("outlier_ratio", "must be in [0, 1)");
  if (!(planar_fraction >= 0.0 && planar_fraction <= 1.0)) {
    fail("planar_fraction", "must be in [0, 1]");
  }
}

SceneConfig SceneConfig::from_key_values(const KeyValues& kv) {
  SceneConfig c;
  c.n_points = static_cast<int>(kv.get_int("n_points", c.n_points));
  c.min_depth = kv.get_double("min_depth", c.min_depth);
  c.max_depth = kv.get_double("max_depth", c.max_depth);
  c.image_width = kv.get_double("image_width", c.image_width);
  c.image_height = kv.get_double("image_height", c.image_height);
  c.intrinsics.fx = kv.get_double("fx", c.intrinsics.fx);
  c.intrinsics.fy = kv.get_double("fy", c.intrinsics.fy);
  c.intrinsics.cx = kv.get_double("cx", c.intrinsics.cx);
  c.intrinsics.cy = kv.get_double("cy", c.intrinsics.cy);
  c.noise_sigma = kv.get_double("noise_sigma", c.noise_sigma);
  c.outlier_ratio = kv.get_double("outlier_ratio", c.outlier_ratio);
  c.motion = motion_from_string(kv.get_string("motion", to_string(c.motion)));
  c.planar_fraction = kv.get_double("planar_fraction", c.planar_fraction);
  c.seed = kv.get_uint("seed", c.seed);
  return c;
}

KeyValues SceneConfig::to_key_values() const {
  KeyValues kv;
  kv.set("n_points", std::to_string(n_points));
  kv.set("min_depth", format_double(min_depth));
  kv.set("max_depth", format_double(max_depth));
  kv.set("image_width", format_double(image_width));
  kv.set("image_height", format_double(image_height));
  kv.set("fx", format_double(intrinsics.fx));
  kv.set("fy", format_double(intrinsics.fy));
  kv.set("cx", format_double(intrinsics.cx));
  kv.set("cy", format_double(intrinsics.cy));
  kv.set("noise_sigma", format_double(noise_sigma));
  kv.set("outlier_ratio", format_double(outlier_ratio));
  kv.set("motion", to_string(motion));
  kv.set("planar_fraction", format_double(planar_fraction));
  kv.set("seed", std::to_string(seed));
  return kv;
}

Pose sample_motion(MotionKind kind, Rng& rng) {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d travel;
  switch (kind) {
    case MotionKind::kDriving: {
      const double yaw = uniform(rng, -10.0, 10.0) * kDegToRad;
      const double pitch = uniform(rng, -1.0, 1.0) * kDegToRad;
      const double roll = uniform(rng, -1.0, 1.0) * kDegToRad;
      rotation = axis_angle(Eigen::Vector3d::UnitY(), yaw) *
                 axis_angle(Eigen::Vector3d::UnitX(), pitch) *
                 axis_angle(Eigen::Vector3d::UnitZ(), roll);
      travel = direction(uniform(rng, -15.0, 15.0) * kDegToRad,
                         uniform(rng, -2.0, 2.0) * kDegToRad);
      break;
    }
    case MotionKind::kCollection: {
      Eigen::Vector3d axis;
      if (uniform(rng, 0.0, 1.0) < 0.5) {
        axis = tilt(Eigen::Vector3d::UnitY(), 5.0 * kDegToRad, rng);
      } else {
        const double azimuth = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        axis = direction(azimuth, uniform(rng, -5.0, 5.0) * kDegToRad);
      }
      rotation = axis_angle(axis, uniform(rng, -30.0, 30.0) * kDegToRad);
      travel = direction(uniform(rng, 0.0, 2.0 * std::numbers::pi),
                         uniform(rng, -20.0, 20.0) * kDegToRad);
      break;
    }
    case MotionKind::kGeneral: {
      const Eigen::Vector3d axis = random_unit_vector(rng);
      rotation = axis_angle(axis, uniform(rng, 0.0, 30.0) * kDegToRad);
      travel = random_unit_vector(rng);
      break;
    }
  }
  // The second camera centre moves along `travel`: X2 = R (X1 - c).
  return {rotation, (-(rotation * travel)).normalized()};
}

SyntheticScene generate_scene(const SceneConfig& config) {
  config.validate();
  Rng rng(config.seed);
  SyntheticScene scene;
  scene.config = config;
  scene.k1 = config.intrinsics;
  scene.k2 = config.intrinsics;
  scene.planar = uniform(rng, 0.0, 1.0) < config.planar_fraction;
  scene.gt_pose = sample_motion(config.motion, rng);
  scene.gt_essential = essential_from_pose(scene.gt_pose);
  scene.gt_fundamental = essential_to_fundamental(scene.gt_essential, scene.k1, scene.k2);

  // Plane through a point on the optical axis, normal tilted up to 60 deg
  // away from the viewing direction.
  Eigen::Vector3d plane_point = Eigen::Vector3d::Zero();
  Eigen::Vector3d plane_normal = Eigen::Vector3d::UnitZ();
  if (scene.planar) {
    plane_point.z() = uniform(rng, config.min_depth, config.max_depth);
    plane_normal = tilt(Eigen::Vector3d::UnitZ(), 60.0 * kDegToRad, rng);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  const Pose& pose = scene.gt_pose;
  const CameraIntrinsics& k = config.intrinsics;
  const std::size_t wanted = static_cast<std::size_t>(config.n_points);
  const std::size_t max_attempts = 10 * wanted;
  for (std::size_t attempt = 0; attempt < max_attempts && scene.correspondences.size() < wanted;
       ++attempt) {
    const double u = uniform(rng, 0.0, config.image_width);
    const double v = uniform(rng, 0.0, config.image_height);
    const Eigen::Vector3d ray = k.normalize(u, v);
    double depth;
    if (scene.planar) {
      const double denom = plane_normal.dot(ray);
      if (std::abs(denom) < 1e-12) continue;
      depth = plane_normal.dot(plane_point) / denom;
      if (depth < config.min_depth || depth > config.max_depth) continue;
    } else {
      depth = uniform(rng, config.min_depth, config.max_depth);
    }
    const Eigen::Vector3d x2 = pose.rotation * (depth * ray) + pose.translation;
    if (x2.z() <= 0.0) continue;
    Correspondence c{u, v, k.fx * x2.x() / x2.z() + k.cx, k.fy * x2.y() / x2.z() + k.cy};
    if (!inside(c.u2, c.v2, config)) continue;

    c.u1 += config.noise_sigma * noise(rng);
    c.v1 += config.noise_sigma * noise(rng);
    c.u2 += config.noise_sigma * noise(rng);
    c.v2 += config.noise_sigma * noise(rng);
    if (!inside(c.u1, c.v1, config) || !inside(c.u2, c.v2, config)) continue;

    const bool outlier = uniform(rng, 0.0, 1.0) < config.outlier_ratio;
    if (outlier) {
      bool placed = false;
      for (int tries = 0; tries < 100 && !placed; ++tries) {
        c.u2 = uniform(rng, 0.0, config.image_width);
        c.v2 = uniform(rng, 0.0, config.image_height);
        placed = sampson_error(scene.gt_fundamental, c) >= kOutlierMinError;
      }
      if (!placed) continue;
    }
    scene.correspondences.push_back(c);
    scene.inlier.push_back(outlier ? 0 : 1);
  }
  if (scene.correspondences.size() < wanted) {
    throw GenerationFailed("only " + std::to_string(scene.correspondences.size()) + " of " +
                           std::to_string(wanted) + " points survived");
  }

  scene.quality.reserve(wanted);
  for (std::uint8_t flag : scene.inlier) {
    scene.quality.push_back(flag ? sample_beta(rng, 5.0, 2.0) : sample_beta(rng, 2.0, 5.0));
  }
  return scene;
}

void save_scene(const SyntheticScene& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scene file '" + path + "'");
  out << "NEFSCENE v1\n";
  out << "config";
  const KeyValues config = scene.config.to_key_values();
  for (const auto& [key, value] : config.entries()) {
    out << ' ' << key << '=' << value;
  }
  out << '\n';
  out << "planar " << (scene.planar ? 1 : 0) << '\n';
  Eigen::Matrix<double, 3, 3, Eigen::RowMajor> f = scene.gt_fundamental.matrix;
  Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = scene.gt_pose.rotation;
  write_values(out, "F", f.data(), 9);
  write_values(out, "R", r.data(), 9);
  write_values(out, "t", scene.gt_pose.translation.data(), 3);
  const double k1[4] = {scene.k1.fx, scene.k1.fy, scene.k1.cx, scene.k1.cy};
  const double k2[4] = {scene.k2.fx, scene.k2.fy, scene.k2.cx, scene.k2.cy};
  write_values(out, "K1", k1, 4);
  write_values(out, "K2", k2, 4);
  out << "points " << scene.correspondences.size() << '\n';
  for (std::size_t i = 0; i < scene.correspondences.size(); ++i) {
    const Correspondence& c = scene.correspondences[i];
    out << format_double(c.u1) << ' ' << format_double(c.v1) << ' ' << format_double(c.u2) << ' '
        << format_double(c.v2) << ' ' << format_double(scene.quality[i]) << ' '
        << static_cast<int>(scene.inlier[i]) << '\n';
  }
  if (!out) throw IoError("failed writing scene file '" + path + "'");
}

SyntheticScene load_scene(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read scene file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "NEFSCENE v1") {
    throw FormatError("scene file '" + path + "': missing 'NEFSCENE v1' header");
  }
  SyntheticScene scene;
  if (!std::getline(in, line) || line.rfind("config", 0) != 0) {
    throw FormatError("scene file: missing config line");
  }
  {
    std::istringstream tokens(line.substr(6));
    std::string token;
    std::string text;
    while (tokens >> token) text += token + "\n";
    try {
      scene.config = SceneConfig::from_key_values(KeyValues::parse(text));
    } catch (const ConfigError& e) {
      throw FormatError(std::string("scene file: bad config: ") + e.what());
    }
  }
  const auto planar = read_values(in, "planar", 1);
  scene.planar = planar[0] != 0.0;
  const auto f = read_values(in, "F", 9);
  const auto r = read_values(in, "R", 9);
  const auto t = read_values(in, "t", 3);
  const auto k1 = read_values(in, "K1", 4);
  const auto k2 = read_values(in, "K2", 4);
  for (int i = 0; i < 9; ++i) {
    scene.gt_fundamental.matrix(i / 3, i % 3) = f[static_cast<std::size_t>(i)];
    scene.gt_pose.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)];
  }
  scene.gt_pose.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  scene.k1 = {k1[0], k1[1], k1[2], k1[3]};
  scene.k2 = {k2[0], k2[1], k2[2], k2[3]};
  scene.gt_essential = essential_from_pose(scene.gt_pose);

  const auto count = read_values(in, "points", 1);
  if (!(count[0] >= 0.0)) throw FormatError("scene file: bad point count");
  const auto n = static_cast<std::size_t>(count[0]);
  scene.correspondences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw FormatError("scene file: truncated point list");
    std::istringstream row(line);
    Correspondence c;
    double quality = 0.0;
    int flag = 0;
    if (!(row >> c.u1 >> c.v1 >> c.u2 >> c.v2 >> quality >> flag) || (flag != 0 && flag != 1)) {
      throw FormatError("scene file: bad point line " + std::to_string(i + 1));
    }
    scene.correspondences.push_back(c);
    scene.quality.push_back(quality);
    scene.inlier.push_back(static_cast<std::uint8_t>(flag));
  }
  return scene;
}

}  // namespace msf
