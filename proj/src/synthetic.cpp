#include "dynsfm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "dynsfm/error.hpp"
#include "keyvalue.hpp"

namespace dynsfm {

using nlohmann::json;

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "lateral") return TrajectoryKind::kLateral;
  fail(ErrorKind::kConfig, "unknown trajectory kind '" + name + "' (expected orbit|lateral)");
}

std::string to_string(TrajectoryKind kind) {
  return kind == TrajectoryKind::kOrbit ? "orbit" : "lateral";
}

namespace {

struct SynthField {
  const char* key;
  std::function<std::string(const SynthConfig&)> get;
  std::function<void(SynthConfig&, const std::string&)> set;
};

template <typename M>
SynthField size_field(const char* key, M SynthConfig::*member) {
  return {key, [member](const SynthConfig& c) { return std::to_string(c.*member); },
          [key, member](SynthConfig& c, const std::string& v) { c.*member = kv::parse_size(key, v); }};
}

SynthField double_field(const char* key, double SynthConfig::*member) {
  return {key, [member](const SynthConfig& c) { return kv::format_double(c.*member); },
          [key, member](SynthConfig& c, const std::string& v) { c.*member = kv::parse_double(key, v); }};
}

SynthField intrinsic_field(const char* key, double Intrinsics::*member) {
  return {key, [member](const SynthConfig& c) { return kv::format_double(c.intrinsics.*member); },
          [key, member](SynthConfig& c, const std::string& v) { c.intrinsics.*member = kv::parse_double(key, v); }};
}

const std::vector<SynthField>& synth_fields() {
  static const std::vector<SynthField> table = {
      size_field("frames", &SynthConfig::frames),
      size_field("points", &SynthConfig::points),
      size_field("bases", &SynthConfig::bases),
      double_field("dynamic_fraction", &SynthConfig::dynamic_fraction),
      double_field("noise_std", &SynthConfig::noise_std),
      double_field("occlusion_rate", &SynthConfig::occlusion_rate),
      double_field("occlusion_mean_length", &SynthConfig::occlusion_mean_length),
      size_field("reseed_interval", &SynthConfig::reseed_interval),
      {"trajectory", [](const SynthConfig& c) { return to_string(c.trajectory); },
       [](SynthConfig& c, const std::string& v) { c.trajectory = parse_trajectory_kind(v); }},
      double_field("camera_distance", &SynthConfig::camera_distance),
      double_field("arc_degrees", &SynthConfig::arc_degrees),
      double_field("scene_extent", &SynthConfig::scene_extent),
      double_field("dynamic_amplitude", &SynthConfig::dynamic_amplitude),
      intrinsic_field("fx", &Intrinsics::fx),
      intrinsic_field("fy", &Intrinsics::fy),
      intrinsic_field("cx", &Intrinsics::cx),
      intrinsic_field("cy", &Intrinsics::cy),
  };
  return table;
}

}  // namespace

void SynthConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : synth_fields()) {
    if (key == f.key) return f.set(*this, value);
  }
  fail(ErrorKind::kConfig, "unknown synthetic configuration key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> SynthConfig::key_values() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : synth_fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

Eigen::MatrixX3d SyntheticScene::cloud(std::size_t frame) const {
  Eigen::MatrixX3d X = bases.front();
  for (std::size_t k = 1; k < bases.size(); ++k) {
    X += coeffs(static_cast<Eigen::Index>(frame), static_cast<Eigen::Index>(k - 1)) * bases[k];
  }
  return X;
}

Eigen::MatrixXd SyntheticScene::depths() const {
  Eigen::MatrixXd d(static_cast<Eigen::Index>(frames()), static_cast<Eigen::Index>(points()));
  for (std::size_t i = 0; i < frames(); ++i) {
    const Eigen::MatrixX3d X = cloud(i);
    for (std::size_t j = 0; j < points(); ++j) {
      const Eigen::Vector3d Xj = X.row(static_cast<Eigen::Index>(j)).transpose();
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = camera_point(Xj, poses[i]).z();
    }
  }
  return d;
}

namespace {

void check_config(const SynthConfig& cfg) {
  if (cfg.frames < 2) fail(ErrorKind::kConfig, "synthetic scene needs at least 2 frames");
  if (cfg.points < 4) fail(ErrorKind::kConfig, "synthetic scene needs at least 4 points");
  if (cfg.bases < 1) fail(ErrorKind::kConfig, "synthetic scene needs at least one basis");
  if (!(cfg.dynamic_fraction >= 0.0 && cfg.dynamic_fraction <= 1.0)) {
    fail(ErrorKind::kConfig, "dynamic_fraction must lie in [0, 1]");
  }
  if (cfg.noise_std < 0.0) fail(ErrorKind::kConfig, "noise_std must be non-negative");
  if (!(cfg.occlusion_rate >= 0.0 && cfg.occlusion_rate < 1.0)) {
    fail(ErrorKind::kConfig, "occlusion_rate must lie in [0, 1)");
  }
  if (cfg.occlusion_mean_length < 1.0) fail(ErrorKind::kConfig, "occlusion_mean_length must be >= 1");
  if (!(cfg.intrinsics.fx > 0.0 && cfg.intrinsics.fy > 0.0)) fail(ErrorKind::kConfig, "focal lengths must be positive");
}

/// White noise smoothed by a Gaussian kernel, rescaled to unit peak magnitude.
Eigen::VectorXd smooth_signal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = std::max(2.0, static_cast<double>(n) / 6.0);
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const std::size_t padded = n + 2 * static_cast<std::size_t>(half);
  std::vector<double> white(padded);
  for (auto& w : white) w = normal(rng);
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    double wsum = 0.0;
    for (std::ptrdiff_t o = -half; o <= half; ++o) {
      const double w = std::exp(-0.5 * static_cast<double>(o * o) / (sigma * sigma));
      acc += w * white[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + half + o)];
      wsum += w;
    }
    out[static_cast<Eigen::Index>(i)] = acc / wsum;
  }
  const double peak = out.cwiseAbs().maxCoeff();
  if (peak > 0.0) out /= peak;
  return out;
}

CameraTrajectory make_trajectory(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  constexpr double kDeg = M_PI / 180.0;
  const double offset = 10.0 * kDeg * unit(rng);
  const double direction = unit(rng) < 0.0 ? -1.0 : 1.0;
  const double climb = 0.1 * cfg.camera_distance * unit(rng);
  CameraTrajectory poses(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(cfg.frames - 1) - 0.5;
    Eigen::Vector3d center;
    if (cfg.trajectory == TrajectoryKind::kOrbit) {
      const double theta = offset + direction * cfg.arc_degrees * kDeg * s;
      center = Eigen::Vector3d(cfg.camera_distance * std::sin(theta), climb * s,
                               -cfg.camera_distance * std::cos(theta));
    } else {
      const double travel = 2.0 * cfg.camera_distance * std::tan(0.5 * cfg.arc_degrees * kDeg);
      center = Eigen::Vector3d(direction * travel * s, climb * s, -cfg.camera_distance);
    }
    poses[i] = look_at(center, Eigen::Vector3d::Zero());
  }
  return poses;
}

bool try_generate(const SynthConfig& cfg, std::mt19937_64& rng, SyntheticOutput& out) {
  const std::size_t n = cfg.frames;
  const std::size_t p = cfg.points;
  const std::size_t k_gt = cfg.bases;
  std::uniform_real_distribution<double> box(-cfg.scene_extent, cfg.scene_extent);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform01(0.0, 1.0);

  SyntheticScene scene;
  scene.intrinsics = cfg.intrinsics;
  scene.poses = make_trajectory(cfg, rng);

  scene.dynamic.assign(p, false);
  const auto n_dynamic = static_cast<std::size_t>(std::lround(cfg.dynamic_fraction * static_cast<double>(p)));
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (k_gt > 1) {
    for (std::size_t q = 0; q < n_dynamic; ++q) scene.dynamic[order[q]] = true;
  }

  scene.bases.assign(k_gt, Eigen::MatrixX3d::Zero(static_cast<Eigen::Index>(p), 3));
  for (std::size_t j = 0; j < p; ++j) {
    for (int c = 0; c < 3; ++c) scene.bases[0](static_cast<Eigen::Index>(j), c) = box(rng);
  }
  for (std::size_t k = 1; k < k_gt; ++k) {
    for (std::size_t j = 0; j < p; ++j) {
      if (!scene.dynamic[j]) continue;
      for (int c = 0; c < 3; ++c) {
        scene.bases[k](static_cast<Eigen::Index>(j), c) = cfg.dynamic_amplitude * normal(rng);
      }
    }
  }
  scene.coeffs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_gt - 1));
  for (std::size_t k = 1; k < k_gt; ++k) scene.coeffs.col(static_cast<Eigen::Index>(k - 1)) = smooth_signal(n, rng);

  PointTrackTensor tracks(n, p);
  tracks.intrinsics = cfg.intrinsics;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::MatrixX3d X = scene.cloud(i);
    for (std::size_t j = 0; j < p; ++j) {
      const Eigen::Vector3d Xj = X.row(static_cast<Eigen::Index>(j)).transpose();
      const Eigen::Vector3d c = camera_point(Xj, scene.poses[i]);
      if (c.z() < 1e-3) return false;
      Eigen::Vector2d m(c.x() / c.z(), c.y() / c.z());
      if (cfg.noise_std > 0.0) {
        m.x() += cfg.noise_std * normal(rng);
        m.y() += cfg.noise_std * normal(rng);
      }
      tracks.set(i, j, static_cast<float>(m.x()), static_cast<float>(m.y()), true);
    }
  }

  if (cfg.occlusion_rate > 0.0) {
    std::geometric_distribution<int> run_length(1.0 / cfg.occlusion_mean_length);
    for (std::size_t j = 0; j < p; ++j) {
      std::size_t i = 0;
      while (i < n) {
        if (uniform01(rng) < cfg.occlusion_rate) {
          const std::size_t len = 1 + static_cast<std::size_t>(run_length(rng));
          for (std::size_t r = i; r < std::min(n, i + len); ++r) tracks.observed[tracks.index(r, j)] = 0;
          i += len;
        } else {
          ++i;
        }
      }
      if (tracks.observation_count(j) == 0) {
        const std::size_t keep = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        tracks.observed[tracks.index(keep, j)] = 1;
      }
    }
  }
  if (cfg.reseed_interval > 0) {
    // Births leave at least 11 frames of track.
    std::vector<std::size_t> births;
    for (std::size_t b = 0; b == 0 || b + 11 <= n; b += cfg.reseed_interval) births.push_back(b);
    std::uniform_int_distribution<std::size_t> pick(0, births.size() - 1);
    for (std::size_t j = 0; j < p; ++j) {
      const std::size_t birth = births[pick(rng)];
      for (std::size_t i = 0; i < birth; ++i) tracks.observed[tracks.index(i, j)] = 0;
      if (tracks.observation_count(j) == 0) tracks.observed[tracks.index(birth, j)] = 1;
    }
  }
  for (std::size_t k = 0; k < tracks.observed.size(); ++k) {
    if (!tracks.observed[k]) {
      tracks.xy[2 * k] = 0.0f;
      tracks.xy[2 * k + 1] = 0.0f;
    }
  }

  out.scene = std::move(scene);
  out.tracks = std::move(tracks);
  return true;
}

}  // namespace

SyntheticOutput generate_synthetic_scene(const SynthConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  std::mt19937_64 rng(seed);
  SyntheticOutput out;
  for (int attempt = 0; attempt < 100; ++attempt) {
    if (try_generate(cfg, rng, out)) return out;
  }
  fail(ErrorKind::kData, "synthetic generator placed points behind a camera in 100 attempts");
}

// ---- JSON sidecar ------------------------------------------------------------

std::string scene_to_json(const SyntheticScene& scene, int indent) {
  json j;
  j["frames"] = scene.frames();
  j["points"] = scene.points();
  json poses = json::array();
  for (const auto& pose : scene.poses) {
    std::vector<double> R;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R.push_back(pose.R(r, c));
    }
    poses.push_back({{"R", R}, {"t", {pose.t.x(), pose.t.y(), pose.t.z()}}});
  }
  j["poses"] = poses;
  json bases = json::array();
  for (const auto& B : scene.bases) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < B.rows(); ++r) rows.push_back({B(r, 0), B(r, 1), B(r, 2)});
    bases.push_back(rows);
  }
  j["bases"] = bases;
  json coeffs = json::array();
  for (Eigen::Index i = 0; i < scene.coeffs.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index k = 0; k < scene.coeffs.cols(); ++k) row.push_back(scene.coeffs(i, k));
    coeffs.push_back(row);
  }
  j["coeffs"] = coeffs;
  j["dynamic"] = scene.dynamic;
  j["intrinsics"] = {{"fx", scene.intrinsics.fx},
                     {"fy", scene.intrinsics.fy},
                     {"cx", scene.intrinsics.cx},
                     {"cy", scene.intrinsics.cy}};
  return j.dump(indent);
}

SyntheticScene scene_from_json(const std::string& text) {
  SyntheticScene scene;
  try {
    const json j = json::parse(text);
    for (const auto& p : j.at("poses")) {
      CameraPose pose;
      const auto R = p.at("R").get<std::vector<double>>();
      const auto t = p.at("t").get<std::vector<double>>();
      if (R.size() != 9 || t.size() != 3) fail(ErrorKind::kFormat, "scene JSON: malformed pose");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.R(r, c) = R[static_cast<std::size_t>(3 * r + c)];
      }
      pose.t = Eigen::Vector3d(t[0], t[1], t[2]);
      scene.poses.push_back(pose);
    }
    for (const auto& b : j.at("bases")) {
      Eigen::MatrixX3d B(static_cast<Eigen::Index>(b.size()), 3);
      for (std::size_t r = 0; r < b.size(); ++r) {
        for (int c = 0; c < 3; ++c) B(static_cast<Eigen::Index>(r), c) = b[r][static_cast<std::size_t>(c)].get<double>();
      }
      scene.bases.push_back(B);
    }
    const auto& c = j.at("coeffs");
    const std::size_t kdev = scene.bases.empty() ? 0 : scene.bases.size() - 1;
    scene.coeffs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(kdev));
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t k = 0; k < kdev; ++k) {
        scene.coeffs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[i][k].get<double>();
      }
    }
    scene.dynamic = j.at("dynamic").get<std::vector<bool>>();
    const auto& in = j.at("intrinsics");
    scene.intrinsics = Intrinsics{in.at("fx").get<double>(), in.at("fy").get<double>(), in.at("cx").get<double>(),
                                  in.at("cy").get<double>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("scene JSON: ") + e.what());
  }
  return scene;
}

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene) {
  const std::string text = scene_to_json(scene);
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

SyntheticScene load_scene(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return scene_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace dynsfm
