#pragma once

// Noiseless static scenes with perturbed starting poses for bundle adjustment
// (unit tests and acceptance).

#include <Eigen/Geometry>
#include <random>

#include "dynsfm/inference.hpp"
#include "dynsfm/synthetic.hpp"

namespace dynsfm::testing {

struct BaOracle {
  SyntheticOutput truth;
  BAProblem problem;  // starts from the perturbed poses and points
};

inline CameraPose perturb_pose(const CameraPose& pose, double angle_deg, double translation_fraction,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Vector3d axis = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  const Eigen::Vector3d dir = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  CameraPose out;
  out.R = Eigen::AngleAxisd(angle_deg * M_PI / 180.0, axis).toRotationMatrix() * pose.R;
  out.t = pose.t + translation_fraction * pose.t.norm() * dir;
  return out;
}

/// 30 static points, 20 frames; every pose rotated by `angle_deg` about a
/// random axis and shifted by `translation_fraction` of its distance to the
/// origin; points shifted by the same fraction of the scene extent.
inline BaOracle make_ba_oracle(std::uint64_t seed, double angle_deg = 1.0, double translation_fraction = 0.01,
                               std::size_t frames = 20, std::size_t points = 30) {
  SynthConfig cfg;
  cfg.frames = frames;
  cfg.points = points;
  cfg.dynamic_fraction = 0.0;
  BaOracle o;
  o.truth = generate_synthetic_scene(cfg, seed);
  std::mt19937_64 rng(seed ^ 0xbadc0ffeull);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < frames; ++i) {
    o.problem.poses.push_back(perturb_pose(o.truth.scene.poses[i], angle_deg, translation_fraction, rng));
  }
  for (std::size_t j = 0; j < points; ++j) {
    const Eigen::Vector3d X = o.truth.scene.bases[0].row(static_cast<Eigen::Index>(j)).transpose();
    const Eigen::Vector3d d(n(rng), n(rng), n(rng));
    o.problem.points.push_back(X + translation_fraction * cfg.scene_extent * d.normalized());
    o.problem.point_ids.push_back(j);
    for (std::size_t i = 0; i < frames; ++i) {
      const auto& t = o.truth.tracks;
      o.problem.residuals.push_back({i, j, Eigen::Vector2d(t.x(i, j), t.y(i, j))});
    }
  }
  o.problem.candidates = o.problem.residuals.size();
  return o;
}

}  // namespace dynsfm::testing
