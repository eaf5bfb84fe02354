#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dynsfm/geometry.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {

enum class TrajectoryKind { kOrbit, kLateral };

TrajectoryKind parse_trajectory_kind(const std::string& name);
std::string to_string(TrajectoryKind kind);

struct SynthConfig {
  std::size_t frames = 40;
  std::size_t points = 120;
  std::size_t bases = 3;  // K_gt, including the static basis
  double dynamic_fraction = 0.3;
  double noise_std = 0.0;       // normalized image units
  double occlusion_rate = 0.0;  // per-frame probability of starting an occlusion run
  double occlusion_mean_length = 4.0;
  // When nonzero, each track is first seen at a multiple of this many frames,
  // like a tracker re-seeding its grid. Zero means every track starts at frame 0.
  std::size_t reseed_interval = 0;
  TrajectoryKind trajectory = TrajectoryKind::kOrbit;
  double camera_distance = 15.0;
  double arc_degrees = 40.0;  // orbit sweep, or lateral travel in camera distances x 100
  double scene_extent = 3.0;  // static points lie in [-extent, extent]^3
  double dynamic_amplitude = 1.0;
  Intrinsics intrinsics;

  /// Text keys mirror the member names; intrinsics use fx, fy, cx, cy.
  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> key_values() const;
};

/// Ground truth behind a synthetic track tensor. Frame clouds follow
/// X_i = B_1 + sum_{k>=2} c_ik B_k.
struct SyntheticScene {
  CameraTrajectory poses;
  std::vector<Eigen::MatrixX3d> bases;  // K_gt matrices of P x 3
  Eigen::MatrixXd coeffs;               // N x (K_gt - 1)
  std::vector<bool> dynamic;            // per point
  Intrinsics intrinsics;

  std::size_t frames() const { return poses.size(); }
  std::size_t points() const { return dynamic.size(); }
  Eigen::MatrixX3d cloud(std::size_t frame) const;
  /// Camera-frame depth of every point in every frame, N x P.
  Eigen::MatrixXd depths() const;
};

struct SyntheticOutput {
  SyntheticScene scene;
  PointTrackTensor tracks;
};

/// Deterministic per (cfg, seed). Retries up to 100 times if a point lands
/// behind a camera.
SyntheticOutput generate_synthetic_scene(const SynthConfig& cfg, std::uint64_t seed);

/// JSON sidecar for human inspection: row-major rotations, centers, bases,
/// coefficients, dynamic labels and intrinsics.
std::string scene_to_json(const SyntheticScene& scene, int indent = 2);
SyntheticScene scene_from_json(const std::string& text);
void save_scene(const std::filesystem::path& path, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& path);

}  // namespace dynsfm
