#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dynsfm/geometry.hpp"
#include "dynsfm/network.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {

struct InferenceResult {
  NetworkOutputs outputs;
  PointTrackTensor tracks;               // the tracks the network saw
  std::vector<std::size_t> source_index;  // output column -> input column
};

/// Feed-forward pass over every track observed in more than 10 frames.
/// Throws kData when fewer than 2 frames or 2 tracks survive.
InferenceResult infer(const PointTrackTensor& tracks, const ParamStore<float>& params, const NetworkConfig& cfg);

struct StaticSubset {
  std::vector<std::size_t> indices;  // columns of the inferred outputs
  std::vector<Eigen::Vector3d> points;
  double threshold = 0.0;
};

/// Points of B_1 whose gamma is strictly below the threshold.
StaticSubset select_static(const NetworkOutputs& outputs, double threshold);

struct BAResidual {
  std::size_t frame = 0;
  std::size_t point = 0;  // index into BAProblem::points
  Eigen::Vector2d observed = Eigen::Vector2d::Zero();
};

struct BAProblem {
  CameraTrajectory poses;
  std::vector<Eigen::Vector3d> points;
  std::vector<std::size_t> point_ids;  // BA point -> column of the inferred outputs
  std::vector<BAResidual> residuals;
  double gate = 0.0;             // normalized units
  std::size_t candidates = 0;    // observed (frame, static point) pairs
  std::size_t gated_out = 0;     // candidates rejected by the gate
  std::size_t dropped_points = 0;  // static points left without residuals
};

/// Keeps observed pairs whose initial reprojection error is below
/// pixel_gate / max(fx, fy). Points with no surviving pair are dropped.
/// Throws kData when nothing survives.
BAProblem build_ba_problem(const StaticSubset& subset, const CameraTrajectory& poses, const PointTrackTensor& tracks,
                           double pixel_gate, const Intrinsics& intr);

struct BAOptions {
  std::size_t max_iters = 100;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double tol = 1e-10;
  bool use_schur = true;  // false: solve the full damped system densely
};

struct BAResult {
  CameraTrajectory poses;
  std::vector<Eigen::Vector3d> points;
  std::vector<double> cost_trace;  // initial cost, then after every accepted step
  std::size_t iterations = 0;      // linear solves
  bool converged = false;
};

/// Sum of squared residuals.
double ba_cost(const BAProblem& problem, const CameraTrajectory& poses, const std::vector<Eigen::Vector3d>& points);
double ba_mean_error(const BAProblem& problem, const CameraTrajectory& poses,
                     const std::vector<Eigen::Vector3d>& points);

/// Levenberg-Marquardt over all poses and points with pose 0 and the length
/// of the pose-0 to pose-1 baseline held fixed. Rotations are updated by
/// right-multiplied exponential increments.
BAResult bundle_adjust(const BAProblem& problem, const BAOptions& opts = {});

// ---- exports -------------------------------------------------------------------------

/// {"frames": N, "poses": [{"R": [9, row-major], "t": [3]}, ...]}
std::string trajectory_to_json(const CameraTrajectory& poses);
CameraTrajectory trajectory_from_json(const std::string& text);
void save_trajectory(const std::filesystem::path& path, const CameraTrajectory& poses);
CameraTrajectory load_trajectory(const std::filesystem::path& path);

/// Binary little-endian PLY with float32 xyz and, if given, a float32
/// per-vertex "quality" property.
std::vector<std::uint8_t> encode_ply(const std::vector<Eigen::Vector3d>& points,
                                     const std::optional<std::vector<double>>& quality = std::nullopt);
struct PlyCloud {
  std::vector<Eigen::Vector3f> points;
  std::optional<std::vector<float>> quality;
};
PlyCloud decode_ply(const std::vector<std::uint8_t>& bytes);

std::string cost_trace_csv(const std::vector<double>& trace);

}  // namespace dynsfm
