#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynsfm/geometry.hpp"

namespace dynsfm {

struct SimilarityTransform {
  double s = 1.0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return s * (R * x) + t; }
  CameraPose apply(const CameraPose& pose) const { return {R * pose.R, apply(pose.t)}; }
};

/// Least-squares similarity taking `est` onto `gt` (closed form, with
/// reflection correction). Needs at least 3 points whose cross-covariance has
/// rank 2 or more; otherwise kDegenerate.
SimilarityTransform align_similarity(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt);

std::vector<Eigen::Vector3d> centers(const CameraTrajectory& traj);

/// Largest distance between two camera centres.
double trajectory_diameter(const CameraTrajectory& traj);

/// RMS centre distance after similarity alignment, in ground-truth units.
double ate(const CameraTrajectory& est, const CameraTrajectory& gt);

struct RpeResult {
  double trans = 0.0;
  double rot_deg = 0.0;
};

/// Relative motion over a fixed frame gap. The translation error is the mean
/// norm of the relative-translation difference after one global
/// least-squares scale; the rotation error is the mean geodesic angle.
RpeResult rpe(const CameraTrajectory& est, const CameraTrajectory& gt, std::size_t delta = 1);

struct DepthGroup {
  std::size_t count = 0;
  double abs_rel = 0.0;
  double delta[3] = {0.0, 0.0, 0.0};  // fraction with ratio < 1.25^(k+1)
};

struct DepthMetrics {
  double scale = 1.0;  // median(gt / est) over valid entries
  DepthGroup dynamic;
  DepthGroup all;
};

/// Entries with non-positive ground truth are skipped. Estimates are scaled
/// by median(gt / est) taken over entries with positive estimates; the
/// remaining entries count as failures of every delta threshold.
DepthMetrics depth_metrics(const std::vector<double>& est, const std::vector<double>& gt,
                           const std::vector<bool>& dynamic);

struct MetricReport {
  double ate = 0.0;
  double rpe_trans = 0.0;
  double rpe_rot = 0.0;
  std::optional<DepthMetrics> depth;

  nlohmann::json to_json() const;
};

/// Keys of MetricReport::to_json, in order.
std::vector<std::string> metric_report_keys();

}  // namespace dynsfm
