#include "dynsfm/eval.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dynsfm/error.hpp"

namespace dynsfm {

using nlohmann::json;

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::kShapeMismatch, std::string(what) + ": sequence lengths differ (" + std::to_string(a) + " vs " +
                                        std::to_string(b) + ")");
  }
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2)));
}

double geodesic_deg(const Eigen::Matrix3d& R) {
  // atan2 form stays accurate near zero, where acos of the trace does not.
  const Eigen::Vector3d w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  return std::atan2(0.5 * w.norm(), 0.5 * (R.trace() - 1.0)) * 180.0 / M_PI;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

SimilarityTransform align_similarity(const std::vector<Eigen::Vector3d>& est, const std::vector<Eigen::Vector3d>& gt) {
  check_lengths(est.size(), gt.size(), "align_similarity");
  const auto n = static_cast<Eigen::Index>(est.size());
  if (n < 3) fail(ErrorKind::kDegenerate, "align_similarity: needs at least 3 points");
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = est[static_cast<std::size_t>(i)];
    dst.col(i) = gt[static_cast<std::size_t>(i)];
  }
  const Eigen::Matrix3Xd sc = src.colwise() - src.rowwise().mean();
  const Eigen::Matrix3Xd dc = dst.colwise() - dst.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(dc * sc.transpose() / static_cast<double>(n)).singularValues();
  // Rank below 2 leaves a rotation about the point line undetermined.
  if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) {
    fail(ErrorKind::kDegenerate, "align_similarity: cross-covariance is rank deficient");
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  SimilarityTransform out;
  const Eigen::Matrix3d sR = T.topLeftCorner<3, 3>();
  out.s = std::cbrt(sR.determinant());
  out.R = sR / out.s;
  out.t = T.topRightCorner<3, 1>();
  return out;
}

std::vector<Eigen::Vector3d> centers(const CameraTrajectory& traj) {
  std::vector<Eigen::Vector3d> c;
  c.reserve(traj.size());
  for (const auto& p : traj) c.push_back(p.t);
  return c;
}

double trajectory_diameter(const CameraTrajectory& traj) {
  double d = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    for (std::size_t j = i + 1; j < traj.size(); ++j) d = std::max(d, (traj[i].t - traj[j].t).norm());
  }
  return d;
}

double ate(const CameraTrajectory& est, const CameraTrajectory& gt) {
  check_lengths(est.size(), gt.size(), "ate");
  const auto sim = align_similarity(centers(est), centers(gt));
  double acc = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) acc += (sim.apply(est[i].t) - gt[i].t).squaredNorm();
  return std::sqrt(acc / static_cast<double>(est.size()));
}

RpeResult rpe(const CameraTrajectory& est, const CameraTrajectory& gt, std::size_t delta) {
  check_lengths(est.size(), gt.size(), "rpe");
  if (delta == 0 || est.size() < delta + 1) {
    fail(ErrorKind::kInvalidArgument, "rpe: needs at least gap + 1 frames and a positive gap");
  }
  const std::size_t m = est.size() - delta;
  std::vector<Eigen::Vector3d> te(m), tg(m);
  std::vector<Eigen::Matrix3d> re(m), rg(m);
  for (std::size_t i = 0; i < m; ++i) {
    re[i] = est[i].R.transpose() * est[i + delta].R;
    rg[i] = gt[i].R.transpose() * gt[i + delta].R;
    te[i] = est[i].R.transpose() * (est[i + delta].t - est[i].t);
    tg[i] = gt[i].R.transpose() * (gt[i + delta].t - gt[i].t);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    num += te[i].dot(tg[i]);
    den += te[i].squaredNorm();
  }
  const double s = den > 0.0 ? num / den : 1.0;
  RpeResult r;
  for (std::size_t i = 0; i < m; ++i) {
    r.trans += (s * te[i] - tg[i]).norm();
    r.rot_deg += geodesic_deg(re[i].transpose() * rg[i]);
  }
  r.trans /= static_cast<double>(m);
  r.rot_deg /= static_cast<double>(m);
  return r;
}

DepthMetrics depth_metrics(const std::vector<double>& est, const std::vector<double>& gt,
                           const std::vector<bool>& dynamic) {
  check_lengths(est.size(), gt.size(), "depth_metrics");
  check_lengths(dynamic.size(), gt.size(), "depth_metrics");
  std::vector<double> ratios;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (gt[k] > 0.0 && est[k] > 0.0 && std::isfinite(est[k])) ratios.push_back(gt[k] / est[k]);
  }
  if (ratios.empty()) fail(ErrorKind::kData, "depth_metrics: no entry has positive ground truth and estimate");
  DepthMetrics out;
  out.scale = median(ratios);
  auto add = [&](DepthGroup& g, double e, double t) {
    ++g.count;
    const double scaled = e * out.scale;
    g.abs_rel += std::abs(scaled - t) / t;
    const double ratio = scaled > 0.0 ? std::max(scaled / t, t / scaled) : std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) g.delta[k] += ratio < std::pow(1.25, k + 1) ? 1.0 : 0.0;
  };
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (!(gt[k] > 0.0)) continue;
    add(out.all, est[k], gt[k]);
    if (dynamic[k]) add(out.dynamic, est[k], gt[k]);
  }
  for (DepthGroup* g : {&out.all, &out.dynamic}) {
    const double n = static_cast<double>(g->count);
    if (g->count == 0) {
      g->abs_rel = std::numeric_limits<double>::quiet_NaN();
      for (double& d : g->delta) d = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    g->abs_rel /= n;
    for (double& d : g->delta) d /= n;
  }
  return out;
}

std::vector<std::string> metric_report_keys() {
  return {"ATE", "RPE Trans", "RPE Rot", "Abs Rel", "delta<1.25", "delta<1.25^2", "delta<1.25^3"};
}

json MetricReport::to_json() const {
  json j;
  j["ATE"] = ate;
  j["RPE Trans"] = rpe_trans;
  j["RPE Rot"] = rpe_rot;
  const auto keys = metric_report_keys();
  if (depth) {
    j["Abs Rel"] = {{"dynamic", nullable(depth->dynamic.abs_rel)}, {"all", nullable(depth->all.abs_rel)}};
    for (int k = 0; k < 3; ++k) {
      j[keys[static_cast<std::size_t>(4 + k)]] = {{"dynamic", nullable(depth->dynamic.delta[k])},
                                                  {"all", nullable(depth->all.delta[k])}};
    }
  } else {
    for (std::size_t k = 3; k < keys.size(); ++k) j[keys[k]] = nullptr;
  }
  return j;
}

}  // namespace dynsfm
