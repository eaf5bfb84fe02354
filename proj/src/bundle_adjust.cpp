#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <cmath>
#include <sstream>

#include "dynsfm/inference.hpp"

namespace dynsfm {

namespace {

constexpr double kMinDepth = 1e-8;
constexpr double kMaxLambda = 1e16;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

double clamp_depth(double z) { return z < 0.0 ? std::min(z, -kMinDepth) : std::max(z, kMinDepth); }

Eigen::Vector2d residual(const CameraPose& pose, const Eigen::Vector3d& X, const Eigen::Vector2d& m) {
  const Eigen::Vector3d c = pose.R.transpose() * (X - pose.t);
  return c.head<2>() / clamp_depth(c.z()) - m;
}

/// Parameter layout: frame 0 is frozen, frame 1 has a rotation increment and
/// two translation directions tangent to the baseline sphere, later frames
/// have six camera parameters, then three per point.
struct Layout {
  std::vector<Eigen::Index> cam_offset;
  std::vector<Eigen::Index> cam_dim;
  Eigen::Index cams = 0;
  Eigen::Index total = 0;

  Layout(std::size_t frames, std::size_t points) : cam_offset(frames, 0), cam_dim(frames, 0) {
    for (std::size_t i = 1; i < frames; ++i) {
      cam_offset[i] = cams;
      cam_dim[i] = i == 1 ? 5 : 6;
      cams += cam_dim[i];
    }
    total = cams + 3 * static_cast<Eigen::Index>(points);
  }
  Eigen::Index point_offset(std::size_t j) const { return cams + 3 * static_cast<Eigen::Index>(j); }
};

/// Orthonormal basis of the plane orthogonal to b.
Eigen::Matrix<double, 3, 2> tangent_basis(const Eigen::Vector3d& b) {
  const Eigen::Vector3d u = b.normalized();
  Eigen::Vector3d a = std::abs(u.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d e1 = (a - a.dot(u) * u).normalized();
  Eigen::Matrix<double, 3, 2> e;
  e.col(0) = e1;
  e.col(1) = u.cross(e1);
  return e;
}

struct Linearization {
  // Per residual camera block (2 x dim) and point block (2 x 3).
  std::vector<Eigen::Matrix<double, 2, 6>> jc;
  std::vector<Eigen::Matrix<double, 2, 3>> jp;
  std::vector<Eigen::Vector2d> r;
};

struct State {
  CameraTrajectory poses;
  std::vector<Eigen::Vector3d> points;
};

Linearization linearize(const BAProblem& prob, const State& s, const Eigen::Matrix<double, 3, 2>& tangent) {
  Linearization lin;
  const std::size_t n = prob.residuals.size();
  lin.jc.resize(n);
  lin.jp.resize(n);
  lin.r.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& res = prob.residuals[k];
    const CameraPose& pose = s.poses[res.frame];
    const Eigen::Vector3d& X = s.points[res.point];
    const Eigen::Matrix3d Rt = pose.R.transpose();
    const Eigen::Vector3d c = Rt * (X - pose.t);
    const double z = clamp_depth(c.z());
    Eigen::Matrix<double, 2, 3> P;
    P << 1.0 / z, 0.0, -c.x() / (z * z), 0.0, 1.0 / z, -c.y() / (z * z);
    lin.r[k] = c.head<2>() / z - res.observed;
    lin.jp[k] = P * Rt;
    lin.jc[k].setZero();
    if (res.frame == 0) continue;
    lin.jc[k].leftCols<3>() = P * skew(c);
    if (res.frame == 1) {
      lin.jc[k].block<2, 2>(0, 3) = -lin.jp[k] * tangent;
    } else {
      lin.jc[k].block<2, 3>(0, 3) = -lin.jp[k];
    }
  }
  return lin;
}

State apply_step(const State& s, const Eigen::VectorXd& delta, const Layout& layout,
                 const Eigen::Matrix<double, 3, 2>& tangent) {
  State out = s;
  for (std::size_t i = 1; i < s.poses.size(); ++i) {
    const auto d = delta.segment(layout.cam_offset[i], layout.cam_dim[i]);
    const Eigen::Vector3d w = d.head<3>();
    const double angle = w.norm();
    if (angle > 0.0) out.poses[i].R = s.poses[i].R * Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
    if (i == 1) {
      const Eigen::Vector3d b = s.poses[1].t - s.poses[0].t;
      const Eigen::Vector3d moved = b + tangent * d.segment<2>(3);
      out.poses[1].t = s.poses[0].t + b.norm() * moved.normalized();
    } else {
      out.poses[i].t = s.poses[i].t + d.segment<3>(3);
    }
  }
  for (std::size_t j = 0; j < s.points.size(); ++j) out.points[j] += delta.segment<3>(layout.point_offset(j));
  return out;
}

double cost_of(const BAProblem& prob, const State& s) {
  double c = 0.0;
  for (const auto& res : prob.residuals) c += residual(s.poses[res.frame], s.points[res.point], res.observed).squaredNorm();
  return c;
}

double state_norm(const State& s) {
  double acc = 0.0;
  for (std::size_t i = 1; i < s.poses.size(); ++i) acc += s.poses[i].t.squaredNorm();
  for (const auto& X : s.points) acc += X.squaredNorm();
  return std::sqrt(acc);
}

double damped(double diag, double lambda) { return diag + lambda * std::max(diag, 1e-12); }

/// Solves the damped system through the Schur complement on point blocks.
bool solve_schur(const BAProblem& prob, const Linearization& lin, const Layout& layout, double lambda,
                 Eigen::VectorXd& delta) {
  const std::size_t np = prob.points.size();
  const Eigen::Index nc = layout.cams;
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(nc, nc);
  Eigen::VectorXd gc = Eigen::VectorXd::Zero(nc);
  std::vector<Eigen::Matrix3d> V(np, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> gp(np, Eigen::Vector3d::Zero());
  std::vector<Eigen::Matrix<double, 6, 3>> W(prob.residuals.size());
  std::vector<std::vector<std::size_t>> by_point(np);

  for (std::size_t k = 0; k < prob.residuals.size(); ++k) {
    const auto& res = prob.residuals[k];
    by_point[res.point].push_back(k);
    V[res.point].noalias() += lin.jp[k].transpose() * lin.jp[k];
    gp[res.point].noalias() += lin.jp[k].transpose() * lin.r[k];
    const Eigen::Index dim = layout.cam_dim[res.frame];
    if (dim == 0) continue;
    const Eigen::Index off = layout.cam_offset[res.frame];
    const auto Jc = lin.jc[k].leftCols(dim);
    U.block(off, off, dim, dim).noalias() += Jc.transpose() * Jc;
    gc.segment(off, dim).noalias() += Jc.transpose() * lin.r[k];
    W[k].setZero();
    W[k].topRows(dim).noalias() = Jc.transpose() * lin.jp[k];
  }
  for (Eigen::Index d = 0; d < nc; ++d) U(d, d) = damped(U(d, d), lambda);

  Eigen::MatrixXd S = U;
  Eigen::VectorXd rhs = -gc;
  std::vector<Eigen::Matrix3d> Vinv(np);
  for (std::size_t j = 0; j < np; ++j) {
    Eigen::Matrix3d Vd = V[j];
    for (int d = 0; d < 3; ++d) Vd(d, d) = damped(Vd(d, d), lambda);
    Eigen::LLT<Eigen::Matrix3d> llt(Vd);
    if (llt.info() != Eigen::Success) return false;
    Vinv[j] = llt.solve(Eigen::Matrix3d::Identity());
    for (std::size_t a : by_point[j]) {
      const std::size_t fa = prob.residuals[a].frame;
      const Eigen::Index da = layout.cam_dim[fa];
      if (da == 0) continue;
      const Eigen::Index oa = layout.cam_offset[fa];
      const Eigen::MatrixXd WaVinv = W[a].topRows(da) * Vinv[j];
      rhs.segment(oa, da).noalias() += WaVinv * gp[j];
      for (std::size_t b : by_point[j]) {
        const std::size_t fb = prob.residuals[b].frame;
        const Eigen::Index db = layout.cam_dim[fb];
        if (db == 0) continue;
        S.block(oa, layout.cam_offset[fb], da, db).noalias() -= WaVinv * W[b].topRows(db).transpose();
      }
    }
  }

  delta.setZero(layout.total);
  if (nc > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) return false;
    delta.head(nc) = llt.solve(rhs);
  }
  for (std::size_t j = 0; j < np; ++j) {
    Eigen::Vector3d b = -gp[j];
    for (std::size_t a : by_point[j]) {
      const std::size_t fa = prob.residuals[a].frame;
      const Eigen::Index da = layout.cam_dim[fa];
      if (da == 0) continue;
      b.noalias() -= W[a].topRows(da).transpose() * delta.segment(layout.cam_offset[fa], da);
    }
    delta.segment<3>(layout.point_offset(j)) = Vinv[j] * b;
  }
  return delta.allFinite();
}

/// Reference path: assemble and factor the full damped system.
bool solve_dense(const BAProblem& prob, const Linearization& lin, const Layout& layout, double lambda,
                 Eigen::VectorXd& delta) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(prob.residuals.size()), layout.total);
  Eigen::VectorXd r(J.rows());
  for (std::size_t k = 0; k < prob.residuals.size(); ++k) {
    const auto& res = prob.residuals[k];
    const auto row = 2 * static_cast<Eigen::Index>(k);
    const Eigen::Index dim = layout.cam_dim[res.frame];
    if (dim > 0) J.block(row, layout.cam_offset[res.frame], 2, dim) = lin.jc[k].leftCols(dim);
    J.block<2, 3>(row, layout.point_offset(res.point)) = lin.jp[k];
    r.segment<2>(row) = lin.r[k];
  }
  Eigen::MatrixXd H = J.transpose() * J;
  for (Eigen::Index d = 0; d < H.rows(); ++d) H(d, d) = damped(H(d, d), lambda);
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) return false;
  delta = llt.solve(-(J.transpose() * r));
  return delta.allFinite();
}

double max_abs_gradient(const BAProblem& prob, const Linearization& lin, const Layout& layout) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.total);
  for (std::size_t k = 0; k < prob.residuals.size(); ++k) {
    const auto& res = prob.residuals[k];
    const Eigen::Index dim = layout.cam_dim[res.frame];
    if (dim > 0) g.segment(layout.cam_offset[res.frame], dim) += lin.jc[k].leftCols(dim).transpose() * lin.r[k];
    g.segment<3>(layout.point_offset(res.point)) += lin.jp[k].transpose() * lin.r[k];
  }
  return g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

double ba_cost(const BAProblem& problem, const CameraTrajectory& poses, const std::vector<Eigen::Vector3d>& points) {
  return cost_of(problem, State{poses, points});
}

double ba_mean_error(const BAProblem& problem, const CameraTrajectory& poses,
                     const std::vector<Eigen::Vector3d>& points) {
  if (problem.residuals.empty()) fail(ErrorKind::kData, "BA: no residuals");
  double acc = 0.0;
  for (const auto& res : problem.residuals) acc += residual(poses[res.frame], points[res.point], res.observed).norm();
  return acc / static_cast<double>(problem.residuals.size());
}

BAResult bundle_adjust(const BAProblem& prob, const BAOptions& opts) {
  if (prob.residuals.empty()) fail(ErrorKind::kData, "BA: problem has no residuals");
  if (prob.poses.size() < 2) fail(ErrorKind::kData, "BA: needs at least 2 frames");
  if ((prob.poses[1].t - prob.poses[0].t).norm() == 0.0) {
    fail(ErrorKind::kDegenerate, "BA: frames 0 and 1 share a camera centre, so the baseline gauge is undefined");
  }
  const Layout layout(prob.poses.size(), prob.points.size());
  State s{prob.poses, prob.points};
  double lambda = opts.lambda0;
  double cost = cost_of(prob, s);

  BAResult out;
  out.cost_trace.push_back(cost);
  bool relinearize = true;
  Linearization lin;
  Eigen::Matrix<double, 3, 2> tangent;
  while (out.iterations < opts.max_iters) {
    if (relinearize) {
      tangent = tangent_basis(s.poses[1].t - s.poses[0].t);
      lin = linearize(prob, s, tangent);
      relinearize = false;
      if (max_abs_gradient(prob, lin, layout) <= opts.tol) {
        out.converged = true;
        break;
      }
    }
    Eigen::VectorXd delta;
    ++out.iterations;
    const bool solved = opts.use_schur ? solve_schur(prob, lin, layout, lambda, delta)
                                       : solve_dense(prob, lin, layout, lambda, delta);
    if (!solved) {
      lambda *= opts.lambda_up;
      if (lambda > kMaxLambda) {
        std::ostringstream os;
        os << "BA: normal equations stay singular after damping reached " << kMaxLambda << "; cost trace:";
        for (double c : out.cost_trace) os << " " << c;
        fail(ErrorKind::kNumerical, os.str());
      }
      continue;
    }
    if (delta.norm() <= opts.tol * (state_norm(s) + opts.tol)) {
      out.converged = true;
      break;
    }
    State trial = apply_step(s, delta, layout, tangent);
    const double trial_cost = cost_of(prob, trial);
    if (trial_cost < cost) {
      const double decrease = cost - trial_cost;
      s = std::move(trial);
      out.cost_trace.push_back(trial_cost);
      lambda = std::max(lambda * opts.lambda_down, 1e-15);
      relinearize = true;
      if (decrease <= opts.tol * cost) {
        cost = trial_cost;
        out.converged = true;
        break;
      }
      cost = trial_cost;
    } else {
      lambda *= opts.lambda_up;
      if (lambda > kMaxLambda) break;  // no descent left at machine precision
    }
  }
  out.poses = std::move(s.poses);
  out.points = std::move(s.points);
  return out;
}

}  // namespace dynsfm
