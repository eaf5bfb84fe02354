#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

#include "dynsfm/autodiff/graph.hpp"
#include "dynsfm/error.hpp"

namespace dynsfm {

/// Camera orientation R maps camera axes into world axes; t is the camera
/// center in world units. A world point X has camera coordinates R^T (X - t).
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

using CameraTrajectory = std::vector<CameraPose>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

inline constexpr double kMinRotationNorm = 1e-8;
inline constexpr double kMinRotationAngle = 1e-6;
inline constexpr double kMinDepth = 1e-8;

/// Gram-Schmidt map from two 3-vectors to a rotation whose columns are
/// b1 = a1/|a1|, b2 = normalized(a2 - (b1.a2) b1), b3 = b1 x b2. Templated so
/// the same code runs under forward-mode autodiff scalars.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotation_from_6d(const Eigen::Matrix<Scalar, 6, 1>& v) {
  using std::sqrt;
  const Eigen::Matrix<Scalar, 3, 1> a1 = v.template head<3>();
  const Eigen::Matrix<Scalar, 3, 1> a2 = v.template tail<3>();
  const Scalar n1 = sqrt(a1.squaredNorm());
  if (!(n1 > Scalar(kMinRotationNorm))) {
    fail(ErrorKind::kDegenerate, "6-d rotation: first vector has near-zero norm");
  }
  const Eigen::Matrix<Scalar, 3, 1> b1 = a1 / n1;
  const Eigen::Matrix<Scalar, 3, 1> u2 = a2 - b1.dot(a2) * b1;
  const Scalar n2 = sqrt(u2.squaredNorm());
  const Scalar na2 = sqrt(a2.squaredNorm());
  // |u2| = |a2| sin(angle between a1 and a2).
  if (!(n2 > Scalar(kMinRotationAngle) * na2) || !(na2 > Scalar(kMinRotationNorm))) {
    fail(ErrorKind::kDegenerate, "6-d rotation: vectors are near-parallel or second vector is zero");
  }
  const Eigen::Matrix<Scalar, 3, 1> b2 = u2 / n2;
  const Eigen::Matrix<Scalar, 3, 1> b3 = b1.cross(b2);
  Eigen::Matrix<Scalar, 3, 3> R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b3;
  return R;
}

/// The 6-d parameters that reproduce R exactly (its first two columns).
inline Vector6d rotation_to_6d(const Eigen::Matrix3d& R) {
  Vector6d v;
  v << R.col(0), R.col(1);
  return v;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> camera_point(const Eigen::Matrix<Scalar, 3, 1>& X,
                                         const Eigen::Matrix<Scalar, 3, 3>& R,
                                         const Eigen::Matrix<Scalar, 3, 1>& t) {
  return R.transpose() * (X - t);
}

inline Eigen::Vector3d camera_point(const Eigen::Vector3d& X, const CameraPose& pose) {
  return camera_point<double>(X, pose.R, pose.t);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> project(const Eigen::Matrix<Scalar, 3, 1>& X, const Eigen::Matrix<Scalar, 3, 3>& R,
                                    const Eigen::Matrix<Scalar, 3, 1>& t) {
  using std::abs;
  const Eigen::Matrix<Scalar, 3, 1> c = camera_point<Scalar>(X, R, t);
  if (!(abs(c.z()) >= Scalar(kMinDepth))) {
    fail(ErrorKind::kDegenerate, "projection undefined: |depth| below 1e-8");
  }
  return Eigen::Matrix<Scalar, 2, 1>(c.x() / c.z(), c.y() / c.z());
}

inline Eigen::Vector2d project(const Eigen::Vector3d& X, const CameraPose& pose) {
  return project<double>(X, pose.R, pose.t);
}

inline double reprojection_error(const Eigen::Vector3d& X, const CameraPose& pose, const Eigen::Vector2d& m) {
  return (project(X, pose) - m).norm();
}

bool is_rotation(const Eigen::Matrix3d& R, double tol = 1e-6);

/// Orientation whose optical (+z) axis points from `center` to `target`, with
/// camera +x horizontal in the world x-z plane.
CameraPose look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target);

/// Graph-level, batched versions used by the losses and the network heads.
namespace graph_ops {

/// v: [N, 6] -> [N, 3, 3]. Throws kDegenerate when any row is degenerate.
template <typename T>
ad::Var<T> rotation_from_6d(ad::Var<T> v);

/// X: [N, P, 3], R: [N, 3, 3], t: [N, 3] -> [N, P, 3] camera coordinates.
template <typename T>
ad::Var<T> camera_points(ad::Var<T> X, ad::Var<T> R, ad::Var<T> t);

/// cam: [N, P, 3] -> [N, P, 2]. Depth magnitude is clamped to 1e-8 with its
/// sign preserved so that gradients stay finite.
template <typename T>
ad::Var<T> project(ad::Var<T> cam);

/// Squared image-plane distance, [N, P, 2] x [N, P, 2] -> [N, P].
template <typename T>
ad::Var<T> squared_residual(ad::Var<T> projected, ad::Var<T> observed);

/// sqrt(x + 1e-18): the Euclidean norm with a finite gradient at zero.
template <typename T>
ad::Var<T> safe_sqrt(ad::Var<T> squared);

}  // namespace graph_ops

}  // namespace dynsfm
