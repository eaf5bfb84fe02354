#include "dynsfm/geometry.hpp"

#include <string>

namespace dynsfm {

bool is_rotation(const Eigen::Matrix3d& R, double tol) {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

CameraPose look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z);
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitX();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  CameraPose pose;
  pose.R.col(0) = x;
  pose.R.col(1) = y;
  pose.R.col(2) = z;
  pose.t = center;
  return pose;
}

namespace graph_ops {

using ad::Var;

template <typename T>
Var<T> rotation_from_6d(Var<T> v) {
  const auto& shape = v.shape();
  if (shape.size() != 2 || shape[1] != 6) {
    fail(ErrorKind::kShapeMismatch, "rotation_from_6d expects [N, 6], got " + ad::shape_string(shape));
  }
  const std::size_t n = shape[0];
  const auto& vals = v.value();
  for (std::size_t i = 0; i < n; ++i) {
    Vector6d row;
    for (std::size_t k = 0; k < 6; ++k) row[static_cast<Eigen::Index>(k)] = vals[i * 6 + k];
    try {
      (void)dynsfm::rotation_from_6d<double>(row);
    } catch (const Error& e) {
      fail(ErrorKind::kDegenerate, std::string(e.what()) + " (frame " + std::to_string(i) + ")");
    }
  }

  auto a1 = ad::slice(v, 1, 0, 3);
  auto a2 = ad::slice(v, 1, 3, 6);
  auto b1 = a1 / ad::sqrt(ad::sum(ad::square(a1), 1, true));
  auto u2 = a2 - ad::sum(b1 * a2, 1, true) * b1;
  auto b2 = u2 / ad::sqrt(ad::sum(ad::square(u2), 1, true));
  auto b3 = ad::gather(b1, 1, {1, 2, 0}) * ad::gather(b2, 1, {2, 0, 1}) -
            ad::gather(b1, 1, {2, 0, 1}) * ad::gather(b2, 1, {1, 2, 0});
  // Stack as [N, column, row] then swap to row-major [N, row, column].
  auto cols = ad::concat<T>({ad::reshape(b1, {n, 1, 3}), ad::reshape(b2, {n, 1, 3}), ad::reshape(b3, {n, 1, 3})}, 1);
  return ad::permute(cols, {0, 2, 1});
}

template <typename T>
Var<T> camera_points(Var<T> X, Var<T> R, Var<T> t) {
  const auto& xs = X.shape();
  if (xs.size() != 3 || xs[2] != 3) {
    fail(ErrorKind::kShapeMismatch, "camera_points expects X as [N, P, 3], got " + ad::shape_string(xs));
  }
  const std::size_t n = xs[0];
  auto d = X - ad::reshape(t, {n, 1, 3});
  // Row vector d times R equals (R^T d)^T.
  return ad::matmul(d, R);
}

template <typename T>
Var<T> project(Var<T> cam) {
  auto xy = ad::slice(cam, 2, 0, 2);
  auto depth = ad::slice(cam, 2, 2, 3);
  ad::Tensor<T> sign(depth.shape());
  const auto& dv = depth.value();
  for (std::size_t i = 0; i < sign.size(); ++i) sign[i] = dv[i] < T(0) ? T(-1) : T(1);
  auto sg = cam.graph()->constant(std::move(sign));
  auto safe = sg * ad::maximum(sg * depth, kMinDepth);
  return xy / safe;
}

template <typename T>
Var<T> squared_residual(Var<T> projected, Var<T> observed) {
  return ad::sum(ad::square(projected - observed), 2);
}

template <typename T>
Var<T> safe_sqrt(Var<T> squared) {
  return ad::sqrt(ad::add_scalar(squared, 1e-18));
}

#define DYNSFM_GEOM_INSTANTIATE(T)                        \
  template Var<T> rotation_from_6d(Var<T>);               \
  template Var<T> camera_points(Var<T>, Var<T>, Var<T>);  \
  template Var<T> project(Var<T>);                        \
  template Var<T> squared_residual(Var<T>, Var<T>);       \
  template Var<T> safe_sqrt(Var<T>);

DYNSFM_GEOM_INSTANTIATE(float)
DYNSFM_GEOM_INSTANTIATE(double)

}  // namespace graph_ops
}  // namespace dynsfm
