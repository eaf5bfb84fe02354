#pragma once

// Ground-truth synthetic structure laid out as graph tensors.

#include "dynsfm/autodiff/tensor.hpp"
#include "dynsfm/synthetic.hpp"

namespace dynsfm::testing {

struct SceneTensors {
  ad::Tensor<double> clouds;     // [N, P, 3]
  ad::Tensor<double> rotations;  // [N, 3, 3]
  ad::Tensor<double> centers;    // [N, 3]
  ad::Tensor<double> bases;      // [K, P, 3]
  ad::Tensor<double> coeffs;     // [N, K-1]
};

inline SceneTensors scene_tensors(const SyntheticScene& scene) {
  const std::size_t n = scene.frames();
  const std::size_t p = scene.points();
  const std::size_t k = scene.bases.size();
  SceneTensors s{ad::Tensor<double>({n, p, 3}), ad::Tensor<double>({n, 3, 3}), ad::Tensor<double>({n, 3}),
                 ad::Tensor<double>({k, p, 3}), ad::Tensor<double>({n, k - 1})};
  for (std::size_t i = 0; i < n; ++i) {
    const auto cloud = scene.cloud(i);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t c = 0; c < 3; ++c) s.clouds.at({i, j, c}) = cloud(j, c);
    }
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) s.rotations.at({i, r, c}) = scene.poses[i].R(r, c);
      s.centers.at({i, r}) = scene.poses[i].t(r);
    }
    for (std::size_t b = 0; b + 1 < k; ++b) s.coeffs.at({i, b}) = scene.coeffs(i, b);
  }
  for (std::size_t b = 0; b < k; ++b) {
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t c = 0; c < 3; ++c) s.bases.at({b, j, c}) = scene.bases[b](j, c);
    }
  }
  return s;
}

}  // namespace dynsfm::testing
