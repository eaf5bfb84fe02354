#include "dynsfm/losses.hpp"

#include <cmath>

#include "dynsfm/error.hpp"
#include "dynsfm/geometry.hpp"

namespace dynsfm {

using ad::Graph;
using ad::Tensor;
using ad::Var;

void LossWeights::validate() const {
  if (reproject < 0.0 || static_term < 0.0 || negative < 0.0 || sparse < 0.0) {
    fail(ErrorKind::kConfig, "loss weights must be non-negative");
  }
}

template <typename T>
Observations<T> make_observations(Graph<T>& graph, const PointTrackTensor& tracks) {
  const std::size_t n = tracks.frames;
  const std::size_t p = tracks.points;
  Tensor<T> mask({n, p});
  Tensor<T> xy({n, p, 2});
  double count = 0.0;
  for (std::size_t k = 0; k < n * p; ++k) {
    if (!tracks.observed[k]) continue;
    mask[k] = T(1);
    xy[2 * k] = static_cast<T>(tracks.xy[2 * k]);
    xy[2 * k + 1] = static_cast<T>(tracks.xy[2 * k + 1]);
    count += 1.0;
  }
  return {graph.constant(std::move(mask)), graph.constant(std::move(xy)), count};
}

namespace {

template <typename T>
void require_observations(const Observations<T>& obs, const char* loss) {
  if (obs.count <= 0.0) fail(ErrorKind::kData, std::string(loss) + ": no observed entries");
}

/// Squared residuals [N, P] of a cloud ([N, P, 3] or [P, 3]) against the tracks.
template <typename T>
Var<T> residual_squared(Var<T> cloud, Var<T> rotations, Var<T> centers, const Observations<T>& obs) {
  const auto& ms = obs.mask.shape();
  if (cloud.shape().size() == 2) cloud = ad::broadcast_to(cloud, {ms[0], ms[1], 3});
  auto cam = graph_ops::camera_points(cloud, rotations, centers);
  return graph_ops::squared_residual(graph_ops::project(cam), obs.xy);
}

template <typename T>
Var<T> masked_mean(Var<T> values, const Observations<T>& obs) {
  return ad::scale(ad::sum_all(values * obs.mask), 1.0 / obs.count);
}

}  // namespace

template <typename T>
Var<T> reprojection_loss(Var<T> clouds, Var<T> rotations, Var<T> centers, const Observations<T>& obs) {
  require_observations(obs, "reprojection loss");
  return masked_mean(graph_ops::safe_sqrt(residual_squared(clouds, rotations, centers, obs)), obs);
}

template <typename T>
Var<T> cauchy_nll(Var<T> r_squared, Var<T> gamma) {
  return ad::log(gamma + r_squared / gamma);
}

double cauchy_nll(double r, double gamma, double gamma_floor) {
  if (!(gamma >= gamma_floor)) {
    fail(ErrorKind::kInvalidArgument, "cauchy_nll: gamma below floor " + std::to_string(gamma_floor));
  }
  return std::log(gamma + r * r / gamma);
}

template <typename T>
Var<T> static_loss(Var<T> b1, Var<T> gamma, Var<T> rotations, Var<T> centers, const Observations<T>& obs) {
  require_observations(obs, "static loss");
  auto r2 = residual_squared(b1, rotations, centers, obs);
  return masked_mean(cauchy_nll(r2, gamma), obs);
}

template <typename T>
Var<T> static_loss_without_gamma(Var<T> b1, Var<T> rotations, Var<T> centers, const Observations<T>& obs) {
  require_observations(obs, "static loss");
  return masked_mean(graph_ops::safe_sqrt(residual_squared(b1, rotations, centers, obs)), obs);
}

template <typename T>
Var<T> negative_depth_loss(Var<T> clouds, Var<T> rotations, Var<T> centers, const Observations<T>& obs) {
  auto cam = graph_ops::camera_points(clouds, rotations, centers);
  auto depth = ad::reshape(ad::slice(cam, 2, 2, 3), obs.mask.shape());
  return ad::neg(ad::sum_all(ad::minimum(depth, 0.0) * obs.mask));
}

template <typename T>
Var<T> sparsity_loss(Var<T> bases, Var<T> gamma, bool detach_gamma) {
  const auto& s = bases.shape();
  const std::size_t k = s.at(0);
  const std::size_t p = s.at(1);
  if (k < 2) fail(ErrorKind::kInvalidArgument, "sparsity loss needs K >= 2");
  auto g = detach_gamma ? ad::stop_gradient(gamma) : gamma;
  auto inv = ad::reshape(g.graph()->constant_scalar(T(1)) / ad::scale(g, 3.0), {1, p, 1});
  auto deviations = ad::abs(ad::slice(bases, 0, 1, k));
  return ad::scale(ad::sum_all(deviations * inv), 1.0 / static_cast<double>(p * (k - 1)));
}

template <typename T>
Var<T> pretrain_loss(Var<T> rotations, Var<T> centers) {
  Graph<T>& g = *rotations.graph();
  const std::size_t n = rotations.shape().at(0);
  Tensor<T> eye({3, 3});
  eye[0] = eye[4] = eye[8] = T(1);
  Tensor<T> target = Tensor<T>::vector({T(0), T(0), T(-15)});
  auto trans = ad::scale(ad::sum_all(ad::square(centers - g.constant(target))), 1.0 / 100.0);
  auto rot = ad::sum_all(ad::square(rotations - g.constant(eye)));
  return ad::scale(trans + rot, 1.0 / static_cast<double>(n));
}

template <typename T>
LossBreakdown LossTerms<T>::values() const {
  return {total.value().item(), reproject.value().item(), static_term.value().item(), negative.value().item(),
          sparse.value().item()};
}

template <typename T>
LossTerms<T> total_loss(const NetworkGraph<T>& net, const Observations<T>& obs, const LossWeights& weights,
                        const LossOptions& options) {
  weights.validate();
  const std::size_t k = net.bases.shape().at(0);
  const std::size_t p = net.bases.shape().at(1);
  auto b1 = ad::reshape(ad::slice(net.bases, 0, 0, 1), {p, 3});
  auto deviations = ad::slice(net.bases, 0, 1, k);

  LossTerms<T> terms;
  {
    auto b1_r = options.detach ? ad::stop_gradient(b1) : b1;
    auto rot_r = options.detach ? ad::stop_gradient(net.rotations) : net.rotations;
    auto ctr_r = options.detach ? ad::stop_gradient(net.centers) : net.centers;
    auto clouds_r = assemble_clouds(b1_r, deviations, net.coeffs);
    terms.reproject = reprojection_loss(clouds_r, rot_r, ctr_r, obs);
  }
  if (options.use_gamma) {
    terms.static_term = static_loss(b1, net.gamma, net.rotations, net.centers, obs);
  } else {
    terms.static_term = static_loss_without_gamma(b1, net.rotations, net.centers, obs);
  }
  terms.negative = negative_depth_loss(net.clouds, net.rotations, net.centers, obs);
  if (options.use_gamma) {
    terms.sparse = sparsity_loss(net.bases, net.gamma, options.detach);
  } else {
    auto ones = net.bases.graph()->constant(Tensor<T>({p}, T(1)));
    terms.sparse = sparsity_loss(net.bases, ones, true);
  }
  terms.total = ad::scale(terms.reproject, weights.reproject) + ad::scale(terms.static_term, weights.static_term) +
                ad::scale(terms.negative, weights.negative) + ad::scale(terms.sparse, weights.sparse);
  return terms;
}

#define DYNSFM_LOSS_INSTANTIATE(T)                                                                    \
  template Observations<T> make_observations(Graph<T>&, const PointTrackTensor&);                     \
  template Var<T> reprojection_loss(Var<T>, Var<T>, Var<T>, const Observations<T>&);                  \
  template Var<T> cauchy_nll(Var<T>, Var<T>);                                                         \
  template Var<T> static_loss(Var<T>, Var<T>, Var<T>, Var<T>, const Observations<T>&);                \
  template Var<T> static_loss_without_gamma(Var<T>, Var<T>, Var<T>, const Observations<T>&);          \
  template Var<T> negative_depth_loss(Var<T>, Var<T>, Var<T>, const Observations<T>&);                \
  template Var<T> sparsity_loss(Var<T>, Var<T>, bool);                                                \
  template Var<T> pretrain_loss(Var<T>, Var<T>);                                                      \
  template struct LossTerms<T>;                                                                       \
  template LossTerms<T> total_loss(const NetworkGraph<T>&, const Observations<T>&, const LossWeights&, \
                                   const LossOptions&);

DYNSFM_LOSS_INSTANTIATE(float)
DYNSFM_LOSS_INSTANTIATE(double)

}  // namespace dynsfm
