#pragma once

#include "dynsfm/autodiff/graph.hpp"
#include "dynsfm/network.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {

struct LossWeights {
  double reproject = 50.0;
  double static_term = 1.0;
  double negative = 1.0;
  double sparse = 0.001;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossOptions {
  /// Stop-gradients of the training recipe: B_1 and the poses inside the
  /// reprojection loss, gamma inside the sparsity loss. Disabled only for
  /// finite-difference checks of the undetached objective.
  bool detach = true;
  /// When false, the static term is a plain mean reprojection error of B_1
  /// and the sparsity weights use gamma = 1.
  bool use_gamma = true;
};

struct LossBreakdown {
  double total = 0.0;
  double reproject = 0.0;
  double static_term = 0.0;
  double negative = 0.0;
  double sparse = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

/// Observation constants of one track tensor inside a graph.
template <typename T>
struct Observations {
  ad::Var<T> mask;  // [N, P] of 0/1
  ad::Var<T> xy;    // [N, P, 2], zero where unobserved
  double count = 0.0;
};

template <typename T>
Observations<T> make_observations(ad::Graph<T>& graph, const PointTrackTensor& tracks);

/// Mean over observed entries of |project(X_ij; R_i, t_i) - m_ij|.
/// clouds: [N, P, 3]; rotations: [N, 3, 3]; centers: [N, 3].
template <typename T>
ad::Var<T> reprojection_loss(ad::Var<T> clouds, ad::Var<T> rotations, ad::Var<T> centers,
                             const Observations<T>& obs);

/// log(gamma + r^2 / gamma), elementwise on r^2 (broadcast against gamma).
template <typename T>
ad::Var<T> cauchy_nll(ad::Var<T> r_squared, ad::Var<T> gamma);

/// Scalar form; throws kInvalidArgument when gamma is below the floor.
double cauchy_nll(double r, double gamma, double gamma_floor = 1e-4);

/// Mean Cauchy negative log-likelihood of the static cloud B_1 ([P, 3]) with
/// per-point scale gamma ([P]).
template <typename T>
ad::Var<T> static_loss(ad::Var<T> b1, ad::Var<T> gamma, ad::Var<T> rotations, ad::Var<T> centers,
                       const Observations<T>& obs);

/// Mean plain reprojection error of B_1 (the "no gamma" ablation).
template <typename T>
ad::Var<T> static_loss_without_gamma(ad::Var<T> b1, ad::Var<T> rotations, ad::Var<T> centers,
                                     const Observations<T>& obs);

/// -sum over observed entries of min(depth_ij, 0); not normalized.
template <typename T>
ad::Var<T> negative_depth_loss(ad::Var<T> clouds, ad::Var<T> rotations, ad::Var<T> centers,
                               const Observations<T>& obs);

/// (1 / (P (K-1))) sum_{k>=2} sum_j |B_kj|_1 / (3 gamma_j). bases: [K, P, 3].
template <typename T>
ad::Var<T> sparsity_loss(ad::Var<T> bases, ad::Var<T> gamma, bool detach_gamma = true);

/// (1/N) sum_i |t_i - (0, 0, -15)|^2 / 100 + |R_i - I|_F^2.
template <typename T>
ad::Var<T> pretrain_loss(ad::Var<T> rotations, ad::Var<T> centers);

template <typename T>
struct LossTerms {
  ad::Var<T> total;
  ad::Var<T> reproject;
  ad::Var<T> static_term;
  ad::Var<T> negative;
  ad::Var<T> sparse;

  LossBreakdown values() const;
};

/// Weighted training objective over the network outputs.
template <typename T>
LossTerms<T> total_loss(const NetworkGraph<T>& net, const Observations<T>& obs, const LossWeights& weights,
                        const LossOptions& options = {});

}  // namespace dynsfm
