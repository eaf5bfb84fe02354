#pragma once

// Loss-level fixtures shared by the unit tests and the acceptance suite.

#include <cmath>
#include <random>

#include "dynsfm/losses.hpp"
#include "dynsfm/synthetic.hpp"
#include "gradient_cases.hpp"
#include "scene_tensors.hpp"

namespace dynsfm::testing {

inline SyntheticOutput small_scene(std::uint64_t seed, std::size_t n = 6, std::size_t p = 8, double occlusion = 0.0) {
  SynthConfig cfg;
  cfg.frames = n;
  cfg.points = p;
  cfg.occlusion_rate = occlusion;
  return generate_synthetic_scene(cfg, seed);
}

/// A NetworkGraph whose outputs are leaves, perturbed away from ground truth.
struct LeafOutputs {
  NetworkGraph<double> net;
  ad::Var<double> bases, coeffs, gamma, rotations, centers;
};

inline LeafOutputs leaf_outputs(ad::Graph<double>& g, const SyntheticScene& scene, std::mt19937_64& rng, double noise) {
  auto s = scene_tensors(scene);
  auto jitter = [&](ad::Tensor<double> t) {
    auto d = random_tensor(t.shape(), rng, -noise, noise);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += d[i];
    return t;
  };
  LeafOutputs o;
  const std::size_t k = s.bases.dim(0);
  const std::size_t p = s.bases.dim(1);
  // Keep deviation bases away from the |.| kink.
  auto bases = jitter(s.bases);
  for (std::size_t i = p * 3; i < bases.size(); ++i) {
    if (std::abs(bases[i]) < 0.05) bases[i] = bases[i] < 0 ? -0.05 - noise : 0.05 + noise;
  }
  o.bases = g.leaf(bases, "bases");
  o.coeffs = g.leaf(jitter(s.coeffs), "coeffs");
  o.gamma = g.leaf(random_tensor({p}, rng, 0.05, 0.5), "gamma");
  o.rotations = g.leaf(jitter(s.rotations), "rotations");
  o.centers = g.leaf(jitter(s.centers), "centers");
  o.net.bases = o.bases;
  o.net.coeffs = o.coeffs;
  o.net.gamma = o.gamma;
  o.net.rotations = o.rotations;
  o.net.centers = o.centers;
  auto b1 = ad::reshape(ad::slice(o.bases, 0, 0, 1), {p, 3});
  o.net.clouds = assemble_clouds(b1, ad::slice(o.bases, 0, 1, k), o.coeffs);
  return o;
}

inline bool all_zero(const ad::Tensor<double>& t) {
  for (auto v : t.data()) {
    if (v != 0.0) return false;
  }
  return true;
}

}  // namespace dynsfm::testing
