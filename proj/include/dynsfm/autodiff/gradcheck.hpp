#pragma once

#include <cstddef>
#include <string>

#include "dynsfm/autodiff/graph.hpp"

namespace dynsfm::ad {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `root` against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every element of every leaf. Relative
/// error uses the denominator max(|analytic|, |numeric|, 1e-6 max(1, |f|)).
/// Leaf values are restored before returning.
GradCheckReport check_gradients(Graph<double>& graph, Var<double> root, double epsilon = 1e-5);

}  // namespace dynsfm::ad
