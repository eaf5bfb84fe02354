#include "dynsfm/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dynsfm::ad {

GradCheckReport check_gradients(Graph<double>& graph, Var<double> root, double epsilon) {
  GradCheckReport report;
  const GradientMap<double> grads = graph.gradients(root);
  // Central differences carry round-off of order 1e-16 |f| / eps, so the
  // denominator never drops below a small multiple of the root's magnitude.
  const double floor = 1e-6 * std::max(1.0, std::abs(root.value().item()));
  for (Var<double> leaf : graph.leaves()) {
    if (leaf.id() > root.id()) continue;
    const Tensor<double> original = leaf.value();
    const Tensor<double>& analytic = grads[leaf];
    Tensor<double> probe = original;
    for (std::size_t i = 0; i < original.size(); ++i) {
      probe[i] = original[i] + epsilon;
      const double up = graph.evaluate({{leaf, probe}}, root).item();
      probe[i] = original[i] - epsilon;
      const double down = graph.evaluate({{leaf, probe}}, root).item();
      probe[i] = original[i];

      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_leaf = graph.node(leaf.id()).name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    graph.evaluate({{leaf, original}}, root);
  }
  return report;
}

}  // namespace dynsfm::ad
