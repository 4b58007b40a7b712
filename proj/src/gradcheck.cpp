#include "pavad/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pavad::ad {
namespace {

double forward_value(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.leaf(t, false));
  return build(g, vars).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                                const std::vector<bool>& check, double h) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
    Var loss = build(g, vars);
    g.backward(loss);
    for (const Var& v : vars) analytic.push_back(g.grad(v));
  }

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t in = 0; in < inputs.size(); ++in) {
    if (!check.empty() && !check[in]) continue;
    LeafCheck leaf;
    leaf.input = in;
    for (std::size_t i = 0; i < inputs[in].numel(); ++i) {
      const double x0 = inputs[in][i];
      probe[in][i] = x0 + h;
      const double fp = forward_value(build, probe);
      probe[in][i] = x0 - h;
      const double fm = forward_value(build, probe);
      probe[in][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[in][i], numeric);
      ++report.n_checked;
      if (i == 0 || err > leaf.max_rel_error) {
        leaf.max_rel_error = err;
        leaf.worst_index = i;
        leaf.analytic = analytic[in][i];
        leaf.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, leaf.max_rel_error);
    report.leaves.push_back(leaf);
  }
  return report;
}

}  // namespace pavad::ad
