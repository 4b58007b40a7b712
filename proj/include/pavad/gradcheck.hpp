#pragma once

#include <functional>
#include <span>
#include <vector>

#include "pavad/autodiff.hpp"

// Central finite-difference oracle. It only ever runs forward passes, so it is
// independent of every backward rule it is used to check.
namespace pavad::ad {

using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct LeafCheck {
  std::size_t input = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<LeafCheck> leaves;
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
// on both sides from dividing by zero.
inline constexpr double kRelErrorFloor = 1e-6;
double relative_error(double analytic, double numeric);

// Builds the graph from `inputs` (as requires_grad leaves), runs backward and
// compares every element selected by `check` against (f(x+h) - f(x-h)) / 2h.
// An empty `check` means every input is checked.
GradCheckReport check_gradients(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                                const std::vector<bool>& check = {}, double h = 1e-5);

}  // namespace pavad::ad
