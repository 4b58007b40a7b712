#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pavad/losses.hpp"

namespace pavad::ad {

struct GradSuiteConfig {
  std::size_t configurations = 20;
  std::size_t input_dim = 8;
  std::size_t model_dim = 8;
  std::size_t heads = 2;
  std::size_t slots = 4;
  std::size_t rows = 6;
  std::size_t videos = 2;  // per stream
  std::uint64_t seed = 0;
  double h = 1e-5;
  loss::LossWeights weights;
};

struct TermResult {
  std::string term;  // mil_rank, mil_cls, da, upd, total
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
};

struct GradSuiteResult {
  std::vector<TermResult> terms;
  std::size_t configurations = 0;
  double max_rel_error() const;
};

// Central-difference check of every loss term and the composite against all
// model parameters over random configurations. The composite is checked with
// the gradient reversal disabled and the usage targets frozen, since finite
// differences only see the forward pass.
GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg);

}  // namespace pavad::ad
