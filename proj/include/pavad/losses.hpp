#pragma once

#include <optional>
#include <vector>

#include "pavad/autodiff.hpp"
#include "pavad/model.hpp"

namespace pavad::loss {

using ad::Tensor;
using ad::Var;

struct LossWeights {
  double lambda1 = 1.0;       // domain alignment
  double lambda2 = 0.1;       // usage-aware slot update
  double lambda_da = 0.2;     // gradient reversal strength
  double lambda_dist = 0.01;  // real/pseudo normal mean distance
  double beta = 1.0;          // usage exponent
  double epsilon = 1e-6;      // usage guard
  std::size_t topk = 1;       // MIL top-k (clamped to the sequence length)

  void validate() const;
};

struct LossBreakdown {
  double mil_rank = 0.0;
  double mil_cls = 0.0;
  double da = 0.0;
  double upd = 0.0;
  double total = 0.0;
};

// max(0, 1 - max(abnormal) + max(normal)).
Var mil_rank_loss(Var abnormal_scores, Var normal_scores);
// BCE(topk_mean(scores, k), label).
Var mil_cls_loss(Var scores, int label, std::size_t k);

// Domain labels: real normal = 0, pseudo normal = 1. The gradient reversal sits
// between the pooled features and the discriminator; the distance term is not
// reversed. reverse_gradients=false drops the reversal (finite-difference checks).
Var domain_alignment_loss(Var real_normal_mean, Var pseudo_normal_mean, const model::DiscriminatorVars& disc,
                          const LossWeights& w, bool reverse_gradients = true);

// Responsibility-weighted slot centres and slot usage, both held constant in
// the slot update loss.
struct UsageTargets {
  Tensor centers;  // K x d
  Tensor usage;    // K
};

UsageTargets usage_targets(const Tensor& q, const Tensor& z);
// (1/K) sum_k (mean(u) / (u_k + eps))^beta * ||m_k - mu_k||^2.
Var usage_update_loss(Var slots, const UsageTargets& targets, const LossWeights& w);
std::vector<double> usage_weights(const Tensor& usage, const LossWeights& w);

// Forward outputs for one batch of the three training streams.
struct BatchForward {
  std::vector<Var> abnormal_scores;      // pseudo-abnormal videos, T x 1 each
  std::vector<Var> normal_scores;        // real-normal videos
  std::vector<Var> abnormal_embeddings;  // pseudo-abnormal encoder outputs, T x d each
  std::optional<Var> real_normal_mean;   // 1 x d, mean over all real-normal rows
  std::optional<Var> pseudo_normal_mean; // 1 x d, absent when the batch has no pseudo-normal stream
};

struct LossOptions {
  bool reverse_gradients = true;
  // Use these targets instead of computing them from the current values.
  const UsageTargets* frozen_targets = nullptr;
};

struct TotalLoss {
  Var total;
  LossBreakdown parts;
  bool da_skipped = false;
  UsageTargets targets;
};

// total = (mil_rank + mil_cls) + lambda1 * da + lambda2 * upd.
TotalLoss total_loss(const model::ModelVars& vars, const BatchForward& batch, const LossWeights& w, double tau,
                     const LossOptions& opts = {});

}  // namespace pavad::loss
