#include "pavad/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pavad::loss {

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda_da < 0 || lambda_dist < 0 || beta < 0)
    throw std::invalid_argument("loss weights must be >= 0");
  if (!(epsilon > 0)) throw std::invalid_argument("usage epsilon must be > 0");
  if (topk < 1) throw std::invalid_argument("topk must be >= 1");
}

Var mil_rank_loss(Var abnormal_scores, Var normal_scores) {
  if (abnormal_scores.value().numel() == 0 || normal_scores.value().numel() == 0)
    throw std::invalid_argument("mil_rank_loss: empty bag");
  Var max_abn = ad::topk_mean(abnormal_scores, 1);
  Var max_norm = ad::topk_mean(normal_scores, 1);
  return ad::hinge(ad::add_scalar(ad::sub(max_norm, max_abn), 1.0));
}

Var mil_cls_loss(Var scores, int label, std::size_t k) {
  if (label != 0 && label != 1) throw std::invalid_argument("mil_cls_loss: label must be 0 or 1");
  return ad::bce(ad::topk_mean(scores, k), Tensor::scalar(static_cast<double>(label)));
}

Var domain_alignment_loss(Var real_normal_mean, Var pseudo_normal_mean, const model::DiscriminatorVars& disc,
                          const LossWeights& w, bool reverse_gradients) {
  auto through_grl = [&](Var f) { return reverse_gradients ? ad::grad_reverse(f, w.lambda_da) : f; };
  Var p_real = model::discriminate(through_grl(real_normal_mean), disc);
  Var p_pseudo = model::discriminate(through_grl(pseudo_normal_mean), disc);
  Var adv = ad::add(ad::bce(p_real, Tensor::scalar(0.0)), ad::bce(p_pseudo, Tensor::scalar(1.0)));
  Var dist = ad::squared_l2_norm(ad::sub(real_normal_mean, pseudo_normal_mean));
  return ad::add(adv, ad::scale(dist, w.lambda_dist));
}

UsageTargets usage_targets(const Tensor& q, const Tensor& z) {
  if (q.rank() != 2 || z.rank() != 2 || q.rows() != z.rows())
    throw ad::ShapeError("usage_targets: Q and Z must have the same number of rows");
  const std::size_t n = q.rows(), k = q.cols(), d = z.cols();
  UsageTargets t{Tensor({k, d}), Tensor({k})};
  for (std::size_t j = 0; j < k; ++j) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mass += q.at(i, j);
      for (std::size_t c = 0; c < d; ++c) t.centers.at(j, c) += q.at(i, j) * z.at(i, c);
    }
    if (mass > 0)
      for (std::size_t c = 0; c < d; ++c) t.centers.at(j, c) /= mass;
    t.usage[j] = mass / static_cast<double>(n);
  }
  return t;
}

std::vector<double> usage_weights(const Tensor& usage, const LossWeights& w) {
  const std::size_t k = usage.numel();
  double mean = 0.0;
  for (double u : usage.data()) mean += u;
  mean /= static_cast<double>(k);
  std::vector<double> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = std::pow(mean / (usage[j] + w.epsilon), w.beta);
  return out;
}

Var usage_update_loss(Var slots, const UsageTargets& targets, const LossWeights& w) {
  const Tensor& m = slots.value();
  if (targets.centers.shape() != m.shape()) throw ad::ShapeError("usage_update_loss: centers do not match slots");
  const std::size_t k = m.rows(), d = m.cols();
  const auto weights = usage_weights(targets.usage, w);
  Tensor wide({k, d});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t c = 0; c < d; ++c) wide.at(j, c) = weights[j];
  ad::Graph& g = *slots.graph;
  Var diff = ad::sub(slots, g.constant(targets.centers));
  Var weighted = ad::mul(ad::mul(diff, diff), g.constant(wide));
  return ad::scale(ad::sum(weighted), 1.0 / static_cast<double>(k));
}

TotalLoss total_loss(const model::ModelVars& vars, const BatchForward& batch, const LossWeights& w, double tau,
                     const LossOptions& opts) {
  w.validate();
  if (batch.abnormal_scores.empty() || batch.normal_scores.empty())
    throw std::invalid_argument("total_loss: batch needs at least one abnormal and one normal video");
  if (batch.abnormal_embeddings.size() != batch.abnormal_scores.size())
    throw std::invalid_argument("total_loss: abnormal embeddings missing");
  TotalLoss out;

  // Discrimination term: paired ranking hinge + top-k BCE over both streams.
  const std::size_t pairs = std::min(batch.abnormal_scores.size(), batch.normal_scores.size());
  std::vector<Var> ranks;
  for (std::size_t i = 0; i < pairs; ++i)
    ranks.push_back(ad::reshape(mil_rank_loss(batch.abnormal_scores[i], batch.normal_scores[i]), {1, 1}));
  Var rank = ad::scale(ad::sum(ad::concat_rows(ranks)), 1.0 / static_cast<double>(pairs));

  std::vector<Var> cls;
  for (Var s : batch.abnormal_scores)
    cls.push_back(ad::reshape(mil_cls_loss(s, 1, std::min(w.topk, s.value().numel())), {1, 1}));
  for (Var s : batch.normal_scores)
    cls.push_back(ad::reshape(mil_cls_loss(s, 0, std::min(w.topk, s.value().numel())), {1, 1}));
  Var cls_mean = ad::scale(ad::sum(ad::concat_rows(cls)), 1.0 / static_cast<double>(cls.size()));

  Var total = ad::add(rank, cls_mean);
  out.parts.mil_rank = rank.value().item();
  out.parts.mil_cls = cls_mean.value().item();

  if (batch.real_normal_mean && batch.pseudo_normal_mean) {
    Var da = domain_alignment_loss(*batch.real_normal_mean, *batch.pseudo_normal_mean, vars.disc, w,
                                   opts.reverse_gradients);
    out.parts.da = da.value().item();
    total = ad::add(total, ad::scale(da, w.lambda1));
  } else {
    out.da_skipped = true;
  }

  Var z = ad::concat_rows(batch.abnormal_embeddings);
  if (opts.frozen_targets) {
    out.targets = *opts.frozen_targets;
  } else {
    auto [q, u] = model::assignment_values(z.value(), vars.mem_abnormal.value(), tau);
    out.targets = usage_targets(q, z.value());
  }
  Var upd = usage_update_loss(vars.mem_abnormal, out.targets, w);
  out.parts.upd = upd.value().item();
  total = ad::add(total, ad::scale(upd, w.lambda2));

  out.total = total;
  out.parts.total = total.value().item();
  return out;
}

}  // namespace pavad::loss
